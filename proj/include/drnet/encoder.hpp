#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "drnet/params.hpp"
#include "drnet/rng.hpp"
#include "drnet/tape.hpp"

// Maps instance features to named latent slots. Two modes behind one
// interface: free logits (one trainable vector per point per slot, the
// default) and a 3-layer fully-connected network whose output is partitioned
// into the slots. Task drivers never see the difference.

namespace drnet {

enum class EncoderMode : std::uint8_t { free_logits, mlp };

struct LatentSlot {
    std::string name;
    int size = 0;
};

struct LatentLayout {
    std::vector<LatentSlot> slots;

    int total() const {
        int n = 0;
        for (const LatentSlot& s : slots) n += s.size;
        return n;
    }
};

class Encoder {
public:
    static Encoder free_logits(LatentLayout layout, int num_points, double init_stddev = 0.5) {
        Encoder e;
        e.mode_ = EncoderMode::free_logits;
        e.layout_ = std::move(layout);
        e.num_points_ = num_points;
        e.init_stddev_ = init_stddev;
        return e;
    }

    static Encoder mlp(LatentLayout layout, int input_dim, int hidden_width = 64,
                       double leaky_slope = 0.01) {
        Encoder e;
        e.mode_ = EncoderMode::mlp;
        e.layout_ = std::move(layout);
        e.input_dim_ = input_dim;
        e.hidden_width_ = hidden_width;
        e.leaky_slope_ = leaky_slope;
        return e;
    }

    EncoderMode mode() const { return mode_; }
    const LatentLayout& layout() const { return layout_; }

    // Allocates parameter slots once; init() re-randomizes them per attempt.
    void register_params(ParamStore& store) {
        param_ids_.clear();
        if (mode_ == EncoderMode::free_logits) {
            for (int p = 0; p < num_points_; ++p)
                for (const LatentSlot& slot : layout_.slots)
                    param_ids_.push_back(store.add(TensorValue::zeros({slot.size})));
        } else {
            const int out = layout_.total();
            param_ids_.push_back(store.add(TensorValue::zeros({hidden_width_, input_dim_})));
            param_ids_.push_back(store.add(TensorValue::zeros({hidden_width_})));
            param_ids_.push_back(store.add(TensorValue::zeros({hidden_width_, hidden_width_})));
            param_ids_.push_back(store.add(TensorValue::zeros({hidden_width_})));
            param_ids_.push_back(store.add(TensorValue::zeros({out, hidden_width_})));
            param_ids_.push_back(store.add(TensorValue::zeros({out})));
        }
    }

    void init(ParamStore& store, Rng& rng) const {
        if (mode_ == EncoderMode::free_logits) {
            for (int id : param_ids_)
                for (double& x : store.value(id).data) x = rng.normal(0.0, init_stddev_);
        } else {
            for (std::size_t layer = 0; layer < param_ids_.size(); layer += 2) {
                TensorValue& w = store.value(param_ids_[layer]);
                TensorValue& b = store.value(param_ids_[layer + 1]);
                const double bound = 1.0 / std::sqrt(static_cast<double>(w.dim(1)));
                for (double& x : w.data) x = rng.uniform(-bound, bound);
                for (double& x : b.data) x = rng.uniform(-bound, bound);
            }
        }
    }

    // Slot values for one data point, differentiable w.r.t. theta. Free-logit
    // mode returns the stored vectors unchanged; MLP mode runs the network on
    // the features and slices its output.
    std::vector<Value> encode(Tape& tape, ParamStore& store, int point,
                              const TensorValue& features) const {
        return encode_impl(tape, &store, nullptr, point, features);
    }

    // Same forward pass with parameters entering as constants; used by
    // decoders, where no gradient is wanted and the store stays untouched.
    std::vector<Value> encode_detached(Tape& tape, const ParamStore& store, int point,
                                       const TensorValue& features) const {
        return encode_impl(tape, nullptr, &store, point, features);
    }

    const std::vector<int>& param_ids() const { return param_ids_; }

    // Raw stored logits for a slot (free-logit mode only); used by decoders.
    const TensorValue& stored(const ParamStore& store, int point, int slot) const {
        if (mode_ != EncoderMode::free_logits)
            throw std::logic_error("Encoder::stored requires free-logit mode");
        return store.value(
            param_ids_[static_cast<std::size_t>(point) * layout_.slots.size() +
                       static_cast<std::size_t>(slot)]);
    }

private:
    std::vector<Value> encode_impl(Tape& tape, ParamStore* bind_store,
                                   const ParamStore* const_store, int point,
                                   const TensorValue& features) const {
        const auto param = [&](std::size_t slot_index) {
            const int id = param_ids_[slot_index];
            return bind_store ? bind_store->bind(tape, id)
                              : tape.constant(const_store->value(id));
        };
        std::vector<Value> out;
        out.reserve(layout_.slots.size());
        if (mode_ == EncoderMode::free_logits) {
            if (point < 0 || point >= num_points_)
                throw std::out_of_range("Encoder::encode: point " + std::to_string(point) +
                                        " outside [0, " + std::to_string(num_points_) + ")");
            const std::size_t base = static_cast<std::size_t>(point) * layout_.slots.size();
            for (std::size_t s = 0; s < layout_.slots.size(); ++s) out.push_back(param(base + s));
            return out;
        }
        if (static_cast<int>(features.numel()) != input_dim_)
            throw std::invalid_argument("Encoder::encode: feature length " +
                                        std::to_string(features.numel()) + " != input dim " +
                                        std::to_string(input_dim_));
        Value x = tape.constant(features);
        Value h1 = tape.leaky_relu(tape.matmul(param(0), x) + param(1), leaky_slope_);
        Value h2 = tape.leaky_relu(tape.matmul(param(2), h1) + param(3), leaky_slope_);
        Value logits = tape.matmul(param(4), h2) + param(5);
        out.reserve(layout_.slots.size());
        int offset = 0;
        for (const LatentSlot& slot : layout_.slots) {
            out.push_back(tape.slice(logits, offset, slot.size));
            offset += slot.size;
        }
        return out;
    }

    EncoderMode mode_ = EncoderMode::free_logits;
    LatentLayout layout_;
    int num_points_ = 0;
    double init_stddev_ = 0.5;
    int input_dim_ = 0;
    int hidden_width_ = 64;
    double leaky_slope_ = 0.01;
    std::vector<int> param_ids_;
};

}  // namespace drnet
