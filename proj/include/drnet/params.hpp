#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "drnet/tape.hpp"

namespace drnet {

// Owns the trainable parameter tensors (theta). Parameters live outside the
// tape; each optimization step binds the ones it touches as leaf nodes and
// reads their gradients back after backward(). Binding the same parameter
// twice within a step returns the shared leaf, so gradients accumulate.
class ParamStore {
public:
    int add(TensorValue init) {
        entries_.push_back(Entry{std::move(init), -1});
        return static_cast<int>(entries_.size()) - 1;
    }

    std::size_t size() const { return entries_.size(); }

    TensorValue& value(int id) { return entries_[check(id)].value; }
    const TensorValue& value(int id) const { return entries_[check(id)].value; }

    Value bind(Tape& tape, int id) {
        Entry& e = entries_[check(id)];
        if (e.bound_index >= 0) {
            auto& entry = bound_[static_cast<std::size_t>(e.bound_index)];
            // Re-bind in place if the old leaf belongs to a dead tape.
            if (entry.second.tape() != &tape) entry.second = tape.leaf(e.value);
            return entry.second;
        }
        Value leaf = tape.leaf(e.value);
        e.bound_index = static_cast<int>(bound_.size());
        bound_.emplace_back(id, leaf);
        return leaf;
    }

    const std::vector<std::pair<int, Value>>& bound() const { return bound_; }

    void clear_bindings() {
        for (auto& [id, leaf] : bound_) entries_[static_cast<std::size_t>(id)].bound_index = -1;
        bound_.clear();
    }

private:
    struct Entry {
        TensorValue value;
        int bound_index;
    };

    std::size_t check(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= entries_.size())
            throw std::out_of_range("ParamStore: bad parameter id " + std::to_string(id));
        return static_cast<std::size_t>(id);
    }

    std::vector<Entry> entries_;
    std::vector<std::pair<int, Value>> bound_;
};

}  // namespace drnet
