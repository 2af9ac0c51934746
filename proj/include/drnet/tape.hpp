#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drnet/tensor.hpp"

// Reverse-mode autodiff over a flat tape. Forward values are computed eagerly
// at record time; backward() runs one reverse sweep. Node payloads live in
// pooled arenas so reset() + re-record per optimization step costs no
// allocations once the pools are warm.

namespace drnet {

// Floor for log inputs so entropy terms stay finite at collapsed
// distributions: log(max(x, kLogFloor)).
inline constexpr double kLogFloor = 1e-12;

enum class Op : std::uint8_t {
    constant,
    leaf,
    add,
    sub,
    mul,
    div,
    add_n,
    matmul,
    neg,
    exp,
    log,
    softmax,
    sigmoid,
    leaky_relu,
    relu,
    sum,
    mean,
    abs,
    square,
    slice,
    reshape,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::constant: return "constant";
        case Op::leaf: return "leaf";
        case Op::add: return "add";
        case Op::sub: return "subtract";
        case Op::mul: return "multiply";
        case Op::div: return "divide";
        case Op::add_n: return "add_n";
        case Op::matmul: return "matmul";
        case Op::neg: return "negate";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::softmax: return "softmax";
        case Op::sigmoid: return "sigmoid";
        case Op::leaky_relu: return "leaky_relu";
        case Op::relu: return "relu";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::abs: return "abs";
        case Op::square: return "square";
        case Op::slice: return "slice";
        case Op::reshape: return "reshape";
    }
    return "?";
}

class Tape;

// Cheap handle to a tape node.
class Value {
public:
    Value() = default;
    Value(Tape* tape, int index) : tape_(tape), index_(index) {}

    bool valid() const { return tape_ != nullptr; }
    int index() const { return index_; }
    Tape* tape() const { return tape_; }

    inline const TensorValue val() const;   // copy of the forward value
    inline double item() const;             // scalar forward value
    inline std::span<const double> data() const;

private:
    Tape* tape_ = nullptr;
    int index_ = -1;
};

class Tape {
    struct Node {
        Op op;
        std::uint8_t rank;
        int d0, d1;           // shape; d0=d1=1 for scalars
        int p0, p1;           // binary/unary parents, -1 if unused
        int parent_off;       // add_n parents in parent_pool_
        int parent_cnt;
        int val_off;          // into val_pool_ / grad_pool_
        double alpha;         // leaky slope / slice offset
    };

public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- recording -------------------------------------------------------

    Value constant(const TensorValue& v) { return push_nullary(Op::constant, v); }
    Value constant(double v) { return push_nullary(Op::constant, TensorValue::scalar(v)); }
    Value leaf(const TensorValue& v) { return push_nullary(Op::leaf, v); }

    Value add(Value a, Value b) { return push_binary(Op::add, a, b); }
    Value sub(Value a, Value b) { return push_binary(Op::sub, a, b); }
    Value mul(Value a, Value b) { return push_binary(Op::mul, a, b); }
    Value div(Value a, Value b) { return push_binary(Op::div, a, b); }

    Value add_n(std::span<const Value> xs) {
        if (xs.empty()) throw std::invalid_argument("op add_n: empty operand list");
        const Node& first = node(xs[0]);
        for (const Value& x : xs) {
            const Node& n = node(x);
            if (n.d0 != first.d0 || n.d1 != first.d1 || n.rank != first.rank)
                throw std::invalid_argument(std::string("op add_n: shape mismatch ") +
                                            shape_str(first) + " vs " + shape_str(n));
        }
        int off = static_cast<int>(parent_pool_.size());
        for (const Value& x : xs) parent_pool_.push_back(x.index());
        Node nn = blank(Op::add_n, first.rank, first.d0, first.d1);
        nn.parent_off = off;
        nn.parent_cnt = static_cast<int>(xs.size());
        int idx = commit(nn);
        auto out = val_span(idx);
        std::span<const double> acc = val_span(xs[0].index());
        std::copy(acc.begin(), acc.end(), out.begin());
        for (std::size_t k = 1; k < xs.size(); ++k) {
            auto src = val_span(xs[k].index());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += src[i];
        }
        return Value(this, idx);
    }

    // A[m,k] * B[k,n] -> [m,n], or A[m,k] * b[k] -> [m].
    Value matmul(Value a, Value b) {
        const Node& na = node(a);
        const Node& nb = node(b);
        if (na.rank != 2)
            throw std::invalid_argument(std::string("op matmul: left operand must be rank 2, got ") +
                                        shape_str(na));
        const bool vec = (nb.rank == 1);
        if (!(vec || nb.rank == 2) || nb.d0 != na.d1)
            throw std::invalid_argument(std::string("op matmul: inner dims mismatch ") +
                                        shape_str(na) + " vs " + shape_str(nb));
        const int m = na.d0, k = na.d1, n = vec ? 1 : nb.d1;
        Node nn = vec ? blank(Op::matmul, 1, m, 1) : blank(Op::matmul, 2, m, n);
        nn.p0 = a.index();
        nn.p1 = b.index();
        int idx = commit(nn);
        auto va = val_span(a.index());
        auto vb = val_span(b.index());
        auto out = val_span(idx);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int t = 0; t < k; ++t) s += va[i * k + t] * vb[t * n + j];
                out[i * n + j] = s;
            }
        return Value(this, idx);
    }

    Value neg(Value x) {
        return push_map(Op::neg, x, [](double v, double) { return -v; });
    }
    Value exp(Value x) {
        return push_map(Op::exp, x, [](double v, double) { return std::exp(v); });
    }
    // log(max(x, kLogFloor)); gradient is zero below the floor.
    Value log(Value x) {
        return push_map(Op::log, x, [](double v, double) { return std::log(v < kLogFloor ? kLogFloor : v); });
    }
    Value sigmoid(Value x) {
        return push_map(Op::sigmoid, x, [](double v, double) {
            return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        });
    }
    Value leaky_relu(Value x, double slope = 0.01) {
        return push_map(Op::leaky_relu, x, [](double v, double a) { return v > 0 ? v : a * v; }, slope);
    }
    Value relu(Value x) {
        return push_map(Op::relu, x, [](double v, double) { return v > 0 ? v : 0.0; });
    }
    Value abs(Value x) {
        return push_map(Op::abs, x, [](double v, double) { return std::abs(v); });
    }
    Value square(Value x) {
        return push_map(Op::square, x, [](double v, double) { return v * v; });
    }

    // Softmax over the last axis (rows of a matrix, or a whole vector).
    Value softmax(Value x) {
        const Node& nx = node(x);
        if (nx.rank == 0)
            throw std::invalid_argument("op softmax: scalar operand");
        const int rows = nx.rank == 2 ? nx.d0 : 1;
        const int cols = nx.rank == 2 ? nx.d1 : nx.d0;
        Node nn = blank(Op::softmax, nx.rank, nx.d0, nx.d1);
        nn.p0 = x.index();
        int idx = commit(nn);
        auto in = val_span(x.index());
        auto out = val_span(idx);
        for (int r = 0; r < rows; ++r) {
            const double* src = in.data() + static_cast<std::size_t>(r) * cols;
            double* dst = out.data() + static_cast<std::size_t>(r) * cols;
            double mx = src[0];
            for (int c = 1; c < cols; ++c) mx = std::max(mx, src[c]);
            double z = 0.0;
            for (int c = 0; c < cols; ++c) {
                dst[c] = std::exp(src[c] - mx);
                z += dst[c];
            }
            for (int c = 0; c < cols; ++c) dst[c] /= z;
        }
        return Value(this, idx);
    }

    Value sum(Value x) { return push_reduce(Op::sum, x); }
    Value mean(Value x) { return push_reduce(Op::mean, x); }

    // Same elements, new shape; gradient passes straight through.
    Value reshape(Value x, int rows, int cols) {
        const Node& nx = node(x);
        if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != numel(nx))
            throw std::invalid_argument("op reshape: cannot view " + shape_str(nx) + " as [" +
                                        std::to_string(rows) + "x" + std::to_string(cols) + "]");
        Node nn = blank(Op::reshape, 2, rows, cols);
        nn.p0 = x.index();
        int idx = commit(nn);
        auto in = val_span(x.index());
        auto out = val_span(idx);
        std::copy(in.begin(), in.end(), out.begin());
        return Value(this, idx);
    }

    Value slice(Value x, int offset, int len) {
        const Node& nx = node(x);
        if (nx.rank != 1)
            throw std::invalid_argument(std::string("op slice: rank-1 operand required, got ") +
                                        shape_str(nx));
        if (offset < 0 || len <= 0 || offset + len > nx.d0)
            throw std::invalid_argument("op slice: range [" + std::to_string(offset) + ", " +
                                        std::to_string(offset + len) + ") outside [0, " +
                                        std::to_string(nx.d0) + ")");
        Node nn = blank(Op::slice, 1, len, 1);
        nn.p0 = x.index();
        nn.alpha = offset;
        int idx = commit(nn);
        auto in = val_span(x.index());
        auto out = val_span(idx);
        for (int i = 0; i < len; ++i) out[i] = in[offset + i];
        return Value(this, idx);
    }

    // ---- inspection ------------------------------------------------------

    std::size_t size() const { return nodes_.size(); }

    TensorValue value(Value v) const {
        const Node& n = node(v);
        TensorValue t;
        t.shape = shape_of(n);
        auto s = val_span(v.index());
        t.data.assign(s.begin(), s.end());
        return t;
    }

    double item(Value v) const {
        const Node& n = node(v);
        if (numel(n) != 1) throw std::logic_error("Tape::item: non-scalar node");
        return val_pool_[static_cast<std::size_t>(n.val_off)];
    }

    std::span<const double> values(Value v) const { return val_span(v.index()); }

    TensorValue grad(Value v) const {
        const Node& n = node(v);
        TensorValue t;
        t.shape = shape_of(n);
        if (grad_pool_.size() != val_pool_.size())
            throw std::logic_error("Tape::grad before backward()");
        auto s = grad_span(v.index());
        t.data.assign(s.begin(), s.end());
        return t;
    }

    std::span<const double> grads(Value v) const {
        if (grad_pool_.size() != val_pool_.size())
            throw std::logic_error("Tape::grads before backward()");
        return grad_span(v.index());
    }

    bool all_finite(Value v) const {
        for (double x : val_span(v.index()))
            if (!std::isfinite(x)) return false;
        return true;
    }

    // ---- backward --------------------------------------------------------

    void backward(Value root) {
        const Node& r = node(root);
        if (numel(r) != 1)
            throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(r));
        grad_pool_.assign(val_pool_.size(), 0.0);
        grad_pool_[static_cast<std::size_t>(r.val_off)] = 1.0;
        for (int i = root.index(); i >= 0; --i) backprop_node(i);
    }

    // Drops all nodes; pool capacity is retained.
    void reset() {
        nodes_.clear();
        val_pool_.clear();
        grad_pool_.clear();
        parent_pool_.clear();
    }

private:
    const Node& node(Value v) const {
        if (v.tape() != this) throw std::logic_error("Value belongs to a different tape");
        return nodes_[static_cast<std::size_t>(v.index())];
    }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

    static std::size_t numel(const Node& n) {
        return static_cast<std::size_t>(n.d0) * static_cast<std::size_t>(n.d1);
    }
    static std::vector<int> shape_of(const Node& n) {
        switch (n.rank) {
            case 0: return {};
            case 1: return {n.d0};
            default: return {n.d0, n.d1};
        }
    }
    static std::string shape_str(const Node& n) {
        if (n.rank == 0) return "[scalar]";
        if (n.rank == 1) return "[" + std::to_string(n.d0) + "]";
        return "[" + std::to_string(n.d0) + "x" + std::to_string(n.d1) + "]";
    }

    std::span<double> val_span(int i) {
        const Node& n = node(i);
        return {val_pool_.data() + n.val_off, numel(n)};
    }
    std::span<const double> val_span(int i) const {
        const Node& n = node(i);
        return {val_pool_.data() + n.val_off, numel(n)};
    }
    std::span<double> grad_span(int i) {
        const Node& n = node(i);
        return {grad_pool_.data() + n.val_off, numel(n)};
    }
    std::span<const double> grad_span(int i) const {
        const Node& n = node(i);
        return {grad_pool_.data() + n.val_off, numel(n)};
    }

    Node blank(Op op, std::uint8_t rank, int d0, int d1) {
        Node n;
        n.op = op;
        n.rank = rank;
        n.d0 = d0;
        n.d1 = d1;
        n.p0 = n.p1 = -1;
        n.parent_off = n.parent_cnt = 0;
        n.val_off = 0;
        n.alpha = 0.0;
        return n;
    }

    int commit(Node n) {
        n.val_off = static_cast<int>(val_pool_.size());
        val_pool_.resize(val_pool_.size() + numel(n), 0.0);
        nodes_.push_back(n);
        return static_cast<int>(nodes_.size()) - 1;
    }

    Value push_nullary(Op op, const TensorValue& v) {
        if (v.numel() != v.numel_from_shape())
            throw std::invalid_argument(std::string("op ") + op_name(op) + ": data length " +
                                        std::to_string(v.numel()) + " != shape " + v.shape_str());
        std::uint8_t rank = static_cast<std::uint8_t>(v.rank());
        int d0 = rank >= 1 ? v.shape[0] : 1;
        int d1 = rank == 2 ? v.shape[1] : 1;
        if (rank > 2) throw std::invalid_argument("tensors of rank > 2 are not supported");
        int idx = commit(blank(op, rank, d0, d1));
        auto out = val_span(idx);
        std::copy(v.data.begin(), v.data.end(), out.begin());
        return Value(this, idx);
    }

    template <typename F>
    Value push_map(Op op, Value x, F&& f, double alpha = 0.0) {
        const Node& nx = node(x);
        Node nn = blank(op, nx.rank, nx.d0, nx.d1);
        nn.p0 = x.index();
        nn.alpha = alpha;
        int idx = commit(nn);
        auto in = val_span(x.index());
        auto out = val_span(idx);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i], alpha);
        return Value(this, idx);
    }

    Value push_reduce(Op op, Value x) {
        Node nn = blank(op, 0, 1, 1);
        nn.p0 = x.index();
        int idx = commit(nn);
        auto in = val_span(x.index());
        double s = 0.0;
        for (double v : in) s += v;
        if (op == Op::mean) s /= static_cast<double>(in.size());
        val_span(idx)[0] = s;
        return Value(this, idx);
    }

    // Elementwise binary with scalar broadcast on either side.
    Value push_binary(Op op, Value a, Value b) {
        const Node& na = node(a);
        const Node& nb = node(b);
        const bool a_scalar = numel(na) == 1;
        const bool b_scalar = numel(nb) == 1;
        if (!a_scalar && !b_scalar &&
            (na.d0 != nb.d0 || na.d1 != nb.d1 || na.rank != nb.rank))
            throw std::invalid_argument(std::string("op ") + op_name(op) + ": shape mismatch " +
                                        shape_str(na) + " vs " + shape_str(nb));
        const Node& shape_src = a_scalar ? nb : na;
        Node nn = blank(op, shape_src.rank, shape_src.d0, shape_src.d1);
        nn.p0 = a.index();
        nn.p1 = b.index();
        int idx = commit(nn);
        auto va = val_span(a.index());
        auto vb = val_span(b.index());
        auto out = val_span(idx);
        const std::size_t n = out.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double x = va[a_scalar ? 0 : i];
            const double y = vb[b_scalar ? 0 : i];
            switch (op) {
                case Op::add: out[i] = x + y; break;
                case Op::sub: out[i] = x - y; break;
                case Op::mul: out[i] = x * y; break;
                case Op::div: out[i] = x / y; break;
                default: throw std::logic_error("push_binary: bad op");
            }
        }
        return Value(this, idx);
    }

    void backprop_node(int i) {
        const Node& n = node(i);
        auto g = grad_span(i);
        switch (n.op) {
            case Op::constant:
            case Op::leaf:
                return;
            case Op::add:
            case Op::sub:
            case Op::mul:
            case Op::div: {
                auto va = val_span(n.p0);
                auto vb = val_span(n.p1);
                auto ga = grad_span(n.p0);
                auto gb = grad_span(n.p1);
                const bool a_scalar = va.size() == 1;
                const bool b_scalar = vb.size() == 1;
                for (std::size_t k = 0; k < g.size(); ++k) {
                    const double x = va[a_scalar ? 0 : k];
                    const double y = vb[b_scalar ? 0 : k];
                    double da = 0.0, db = 0.0;
                    switch (n.op) {
                        case Op::add: da = g[k]; db = g[k]; break;
                        case Op::sub: da = g[k]; db = -g[k]; break;
                        case Op::mul: da = g[k] * y; db = g[k] * x; break;
                        case Op::div: da = g[k] / y; db = -g[k] * x / (y * y); break;
                        default: break;
                    }
                    ga[a_scalar ? 0 : k] += da;
                    gb[b_scalar ? 0 : k] += db;
                }
                return;
            }
            case Op::add_n: {
                for (int p = 0; p < n.parent_cnt; ++p) {
                    auto gp = grad_span(parent_pool_[static_cast<std::size_t>(n.parent_off + p)]);
                    for (std::size_t k = 0; k < g.size(); ++k) gp[k] += g[k];
                }
                return;
            }
            case Op::matmul: {
                const Node& na = node(n.p0);
                const Node& nb = node(n.p1);
                auto va = val_span(n.p0);
                auto vb = val_span(n.p1);
                auto ga = grad_span(n.p0);
                auto gb = grad_span(n.p1);
                const int m = na.d0, k = na.d1;
                const int cols = nb.rank == 1 ? 1 : nb.d1;
                // gA += g * B^T ; gB += A^T * g
                for (int r = 0; r < m; ++r)
                    for (int t = 0; t < k; ++t) {
                        double s = 0.0;
                        for (int c = 0; c < cols; ++c) s += g[r * cols + c] * vb[t * cols + c];
                        ga[r * k + t] += s;
                    }
                for (int t = 0; t < k; ++t)
                    for (int c = 0; c < cols; ++c) {
                        double s = 0.0;
                        for (int r = 0; r < m; ++r) s += va[r * k + t] * g[r * cols + c];
                        gb[t * cols + c] += s;
                    }
                return;
            }
            case Op::neg: {
                auto gx = grad_span(n.p0);
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] -= g[k];
                return;
            }
            case Op::exp: {
                auto gx = grad_span(n.p0);
                auto y = val_span(i);
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * y[k];
                return;
            }
            case Op::log: {
                auto gx = grad_span(n.p0);
                auto x = val_span(n.p0);
                for (std::size_t k = 0; k < g.size(); ++k)
                    if (x[k] >= kLogFloor) gx[k] += g[k] / x[k];
                return;
            }
            case Op::softmax: {
                auto gx = grad_span(n.p0);
                auto y = val_span(i);
                const int rows = n.rank == 2 ? n.d0 : 1;
                const int cols = n.rank == 2 ? n.d1 : n.d0;
                for (int r = 0; r < rows; ++r) {
                    const double* yr = y.data() + static_cast<std::size_t>(r) * cols;
                    const double* gr = g.data() + static_cast<std::size_t>(r) * cols;
                    double dot = 0.0;
                    for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                    double* gxr = gx.data() + static_cast<std::size_t>(r) * cols;
                    for (int c = 0; c < cols; ++c) gxr[c] += yr[c] * (gr[c] - dot);
                }
                return;
            }
            case Op::sigmoid: {
                auto gx = grad_span(n.p0);
                auto y = val_span(i);
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * y[k] * (1.0 - y[k]);
                return;
            }
            case Op::leaky_relu: {
                auto gx = grad_span(n.p0);
                auto x = val_span(n.p0);
                for (std::size_t k = 0; k < g.size(); ++k)
                    gx[k] += g[k] * (x[k] > 0 ? 1.0 : n.alpha);
                return;
            }
            case Op::relu: {
                auto gx = grad_span(n.p0);
                auto x = val_span(n.p0);
                for (std::size_t k = 0; k < g.size(); ++k)
                    if (x[k] > 0) gx[k] += g[k];
                return;
            }
            case Op::sum: {
                auto gx = grad_span(n.p0);
                const double gv = g[0];
                for (double& v : gx) v += gv;
                return;
            }
            case Op::mean: {
                auto gx = grad_span(n.p0);
                const double gv = g[0] / static_cast<double>(gx.size());
                for (double& v : gx) v += gv;
                return;
            }
            case Op::abs: {
                auto gx = grad_span(n.p0);
                auto x = val_span(n.p0);
                for (std::size_t k = 0; k < g.size(); ++k) {
                    if (x[k] > 0)
                        gx[k] += g[k];
                    else if (x[k] < 0)
                        gx[k] -= g[k];
                }
                return;
            }
            case Op::square: {
                auto gx = grad_span(n.p0);
                auto x = val_span(n.p0);
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] += 2.0 * g[k] * x[k];
                return;
            }
            case Op::slice: {
                auto gx = grad_span(n.p0);
                const int offset = static_cast<int>(n.alpha);
                for (std::size_t k = 0; k < g.size(); ++k) gx[offset + k] += g[k];
                return;
            }
            case Op::reshape: {
                auto gx = grad_span(n.p0);
                for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
                return;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<double> val_pool_;
    std::vector<double> grad_pool_;
    std::vector<int> parent_pool_;
};

inline const TensorValue Value::val() const { return tape_->value(*this); }
inline double Value::item() const { return tape_->item(*this); }
inline std::span<const double> Value::data() const { return tape_->values(*this); }

// Arithmetic sugar; scalars are lifted to constants on the same tape.
inline Value operator+(Value a, Value b) { return a.tape()->add(a, b); }
inline Value operator-(Value a, Value b) { return a.tape()->sub(a, b); }
inline Value operator*(Value a, Value b) { return a.tape()->mul(a, b); }
inline Value operator/(Value a, Value b) { return a.tape()->div(a, b); }
inline Value operator+(Value a, double c) { return a.tape()->add(a, a.tape()->constant(c)); }
inline Value operator+(double c, Value a) { return a.tape()->add(a.tape()->constant(c), a); }
inline Value operator-(Value a, double c) { return a.tape()->sub(a, a.tape()->constant(c)); }
inline Value operator-(double c, Value a) { return a.tape()->sub(a.tape()->constant(c), a); }
inline Value operator*(Value a, double c) { return a.tape()->mul(a, a.tape()->constant(c)); }
inline Value operator*(double c, Value a) { return a.tape()->mul(a.tape()->constant(c), a); }
inline Value operator/(Value a, double c) { return a.tape()->div(a, a.tape()->constant(c)); }
inline Value operator/(double c, Value a) { return a.tape()->div(a.tape()->constant(c), a); }
inline Value operator-(Value a) { return a.tape()->neg(a); }

}  // namespace drnet
