#pragma once

#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace drnet {

// Dense row-major tensor of doubles, rank 0..2. Rank 0 is a scalar with one
// element. This is all the differentiable terms and the 3-layer encoder need.
struct TensorValue {
    std::vector<int> shape;
    std::vector<double> data;

    TensorValue() : data(1, 0.0) {}

    static TensorValue scalar(double v) {
        TensorValue t;
        t.data[0] = v;
        return t;
    }

    static TensorValue zeros(std::vector<int> shape) {
        TensorValue t;
        t.shape = std::move(shape);
        t.data.assign(t.numel_from_shape(), 0.0);
        return t;
    }

    static TensorValue vector(std::vector<double> values) {
        TensorValue t;
        t.shape = {static_cast<int>(values.size())};
        t.data = std::move(values);
        return t;
    }

    static TensorValue matrix(int rows, int cols, std::vector<double> values) {
        TensorValue t;
        t.shape = {rows, cols};
        t.data = std::move(values);
        if (static_cast<std::size_t>(rows) * cols != t.data.size())
            throw std::invalid_argument("TensorValue::matrix: data length " +
                                        std::to_string(t.data.size()) + " != " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }

    std::size_t numel() const { return data.size(); }

    bool is_scalar() const { return data.size() == 1 && shape.size() <= 1; }

    double item() const {
        if (data.size() != 1)
            throw std::logic_error("TensorValue::item on non-scalar of size " +
                                   std::to_string(data.size()));
        return data[0];
    }

    double operator[](std::size_t i) const { return data[i]; }
    double& operator[](std::size_t i) { return data[i]; }

    // (rows, cols) for rank 2; vectors are treated as single columns.
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    std::size_t numel_from_shape() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << 'x';
            os << shape[i];
        }
        os << ']';
        return os.str();
    }

    bool same_shape(const TensorValue& other) const { return shape == other.shape; }
};

}  // namespace drnet
