#pragma once

#include <functional>
#include <span>
#include <vector>

#include "drnet/tape.hpp"

namespace drnet {

// Finite-difference oracle: rebuilds the scalar under test from a flat
// parameter vector, so it stays independent of whatever graph the
// implementation records. builder must be deterministic.
using ScalarBuilder = std::function<Value(Tape&, Value params)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    int worst_coordinate = -1;
};

inline GradCheckResult grad_check_detail(const ScalarBuilder& builder,
                                         std::vector<double> point,
                                         double step = 1e-5) {
    Tape tape;
    Value params = tape.leaf(TensorValue::vector(point));
    Value root = builder(tape, params);
    tape.backward(root);
    const TensorValue analytic = tape.grad(params);

    const auto eval = [&](const std::vector<double>& x) {
        Tape t;
        Value p = t.leaf(TensorValue::vector(x));
        return t.item(builder(t, p));
    };

    GradCheckResult result;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + step;
        const double fp = eval(point);
        point[i] = saved - step;
        const double fm = eval(point);
        point[i] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic.data[i] - numeric) /
                           std::max(1.0, std::abs(numeric));
        if (err > result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_coordinate = static_cast<int>(i);
        }
    }
    return result;
}

inline double grad_check(const ScalarBuilder& builder, const std::vector<double>& point,
                         double step = 1e-5) {
    return grad_check_detail(builder, point, step).max_rel_error;
}

}  // namespace drnet
