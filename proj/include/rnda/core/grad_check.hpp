// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/tape.hpp>

#include <cmath>
#include <functional>
#include <vector>

namespace rnda::ad {

/// Builds a scalar-valued graph of one leaf on the given tape.
using ScalarFn = std::function<Var(Tape &, Var)>;

struct GradCheckResult {
    double max_error = 0.0;     ///< max_i |analytic_i - numeric_i| / max(1, |analytic_i|)
    std::size_t worst_index = 0;
    Tensor analytic;
    Tensor numeric;
};

/// Compares the tape gradient at `point` with central differences of step
/// `step`. Only coordinates listed in `coords` are probed (all when empty).
/// Central differences are taken by replaying the recorded graph.
inline GradCheckResult grad_check_detailed(const ScalarFn &f, const Tensor &point, double step,
                                           const std::vector<std::size_t> &coords = {}) {
    Tape tape;
    Var x = tape.leaf(point);
    Var y = f(tape, x);
    if (y.value().size() != 1) throw Error("grad_check: function must be scalar-valued");
    if (!y.value().all_finite()) throw NumericError("grad_check: non-finite function value");
    tape.backward(y);
    GradCheckResult res;
    res.analytic = tape.grad(x);
    res.numeric = Tensor::zeros_like(point);

    std::vector<std::size_t> idx = coords;
    if (idx.empty())
        for (std::size_t i = 0; i < point.size(); ++i) idx.push_back(i);

    auto eval_at = [&](const Tensor &p) {
        tape.set_input(x, p);
        tape.eval();
        double v = tape.value(y).item();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
        return v;
    };
    for (std::size_t i : idx) {
        Tensor p = point;
        p[i] = point[i] + step;
        double fp = eval_at(p);
        p[i] = point[i] - step;
        double fm = eval_at(p);
        double num = (fp - fm) / (2.0 * step);
        res.numeric[i] = num;
        double a = res.analytic[i];
        double err = std::abs(a - num) / std::max(1.0, std::abs(a));
        if (err > res.max_error || (err == res.max_error && i == idx.front())) {
            res.max_error = err;
            res.worst_index = i;
        }
    }
    tape.set_input(x, point);
    tape.eval();
    return res;
}

inline double grad_check(const ScalarFn &f, const Tensor &point, double step = 1e-5,
                         const std::vector<std::size_t> &coords = {}) {
    return grad_check_detailed(f, point, step, coords).max_error;
}

} // namespace rnda::ad
