#pragma once

#include <functional>

#include "estn/ops.hpp"

namespace estn {

// Central-difference check of reverse-mode gradients. Returns the max
// elementwise relative error with denominator max(|analytic|, |numeric|, 1e-8).
// Meant to run on the double instantiation; callers pass eps ~ 1e-5.
template <typename T>
T finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x0, T eps) {
    Tensor<T> x = x0.clone();
    x.set_requires_grad(true);
    Tensor<T> analytic;
    {
        GradTape<T> tape;
        Tensor<T> loss = f(x);
        if (loss.size() != 1) throw ShapeError("finite_diff_check: f must be scalar-valued");
        tape.backward(loss);
        analytic = x.grad();
    }
    T max_err = 0;
    Tensor<T> probe = x0.clone();
    for (std::int64_t i = 0; i < probe.size(); ++i) {
        const T saved = probe.data()[i];
        probe.data()[i] = saved + eps;
        const T up = f(probe).item();
        probe.data()[i] = saved - eps;
        const T down = f(probe).item();
        probe.data()[i] = saved;
        const T numeric = (up - down) / (2 * eps);
        const T a = analytic.data()[i];
        const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
        max_err = std::max(max_err, std::abs(a - numeric) / denom);
    }
    return max_err;
}

}  // namespace estn
