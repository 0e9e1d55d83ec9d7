#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>

#include "estn/parallel.hpp"
#include "estn/tensor.hpp"

namespace estn {

namespace hooks {
// Fault-injection switch for the self-check harness (`check --sabotage`).
inline std::atomic<bool> sabotage_softmax{false};
}  // namespace hooks

namespace detail {

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
    if (!GradTape<T>::current()) return false;
    for (const auto* t : inputs)
        if (t->tracked()) return true;
    return false;
}

// Decomposes a shape around `axis` into [outer, extent, inner] for ops that
// act along a single axis of an arbitrary-rank tensor.
inline void axis_split(const Shape& s, int axis, std::int64_t& outer, std::int64_t& n, std::int64_t& inner) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
    n = s[static_cast<std::size_t>(axis)];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[static_cast<std::size_t>(i)];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> y(a.shape());
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] + b.data()[i];
    detail::check_finite(y, "add");
    if (detail::recording<T>({&a, &b})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool ga = a.tracked(), gb = b.tracked();
        tape->record("add", [a, b, y, ga, gb] {
            const auto& gy = y.cell()->g;
            if (ga) {
                auto& g = detail::accum(a);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
            }
            if (gb) {
                auto& g = detail::accum(b);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> y(a.shape());
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] - b.data()[i];
    detail::check_finite(y, "sub");
    if (detail::recording<T>({&a, &b})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool ga = a.tracked(), gb = b.tracked();
        tape->record("sub", [a, b, y, ga, gb] {
            const auto& gy = y.cell()->g;
            if (ga) {
                auto& g = detail::accum(a);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
            }
            if (gb) {
                auto& g = detail::accum(b);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> y(a.shape());
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] * b.data()[i];
    detail::check_finite(y, "mul");
    if (detail::recording<T>({&a, &b})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool ga = a.tracked(), gb = b.tracked();
        tape->record("mul", [a, b, y, ga, gb] {
            const auto& gy = y.cell()->g;
            if (ga) {
                auto& g = detail::accum(a);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * b.data()[i];
            }
            if (gb) {
                auto& g = detail::accum(b);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * a.data()[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> y(a.shape());
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] * s;
    detail::check_finite(y, "scale");
    if (detail::recording<T>({&a})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("scale", [a, y, s] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(a);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * s;
        });
    }
    return y;
}

template <typename T>
Tensor<T> abs_val(const Tensor<T>& a) {
    Tensor<T> y(a.shape());
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) y.data()[i] = std::abs(a.data()[i]);
    detail::check_finite(y, "abs");
    if (detail::recording<T>({&a})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("abs", [a, y] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(a);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const T x = a.data()[i];
                // subgradient 0 at the kink
                g[i] += gy[i] * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) acc += a.data()[i];
    Tensor<T> y = Tensor<T>::scalar(acc);
    detail::check_finite(y, "sum");
    if (detail::recording<T>({&a})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("sum", [a, y] {
            const T gy = y.cell()->g[0];
            auto& g = detail::accum(a);
            for (auto& v : g) v += gy;
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> y(a.shape());
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    if (detail::recording<T>({&a})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("relu", [a, y] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(a);
            for (std::size_t i = 0; i < gy.size(); ++i)
                if (a.data()[i] > T(0)) g[i] += gy[i];
        });
    }
    return y;
}

namespace detail {
template <typename T>
inline T normal_cdf(T x) {
    return T(0.5) * std::erfc(-x * T(0.70710678118654752440));
}
template <typename T>
inline T normal_pdf(T x) {
    return T(0.39894228040143267794) * std::exp(T(-0.5) * x * x);
}
template <typename T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}
}  // namespace detail

// Exact Gaussian-CDF form x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    Tensor<T> y(a.shape());
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const T x = a.data()[i];
        y.data()[i] = x * detail::normal_cdf(x);
    }
    detail::check_finite(y, "gelu");
    if (detail::recording<T>({&a})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("gelu", [a, y] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(a);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const T x = a.data()[i];
                g[i] += gy[i] * (detail::normal_cdf(x) + x * detail::normal_pdf(x));
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    Tensor<T> y(a.shape());
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) y.data()[i] = detail::sigmoid_scalar(a.data()[i]);
    detail::check_finite(y, "sigmoid");
    if (detail::recording<T>({&a})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("sigmoid", [a, y] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(a);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const T s = y.data()[i];
                g[i] += gy[i] * s * (T(1) - s);
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Softmax over the last axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    require(a.rank() >= 1, "softmax_rows: rank must be >= 1");
    const std::int64_t m = a.extent(a.rank() - 1);
    require(m >= 1, "softmax_rows: empty row");
    const std::int64_t rows = a.size() / m;
    Tensor<T> y(a.shape());
    const bool sabotage = hooks::sabotage_softmax.load(std::memory_order_relaxed);
    parallel_for(rows, 64, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            const T* x = a.data() + r * m;
            T* out = y.data() + r * m;
            T mx = x[0];
            for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, x[j]);
            T s = 0;
            for (std::int64_t j = 0; j < m; ++j) {
                out[j] = std::exp(x[j] - mx);
                s += out[j];
            }
            if (sabotage) s *= T(1.01);
            const T inv = T(1) / s;
            for (std::int64_t j = 0; j < m; ++j) out[j] *= inv;
        }
    });
    detail::check_finite(y, "softmax_rows");
    if (detail::recording<T>({&a})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("softmax_rows", [a, y, rows, m] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(a);
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* p = y.data() + r * m;
                const T* go = gy.data() + r * m;
                T dot = 0;
                for (std::int64_t j = 0; j < m; ++j) dot += go[j] * p[j];
                T* gi = g.data() + r * m;
                for (std::int64_t j = 0; j < m; ++j) gi[j] += p[j] * (go[j] - dot);
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Batched matmul and transpose
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() >= 2 && b.rank() >= 2, "matmul: rank must be >= 2");
    require(a.rank() == b.rank(), "matmul: rank mismatch");
    for (int i = 0; i < a.rank() - 2; ++i)
        require(a.extent(i) == b.extent(i), "matmul: batch extent mismatch at axis " + std::to_string(i));
    const std::int64_t n = a.extent(a.rank() - 2);
    const std::int64_t k = a.extent(a.rank() - 1);
    const std::int64_t k2 = b.extent(b.rank() - 2);
    const std::int64_t m = b.extent(b.rank() - 1);
    require(k == k2, "matmul: inner extents disagree (" + std::to_string(k) + " vs " + std::to_string(k2) + ")");
    Shape os(a.shape());
    os[os.size() - 1] = m;
    Tensor<T> y(os);
    const std::int64_t batch = a.size() / (n * k);
    parallel_for(batch, 1, [&](std::int64_t b0, std::int64_t b1) {
        for (std::int64_t bb = b0; bb < b1; ++bb) {
            const T* pa = a.data() + bb * n * k;
            const T* pb = b.data() + bb * k * m;
            T* py = y.data() + bb * n * m;
            for (std::int64_t i = 0; i < n; ++i) {
                T* row = py + i * m;
                std::fill(row, row + m, T(0));
                for (std::int64_t p = 0; p < k; ++p) {
                    const T av = pa[i * k + p];
                    const T* brow = pb + p * m;
                    for (std::int64_t j = 0; j < m; ++j) row[j] += av * brow[j];
                }
            }
        }
    });
    detail::check_finite(y, "matmul");
    if (detail::recording<T>({&a, &b})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool ga = a.tracked(), gb = b.tracked();
        tape->record("matmul", [a, b, y, batch, n, k, m, ga, gb] {
            const auto& gy = y.cell()->g;
            if (ga) {
                auto& g = detail::accum(a);
                for (std::int64_t bb = 0; bb < batch; ++bb) {
                    const T* go = gy.data() + bb * n * m;
                    const T* pb = b.data() + bb * k * m;
                    T* gi = g.data() + bb * n * k;
                    for (std::int64_t i = 0; i < n; ++i)
                        for (std::int64_t p = 0; p < k; ++p) {
                            T acc = 0;
                            for (std::int64_t j = 0; j < m; ++j) acc += go[i * m + j] * pb[p * m + j];
                            gi[i * k + p] += acc;
                        }
                }
            }
            if (gb) {
                auto& g = detail::accum(b);
                for (std::int64_t bb = 0; bb < batch; ++bb) {
                    const T* go = gy.data() + bb * n * m;
                    const T* pa = a.data() + bb * n * k;
                    T* gi = g.data() + bb * k * m;
                    for (std::int64_t p = 0; p < k; ++p)
                        for (std::int64_t j = 0; j < m; ++j) {
                            T acc = 0;
                            for (std::int64_t i = 0; i < n; ++i) acc += pa[i * k + p] * go[i * m + j];
                            gi[p * m + j] += acc;
                        }
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
    require(a.rank() >= 2, "transpose_last2: rank must be >= 2");
    const std::int64_t n = a.extent(a.rank() - 2);
    const std::int64_t m = a.extent(a.rank() - 1);
    Shape os(a.shape());
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    Tensor<T> y(os);
    const std::int64_t batch = a.size() / (n * m);
    for (std::int64_t bb = 0; bb < batch; ++bb) {
        const T* pa = a.data() + bb * n * m;
        T* py = y.data() + bb * n * m;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < m; ++j) py[j * n + i] = pa[i * m + j];
    }
    if (detail::recording<T>({&a})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("transpose_last2", [a, y, batch, n, m] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(a);
            for (std::int64_t bb = 0; bb < batch; ++bb) {
                const T* go = gy.data() + bb * n * m;
                T* gi = g.data() + bb * n * m;
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < m; ++j) gi[i * m + j] += go[j * n + i];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Dense layer along an arbitrary axis, layer norm
// ---------------------------------------------------------------------------

// Matrix product along `axis`; every other axis is batched. weights is
// [out, in] with in == extent(axis).
template <typename T>
Tensor<T> dense(const Tensor<T>& x, int axis, const Tensor<T>& weights, const Tensor<T>* bias = nullptr) {
    require(weights.rank() == 2, "dense: weights must be rank 2");
    std::int64_t outer, nin, inner;
    detail::axis_split(x.shape(), axis, outer, nin, inner);
    const std::int64_t nout = weights.extent(0);
    require(weights.extent(1) == nin,
            "dense: weight in-extent " + std::to_string(weights.extent(1)) + " != axis extent " + std::to_string(nin));
    if (bias) require(bias->size() == nout, "dense: bias extent mismatch");
    Shape os(x.shape());
    os[static_cast<std::size_t>(axis)] = nout;
    Tensor<T> y(os);
    parallel_for(outer, 1, [&](std::int64_t o0, std::int64_t o1) {
        for (std::int64_t o = o0; o < o1; ++o) {
            const T* px = x.data() + o * nin * inner;
            T* py = y.data() + o * nout * inner;
            for (std::int64_t jo = 0; jo < nout; ++jo) {
                T* row = py + jo * inner;
                const T b = bias ? bias->data()[jo] : T(0);
                std::fill(row, row + inner, b);
                const T* wrow = weights.data() + jo * nin;
                for (std::int64_t j = 0; j < nin; ++j) {
                    const T w = wrow[j];
                    const T* xrow = px + j * inner;
                    for (std::int64_t i = 0; i < inner; ++i) row[i] += w * xrow[i];
                }
            }
        }
    });
    detail::check_finite(y, "dense");
    const Tensor<T> bias_t = bias ? *bias : Tensor<T>();
    const bool has_bias = bias != nullptr;
    std::initializer_list<const Tensor<T>*> ins = {&x, &weights, &bias_t};
    if (detail::recording<T>(ins)) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool gx = x.tracked(), gw = weights.tracked(), gb = has_bias && bias_t.tracked();
        tape->record("dense", [x, weights, bias_t, y, outer, nin, nout, inner, gx, gw, gb] {
            const auto& gy = y.cell()->g;
            if (gx) {
                auto& g = detail::accum(x);
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* go = gy.data() + o * nout * inner;
                    T* gi = g.data() + o * nin * inner;
                    for (std::int64_t jo = 0; jo < nout; ++jo) {
                        const T* wrow = weights.data() + jo * nin;
                        const T* grow = go + jo * inner;
                        for (std::int64_t j = 0; j < nin; ++j) {
                            const T w = wrow[j];
                            T* girow = gi + j * inner;
                            for (std::int64_t i = 0; i < inner; ++i) girow[i] += w * grow[i];
                        }
                    }
                }
            }
            if (gw) {
                auto& g = detail::accum(weights);
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* go = gy.data() + o * nout * inner;
                    const T* px = x.data() + o * nin * inner;
                    for (std::int64_t jo = 0; jo < nout; ++jo)
                        for (std::int64_t j = 0; j < nin; ++j) {
                            T acc = 0;
                            const T* grow = go + jo * inner;
                            const T* xrow = px + j * inner;
                            for (std::int64_t i = 0; i < inner; ++i) acc += grow[i] * xrow[i];
                            g[jo * nin + j] += acc;
                        }
                }
            }
            if (gb) {
                auto& g = detail::accum(bias_t);
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* go = gy.data() + o * nout * inner;
                    for (std::int64_t jo = 0; jo < nout; ++jo) {
                        T acc = 0;
                        for (std::int64_t i = 0; i < inner; ++i) acc += go[jo * inner + i];
                        g[jo] += acc;
                    }
                }
            }
        });
    }
    return y;
}

// Zero mean / unit variance along `axis` (population variance, var+eps
// denominator), then the gamma/beta affine along the same axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, int axis, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    std::int64_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    require(n >= 1, "layer_norm: axis extent < 1");
    require(gamma.size() == n && beta.size() == n, "layer_norm: gamma/beta extent must match normalized axis");
    Tensor<T> y(x.shape());
    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(outer * inner));
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * n * inner + i;
            T mean = 0;
            for (std::int64_t j = 0; j < n; ++j) mean += x.data()[base + j * inner];
            mean /= static_cast<T>(n);
            T var = 0;
            for (std::int64_t j = 0; j < n; ++j) {
                const T d = x.data()[base + j * inner] - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T inv = T(1) / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(o * inner + i)] = inv;
            for (std::int64_t j = 0; j < n; ++j) {
                const T h = (x.data()[base + j * inner] - mean) * inv;
                xhat.data()[base + j * inner] = h;
                y.data()[base + j * inner] = gamma.data()[j] * h + beta.data()[j];
            }
        }
    }
    detail::check_finite(y, "layer_norm");
    if (detail::recording<T>({&x, &gamma, &beta})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool gx = x.tracked(), gg = gamma.tracked(), gb = beta.tracked();
        tape->record("layer_norm", [x, gamma, beta, y, xhat, inv_std, outer, n, inner, gx, gg, gb] {
            const auto& gy = y.cell()->g;
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = o * n * inner + i;
                    if (gx) {
                        T mg = 0, mgh = 0;
                        for (std::int64_t j = 0; j < n; ++j) {
                            const T gh = gy[static_cast<std::size_t>(base + j * inner)] * gamma.data()[j];
                            mg += gh;
                            mgh += gh * xhat.data()[base + j * inner];
                        }
                        mg /= static_cast<T>(n);
                        mgh /= static_cast<T>(n);
                        const T inv = inv_std[static_cast<std::size_t>(o * inner + i)];
                        auto& g = detail::accum(x);
                        for (std::int64_t j = 0; j < n; ++j) {
                            const T gh = gy[static_cast<std::size_t>(base + j * inner)] * gamma.data()[j];
                            g[static_cast<std::size_t>(base + j * inner)] +=
                                inv * (gh - mg - xhat.data()[base + j * inner] * mgh);
                        }
                    }
                    if (gg) {
                        auto& g = detail::accum(gamma);
                        for (std::int64_t j = 0; j < n; ++j)
                            g[static_cast<std::size_t>(j)] +=
                                gy[static_cast<std::size_t>(base + j * inner)] * xhat.data()[base + j * inner];
                    }
                    if (gb) {
                        auto& g = detail::accum(beta);
                        for (std::int64_t j = 0; j < n; ++j) g[static_cast<std::size_t>(j)] += gy[static_cast<std::size_t>(base + j * inner)];
                    }
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Shape plumbing: reshape / concat / slice / gather along axis 0
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    require(shape_numel(new_shape) == x.size(),
            "reshape: numel mismatch " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    Tensor<T> y(new_shape);
    std::copy(x.data(), x.data() + x.size(), y.data());
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("reshape", [x, y] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat0: empty input list");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::int64_t total = 0;
    for (const auto& p : parts) {
        require(p.rank() == parts[0].rank(), "concat0: rank mismatch");
        Shape t(p.shape().begin() + 1, p.shape().end());
        require(t == tail, "concat0: trailing shape mismatch");
        total += p.extent(0);
    }
    Shape os(parts[0].shape());
    os[0] = total;
    Tensor<T> y(os);
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data(), p.data() + p.size(), y.data() + off);
        off += p.size();
    }
    bool any = false;
    if (GradTape<T>::current())
        for (const auto& p : parts) any = any || p.tracked();
    if (any) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        std::vector<Tensor<T>> held(parts);
        tape->record("concat0", [held, y] {
            const auto& gy = y.cell()->g;
            std::int64_t off2 = 0;
            for (const auto& p : held) {
                if (p.tracked()) {
                    auto& g = detail::accum(p);
                    for (std::int64_t i = 0; i < p.size(); ++i) g[static_cast<std::size_t>(i)] += gy[static_cast<std::size_t>(off2 + i)];
                }
                off2 += p.size();
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> slice0(const Tensor<T>& x, std::int64_t start, std::int64_t len) {
    require(x.rank() >= 1, "slice0: rank must be >= 1");
    require(start >= 0 && len >= 0 && start + len <= x.extent(0), "slice0: range out of bounds");
    Shape os(x.shape());
    os[0] = len;
    Tensor<T> y(os);
    const std::int64_t stride = x.size() / std::max<std::int64_t>(x.extent(0), 1);
    std::copy(x.data() + start * stride, x.data() + (start + len) * stride, y.data());
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("slice0", [x, y, start, stride] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            const std::int64_t off = start * stride;
            for (std::size_t i = 0; i < gy.size(); ++i) g[static_cast<std::size_t>(off) + i] += gy[i];
        });
    }
    return y;
}

// y[i] = x[idx[i]] along axis 0; idx need not be a permutation.
template <typename T>
Tensor<T> gather0(const Tensor<T>& x, const std::vector<std::int64_t>& idx) {
    require(x.rank() >= 1, "gather0: rank must be >= 1");
    const std::int64_t rows = x.extent(0);
    const std::int64_t stride = x.size() / std::max<std::int64_t>(rows, 1);
    Shape os(x.shape());
    os[0] = static_cast<std::int64_t>(idx.size());
    Tensor<T> y(os);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < rows, "gather0: index out of range");
        std::copy(x.data() + idx[i] * stride, x.data() + (idx[i] + 1) * stride, y.data() + static_cast<std::int64_t>(i) * stride);
    }
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("gather0", [x, y, idx, stride] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const std::int64_t src = static_cast<std::int64_t>(i) * stride;
                const std::int64_t dst = idx[i] * stride;
                for (std::int64_t j = 0; j < stride; ++j) g[static_cast<std::size_t>(dst + j)] += gy[static_cast<std::size_t>(src + j)];
            }
        });
    }
    return y;
}

}  // namespace estn
