#pragma once

#include "estn/ops.hpp"

namespace estn {

enum class Pad { None, ZeroSame, ReflectSame };

struct CropRecord {
    std::int64_t height = 0;  // original extents before padding
    std::int64_t width = 0;
};

namespace detail {

// Mirror about the edge, border pixel excluded: index map for a 1-D extent.
// Position n+i (i >= 0) reads n-2-i; position -1-i reads 1+i.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

// Source-index tables for pad2d; -1 means zero fill.
inline std::vector<std::int64_t> pad_index(std::int64_t n, std::int64_t before, std::int64_t after, bool reflect) {
    std::vector<std::int64_t> map(static_cast<std::size_t>(before + n + after));
    for (std::int64_t i = 0; i < before + n + after; ++i) {
        const std::int64_t src = i - before;
        if (src >= 0 && src < n) {
            map[static_cast<std::size_t>(i)] = src;
        } else if (reflect) {
            if (src < -(n - 1) || src > 2 * n - 2)
                throw ShapeError("pad2d: reflection span exceeds input extent " + std::to_string(n));
            map[static_cast<std::size_t>(i)] = reflect_index(src, n);
        } else {
            map[static_cast<std::size_t>(i)] = -1;
        }
    }
    return map;
}

}  // namespace detail

// Pads the two trailing spatial axes of a [C,H,W] tensor.
template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right, bool reflect) {
    require(x.rank() == 3, "pad2d: expected [C,H,W], got " + shape_str(x.shape()));
    require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad2d: negative padding");
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    require(h >= 1 && w >= 1, "pad2d: empty spatial extent");
    const auto ymap = detail::pad_index(h, top, bottom, reflect);
    const auto xmap = detail::pad_index(w, left, right, reflect);
    const std::int64_t oh = top + h + bottom, ow = left + w + right;
    Tensor<T> y({c, oh, ow});
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* src = x.data() + ch * h * w;
        T* dst = y.data() + ch * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
            const std::int64_t sy = ymap[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < ow; ++j) {
                const std::int64_t sx = xmap[static_cast<std::size_t>(j)];
                dst[i * ow + j] = (sy < 0 || sx < 0) ? T(0) : src[sy * w + sx];
            }
        }
    }
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("pad2d", [x, y, ymap, xmap, c, h, w, oh, ow] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const T* go = gy.data() + ch * oh * ow;
                T* gi = g.data() + ch * h * w;
                for (std::int64_t i = 0; i < oh; ++i) {
                    const std::int64_t sy = ymap[static_cast<std::size_t>(i)];
                    if (sy < 0) continue;
                    for (std::int64_t j = 0; j < ow; ++j) {
                        const std::int64_t sx = xmap[static_cast<std::size_t>(j)];
                        if (sx >= 0) gi[sy * w + sx] += go[i * ow + j];
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width) {
    require(x.rank() == 3, "crop2d: expected [C,H,W], got " + shape_str(x.shape()));
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    require(top >= 0 && left >= 0 && height >= 1 && width >= 1 && top + height <= h && left + width <= w,
            "crop2d: window out of bounds");
    Tensor<T> y({c, height, width});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < height; ++i)
            std::copy(x.data() + (ch * h + top + i) * w + left, x.data() + (ch * h + top + i) * w + left + width,
                      y.data() + (ch * height + i) * width);
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("crop2d", [x, y, top, left, height, width, h, w, c] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t i = 0; i < height; ++i)
                    for (std::int64_t j = 0; j < width; ++j)
                        g[static_cast<std::size_t>((ch * h + top + i) * w + left + j)] +=
                            gy[static_cast<std::size_t>((ch * height + i) * width + j)];
        });
    }
    return y;
}

// Reflect-pads bottom/right so both spatial extents become the smallest
// multiples of (mh, mw). The crop record inverts the padding exactly.
template <typename T>
std::pair<Tensor<T>, CropRecord> pad_reflect(const Tensor<T>& x, std::int64_t mh, std::int64_t mw) {
    require(x.rank() == 3, "pad_reflect: expected [C,H,W], got " + shape_str(x.shape()));
    require(mh >= 1 && mw >= 1, "pad_reflect: multiples must be >= 1");
    const std::int64_t h = x.extent(1), w = x.extent(2);
    const std::int64_t ph = (mh - h % mh) % mh;
    const std::int64_t pw = (mw - w % mw) % mw;
    if (ph >= h || pw >= w)
        throw ShapeError("pad_reflect: input " + std::to_string(h) + "x" + std::to_string(w) +
                         " is smaller than the required reflection span (pad " + std::to_string(ph) + "x" +
                         std::to_string(pw) + ")");
    CropRecord rec{h, w};
    if (ph == 0 && pw == 0) {
        // still routed through pad2d so the op participates in the tape
        return {pad2d(x, 0, 0, 0, 0, true), rec};
    }
    return {pad2d(x, 0, ph, 0, pw, true), rec};
}

template <typename T>
Tensor<T> crop_to(const Tensor<T>& x, const CropRecord& rec) {
    return crop2d(x, 0, 0, rec.height, rec.width);
}

// Toroidal roll of the spatial axes: out(c,y,x) = in(c, y-dy mod H, x-dx mod W).
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, std::int64_t dy, std::int64_t dx) {
    require(x.rank() == 3, "cyclic_shift: expected [C,H,W], got " + shape_str(x.shape()));
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::int64_t sy = ((dy % h) + h) % h;
    const std::int64_t sx = ((dx % w) + w) % w;
    Tensor<T> y(x.shape());
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < h; ++i) {
            const std::int64_t si = (i - sy + h) % h;
            for (std::int64_t j = 0; j < w; ++j) {
                const std::int64_t sj = (j - sx + w) % w;
                y.data()[(ch * h + i) * w + j] = x.data()[(ch * h + si) * w + sj];
            }
        }
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("cyclic_shift", [x, y, c, h, w, sy, sx] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t i = 0; i < h; ++i) {
                    const std::int64_t si = (i - sy + h) % h;
                    for (std::int64_t j = 0; j < w; ++j) {
                        const std::int64_t sj = (j - sx + w) % w;
                        g[static_cast<std::size_t>((ch * h + si) * w + sj)] += gy[static_cast<std::size_t>((ch * h + i) * w + j)];
                    }
                }
        });
    }
    return y;
}

// out(ch, a*y+dy, a*x+dx) = in(ch*a^2 + dy*a + dx, y, x)
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::int64_t a) {
    require(x.rank() == 3, "pixel_shuffle: expected [C,H,W], got " + shape_str(x.shape()));
    require(a >= 1, "pixel_shuffle: scale must be >= 1");
    const std::int64_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    require(cin % (a * a) == 0,
            "pixel_shuffle: channel count " + std::to_string(cin) + " not divisible by " + std::to_string(a * a));
    const std::int64_t cout = cin / (a * a);
    Tensor<T> y({cout, a * h, a * w});
    const std::int64_t oh = a * h, ow = a * w;
    for (std::int64_t ch = 0; ch < cout; ++ch)
        for (std::int64_t dy = 0; dy < a; ++dy)
            for (std::int64_t dx = 0; dx < a; ++dx) {
                const T* src = x.data() + (ch * a * a + dy * a + dx) * h * w;
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < w; ++j) y.data()[(ch * oh + a * i + dy) * ow + a * j + dx] = src[i * w + j];
            }
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("pixel_shuffle", [x, y, cout, h, w, a, oh, ow] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t ch = 0; ch < cout; ++ch)
                for (std::int64_t dy = 0; dy < a; ++dy)
                    for (std::int64_t dx = 0; dx < a; ++dx) {
                        T* gi = g.data() + (ch * a * a + dy * a + dx) * h * w;
                        for (std::int64_t i = 0; i < h; ++i)
                            for (std::int64_t j = 0; j < w; ++j)
                                gi[i * w + j] += gy[static_cast<std::size_t>((ch * oh + a * i + dy) * ow + a * j + dx)];
                    }
        });
    }
    return y;
}

// [H,W,C] -> [B, wh*ww, C]; windows and within-window positions in row-major
// order. grid_merge is the exact inverse.
template <typename T>
Tensor<T> grid_partition(const Tensor<T>& x, std::int64_t wh, std::int64_t ww) {
    require(x.rank() == 3, "grid_partition: expected [H,W,C], got " + shape_str(x.shape()));
    const std::int64_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    require(wh >= 1 && ww >= 1 && h % wh == 0 && w % ww == 0,
            "grid_partition: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by window " +
                std::to_string(wh) + "x" + std::to_string(ww));
    const std::int64_t by = h / wh, bx = w / ww;
    Tensor<T> y({by * bx, wh * ww, c});
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            const std::int64_t b = (i / wh) * bx + (j / ww);
            const std::int64_t p = (i % wh) * ww + (j % ww);
            std::copy(x.data() + (i * w + j) * c, x.data() + (i * w + j + 1) * c, y.data() + (b * wh * ww + p) * c);
        }
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("grid_partition", [x, y, h, w, c, wh, ww, bx] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    const std::int64_t b = (i / wh) * bx + (j / ww);
                    const std::int64_t p = (i % wh) * ww + (j % ww);
                    for (std::int64_t k = 0; k < c; ++k)
                        g[static_cast<std::size_t>((i * w + j) * c + k)] += gy[static_cast<std::size_t>((b * wh * ww + p) * c + k)];
                }
        });
    }
    return y;
}

template <typename T>
Tensor<T> grid_merge(const Tensor<T>& x, std::int64_t h, std::int64_t w, std::int64_t wh, std::int64_t ww) {
    require(x.rank() == 3, "grid_merge: expected [B, wh*ww, C], got " + shape_str(x.shape()));
    require(wh >= 1 && ww >= 1 && h % wh == 0 && w % ww == 0, "grid_merge: extents not divisible by window");
    const std::int64_t by = h / wh, bx = w / ww, c = x.extent(2);
    require(x.extent(0) == by * bx && x.extent(1) == wh * ww, "grid_merge: block layout mismatch with target extents");
    Tensor<T> y({h, w, c});
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            const std::int64_t b = (i / wh) * bx + (j / ww);
            const std::int64_t p = (i % wh) * ww + (j % ww);
            std::copy(x.data() + (b * wh * ww + p) * c, x.data() + (b * wh * ww + p + 1) * c, y.data() + (i * w + j) * c);
        }
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("grid_merge", [x, y, h, w, c, wh, ww, bx] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    const std::int64_t b = (i / wh) * bx + (j / ww);
                    const std::int64_t p = (i % wh) * ww + (j % ww);
                    for (std::int64_t k = 0; k < c; ++k)
                        g[static_cast<std::size_t>((b * wh * ww + p) * c + k)] += gy[static_cast<std::size_t>((i * w + j) * c + k)];
                }
        });
    }
    return y;
}

template <typename T>
Tensor<T> chw_to_hwc(const Tensor<T>& x) {
    require(x.rank() == 3, "chw_to_hwc: expected [C,H,W]");
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor<T> y({h, w, c});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) y.data()[(i * w + j) * c + ch] = x.data()[(ch * h + i) * w + j];
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("chw_to_hwc", [x, y, c, h, w] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < w; ++j)
                        g[static_cast<std::size_t>((ch * h + i) * w + j)] += gy[static_cast<std::size_t>((i * w + j) * c + ch)];
        });
    }
    return y;
}

template <typename T>
Tensor<T> hwc_to_chw(const Tensor<T>& x) {
    require(x.rank() == 3, "hwc_to_chw: expected [H,W,C]");
    const std::int64_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    Tensor<T> y({c, h, w});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) y.data()[(ch * h + i) * w + j] = x.data()[(i * w + j) * c + ch];
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("hwc_to_chw", [x, y, c, h, w] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < w; ++j)
                        g[static_cast<std::size_t>((i * w + j) * c + ch)] += gy[static_cast<std::size_t>((ch * h + i) * w + j)];
        });
    }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require(x.rank() == 3, "global_avg_pool: expected [C,H,W]");
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    require(h >= 1 && w >= 1, "global_avg_pool: empty spatial extent");
    Tensor<T> y({c, 1, 1});
    const T inv = T(1) / static_cast<T>(h * w);
    for (std::int64_t ch = 0; ch < c; ++ch) {
        T acc = 0;
        const T* src = x.data() + ch * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) acc += src[i];
        y.data()[ch] = acc * inv;
    }
    detail::check_finite(y, "global_avg_pool");
    if (detail::recording<T>({&x})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        tape->record("global_avg_pool", [x, y, c, h, w, inv] {
            const auto& gy = y.cell()->g;
            auto& g = detail::accum(x);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const T gv = gy[static_cast<std::size_t>(ch)] * inv;
                T* gi = g.data() + ch * h * w;
                for (std::int64_t i = 0; i < h * w; ++i) gi[i] += gv;
            }
        });
    }
    return y;
}

// t[C,H,W] * s[C,1,1], the per-channel gate broadcast over space.
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& t, const Tensor<T>& s) {
    require(t.rank() == 3, "scale_channels: expected [C,H,W]");
    require(s.rank() == 3 && s.extent(1) == 1 && s.extent(2) == 1 && s.extent(0) == t.extent(0),
            "scale_channels: gate must be [C,1,1] with matching channels");
    const std::int64_t c = t.extent(0), h = t.extent(1), w = t.extent(2);
    Tensor<T> y(t.shape());
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const T sv = s.data()[ch];
        const T* src = t.data() + ch * h * w;
        T* dst = y.data() + ch * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) dst[i] = src[i] * sv;
    }
    detail::check_finite(y, "scale_channels");
    if (detail::recording<T>({&t, &s})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool gt = t.tracked(), gs = s.tracked();
        tape->record("scale_channels", [t, s, y, c, h, w, gt, gs] {
            const auto& gy = y.cell()->g;
            if (gt) {
                auto& g = detail::accum(t);
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T sv = s.data()[ch];
                    for (std::int64_t i = 0; i < h * w; ++i) g[static_cast<std::size_t>(ch * h * w + i)] += gy[static_cast<std::size_t>(ch * h * w + i)] * sv;
                }
            }
            if (gs) {
                auto& g = detail::accum(s);
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    T acc = 0;
                    for (std::int64_t i = 0; i < h * w; ++i) acc += gy[static_cast<std::size_t>(ch * h * w + i)] * t.data()[ch * h * w + i];
                    g[static_cast<std::size_t>(ch)] += acc;
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation; odd spatial kernels)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>* bias) {
    const std::int64_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::int64_t cout = k.extent(0), kh = k.extent(2), kw = k.extent(3);
    require(k.extent(1) == cin, "conv2d: kernel channel count " + std::to_string(k.extent(1)) +
                                    " != input channels " + std::to_string(cin));
    require(h >= kh && w >= kw, "conv2d: input smaller than kernel");
    if (bias) require(bias->size() == cout, "conv2d: bias extent mismatch");
    const std::int64_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor<T> y({cout, oh, ow});
    parallel_for(cout, 1, [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t co = c0; co < c1; ++co) {
            T* dst = y.data() + co * oh * ow;
            const T b = bias ? bias->data()[co] : T(0);
            std::fill(dst, dst + oh * ow, b);
            for (std::int64_t ci = 0; ci < cin; ++ci) {
                const T* src = x.data() + ci * h * w;
                const T* kk = k.data() + (co * cin + ci) * kh * kw;
                for (std::int64_t dy = 0; dy < kh; ++dy)
                    for (std::int64_t dx = 0; dx < kw; ++dx) {
                        const T kv = kk[dy * kw + dx];
                        if (kv == T(0)) continue;
                        for (std::int64_t i = 0; i < oh; ++i) {
                            const T* srow = src + (i + dy) * w + dx;
                            T* drow = dst + i * ow;
                            for (std::int64_t j = 0; j < ow; ++j) drow[j] += kv * srow[j];
                        }
                    }
            }
        }
    });
    detail::check_finite(y, "conv2d");
    const Tensor<T> bias_t = bias ? *bias : Tensor<T>();
    const bool has_bias = bias != nullptr;
    if (detail::recording<T>({&x, &k, &bias_t})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool gx = x.tracked(), gk = k.tracked(), gb = has_bias && bias_t.tracked();
        tape->record("conv2d", [x, k, bias_t, y, cin, cout, h, w, kh, kw, oh, ow, gx, gk, gb] {
            const auto& gy = y.cell()->g;
            if (gx) {
                auto& g = detail::accum(x);
                parallel_for(cin, 1, [&](std::int64_t i0, std::int64_t i1) {
                    for (std::int64_t ci = i0; ci < i1; ++ci) {
                        T* gi = g.data() + ci * h * w;
                        for (std::int64_t co = 0; co < cout; ++co) {
                            const T* go = gy.data() + co * oh * ow;
                            const T* kk = k.data() + (co * cin + ci) * kh * kw;
                            for (std::int64_t dy = 0; dy < kh; ++dy)
                                for (std::int64_t dx = 0; dx < kw; ++dx) {
                                    const T kv = kk[dy * kw + dx];
                                    if (kv == T(0)) continue;
                                    for (std::int64_t i = 0; i < oh; ++i) {
                                        T* girow = gi + (i + dy) * w + dx;
                                        const T* grow = go + i * ow;
                                        for (std::int64_t j = 0; j < ow; ++j) girow[j] += kv * grow[j];
                                    }
                                }
                        }
                    }
                });
            }
            if (gk) {
                auto& g = detail::accum(k);
                parallel_for(cout, 1, [&](std::int64_t c0, std::int64_t c1) {
                    for (std::int64_t co = c0; co < c1; ++co) {
                        const T* go = gy.data() + co * oh * ow;
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            const T* src = x.data() + ci * h * w;
                            T* gkk = g.data() + (co * cin + ci) * kh * kw;
                            for (std::int64_t dy = 0; dy < kh; ++dy)
                                for (std::int64_t dx = 0; dx < kw; ++dx) {
                                    T acc = 0;
                                    for (std::int64_t i = 0; i < oh; ++i) {
                                        const T* srow = src + (i + dy) * w + dx;
                                        const T* grow = go + i * ow;
                                        for (std::int64_t j = 0; j < ow; ++j) acc += srow[j] * grow[j];
                                    }
                                    gkk[dy * kw + dx] += acc;
                                }
                        }
                    }
                });
            }
            if (gb) {
                auto& g = detail::accum(bias_t);
                for (std::int64_t co = 0; co < cout; ++co) {
                    T acc = 0;
                    const T* go = gy.data() + co * oh * ow;
                    for (std::int64_t i = 0; i < oh * ow; ++i) acc += go[i];
                    g[static_cast<std::size_t>(co)] += acc;
                }
            }
        });
    }
    return y;
}

}  // namespace detail

// input [Cin,H,W], kernel [Cout,Cin,kh,kw]. With *-same padding the output
// keeps the input's spatial extents.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>* bias = nullptr, Pad padding = Pad::ZeroSame) {
    require(x.rank() == 3, "conv2d: expected input [Cin,H,W], got " + shape_str(x.shape()));
    require(k.rank() == 4, "conv2d: expected kernel [Cout,Cin,kh,kw], got " + shape_str(k.shape()));
    const std::int64_t kh = k.extent(2), kw = k.extent(3);
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel spatial size must be odd");
    require(x.extent(1) >= 1 && x.extent(2) >= 1, "conv2d: empty spatial dims");
    if (padding == Pad::None) return detail::conv2d_valid(x, k, bias);
    const Tensor<T> xp = pad2d(x, (kh - 1) / 2, (kh - 1) / 2, (kw - 1) / 2, (kw - 1) / 2, padding == Pad::ReflectSame);
    return detail::conv2d_valid(xp, k, bias);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, Pad padding) {
    return conv2d<T>(x, k, nullptr, padding);
}

// input [C,H,W], kernel [C,kh,kw]: channel c convolved with kernel slice c.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& k, Pad padding = Pad::ZeroSame) {
    require(x.rank() == 3, "depthwise_conv2d: expected input [C,H,W]");
    require(k.rank() == 3, "depthwise_conv2d: expected kernel [C,kh,kw]");
    const std::int64_t c = x.extent(0), kh = k.extent(1), kw = k.extent(2);
    require(k.extent(0) == c, "depthwise_conv2d: kernel channel count " + std::to_string(k.extent(0)) +
                                  " != input channels " + std::to_string(c));
    require(kh % 2 == 1 && kw % 2 == 1, "depthwise_conv2d: kernel spatial size must be odd");
    Tensor<T> xp = x;
    if (padding != Pad::None) xp = pad2d(x, (kh - 1) / 2, (kh - 1) / 2, (kw - 1) / 2, (kw - 1) / 2, padding == Pad::ReflectSame);
    const std::int64_t h = xp.extent(1), w = xp.extent(2);
    require(h >= kh && w >= kw, "depthwise_conv2d: input smaller than kernel");
    const std::int64_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor<T> y({c, oh, ow});
    parallel_for(c, 1, [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t ch = c0; ch < c1; ++ch) {
            const T* src = xp.data() + ch * h * w;
            const T* kk = k.data() + ch * kh * kw;
            T* dst = y.data() + ch * oh * ow;
            std::fill(dst, dst + oh * ow, T(0));
            for (std::int64_t dy = 0; dy < kh; ++dy)
                for (std::int64_t dx = 0; dx < kw; ++dx) {
                    const T kv = kk[dy * kw + dx];
                    if (kv == T(0)) continue;
                    for (std::int64_t i = 0; i < oh; ++i) {
                        const T* srow = src + (i + dy) * w + dx;
                        T* drow = dst + i * ow;
                        for (std::int64_t j = 0; j < ow; ++j) drow[j] += kv * srow[j];
                    }
                }
        }
    });
    detail::check_finite(y, "depthwise_conv2d");
    if (detail::recording<T>({&xp, &k})) {
        auto* tape = GradTape<T>::current();
        tape->mark_output(y);
        const bool gx = xp.tracked(), gk = k.tracked();
        Tensor<T> xin = xp;
        tape->record("depthwise_conv2d", [xin, k, y, c, h, w, kh, kw, oh, ow, gx, gk] {
            const auto& gy = y.cell()->g;
            if (gx) {
                auto& g = detail::accum(xin);
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    T* gi = g.data() + ch * h * w;
                    const T* go = gy.data() + ch * oh * ow;
                    const T* kk = k.data() + ch * kh * kw;
                    for (std::int64_t dy = 0; dy < kh; ++dy)
                        for (std::int64_t dx = 0; dx < kw; ++dx) {
                            const T kv = kk[dy * kw + dx];
                            if (kv == T(0)) continue;
                            for (std::int64_t i = 0; i < oh; ++i)
                                for (std::int64_t j = 0; j < ow; ++j) gi[(i + dy) * w + dx + j] += kv * go[i * ow + j];
                        }
                }
            }
            if (gk) {
                auto& g = detail::accum(k);
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const T* src = xin.data() + ch * h * w;
                    const T* go = gy.data() + ch * oh * ow;
                    for (std::int64_t dy = 0; dy < kh; ++dy)
                        for (std::int64_t dx = 0; dx < kw; ++dx) {
                            T acc = 0;
                            for (std::int64_t i = 0; i < oh; ++i)
                                for (std::int64_t j = 0; j < ow; ++j) acc += src[(i + dy) * w + dx + j] * go[i * ow + j];
                            g[static_cast<std::size_t>(ch * kh * kw + dy * kw + dx)] += acc;
                        }
                }
            }
        });
    }
    return y;
}

}  // namespace estn
