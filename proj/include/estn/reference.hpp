#pragma once

// Straight-line reference implementations used as oracles by the test suites
// and the self-check command. Everything here is written as explicit loops
// over raw buffers in double precision, deliberately independent of the op
// library and the gradient tape.

#include <cmath>
#include <cstdint>
#include <vector>

#include "estn/network.hpp"

namespace estn::ref {

using std::int64_t;

struct Map3 {
    int64_t c = 0, h = 0, w = 0;
    std::vector<double> v;

    Map3() = default;
    Map3(int64_t c_, int64_t h_, int64_t w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_ * h_ * w_), 0.0) {}

    double& at(int64_t ch, int64_t y, int64_t x) { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
    double at(int64_t ch, int64_t y, int64_t x) const { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
};

inline Map3 from_tensor(const Tensor<double>& t) {
    Map3 m(t.extent(0), t.extent(1), t.extent(2));
    m.v.assign(t.data(), t.data() + t.size());
    return m;
}

inline Tensor<double> to_tensor(const Map3& m) { return Tensor<double>({m.c, m.h, m.w}, m.v); }

inline double gelu_scalar(double x) { return x * 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// mirror about the edge, border pixel excluded
inline int64_t mirror(int64_t i, int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

inline int64_t round_up(int64_t n, int64_t m) { return ((n + m - 1) / m) * m; }

// value with zero outside the map
inline double at_zero(const Map3& x, int64_t ch, int64_t y, int64_t xx) {
    if (y < 0 || y >= x.h || xx < 0 || xx >= x.w) return 0.0;
    return x.at(ch, y, xx);
}

inline Map3 conv_same_zero(const Map3& x, const double* k, int64_t cout, int64_t kh, int64_t kw, const double* bias) {
    Map3 y(cout, x.h, x.w);
    for (int64_t co = 0; co < cout; ++co)
        for (int64_t yy = 0; yy < x.h; ++yy)
            for (int64_t xx = 0; xx < x.w; ++xx) {
                double acc = bias ? bias[co] : 0.0;
                for (int64_t ci = 0; ci < x.c; ++ci)
                    for (int64_t dy = 0; dy < kh; ++dy)
                        for (int64_t dx = 0; dx < kw; ++dx)
                            acc += k[((co * x.c + ci) * kh + dy) * kw + dx] *
                                   at_zero(x, ci, yy + dy - kh / 2, xx + dx - kw / 2);
                y.at(co, yy, xx) = acc;
            }
    return y;
}

inline Map3 conv1x1(const Map3& x, const double* k, int64_t cout, const double* bias) {
    Map3 y(cout, x.h, x.w);
    for (int64_t co = 0; co < cout; ++co)
        for (int64_t yy = 0; yy < x.h; ++yy)
            for (int64_t xx = 0; xx < x.w; ++xx) {
                double acc = bias ? bias[co] : 0.0;
                for (int64_t ci = 0; ci < x.c; ++ci) acc += k[co * x.c + ci] * x.at(ci, yy, xx);
                y.at(co, yy, xx) = acc;
            }
    return y;
}

inline Map3 depthwise_same_zero(const Map3& x, const double* k, int64_t kh, int64_t kw) {
    Map3 y(x.c, x.h, x.w);
    for (int64_t ch = 0; ch < x.c; ++ch)
        for (int64_t yy = 0; yy < x.h; ++yy)
            for (int64_t xx = 0; xx < x.w; ++xx) {
                double acc = 0.0;
                for (int64_t dy = 0; dy < kh; ++dy)
                    for (int64_t dx = 0; dx < kw; ++dx)
                        acc += k[(ch * kh + dy) * kw + dx] * at_zero(x, ch, yy + dy - kh / 2, xx + dx - kw / 2);
                y.at(ch, yy, xx) = acc;
            }
    return y;
}

inline Map3 relu_map(Map3 x) {
    for (auto& e : x.v) e = e > 0.0 ? e : 0.0;
    return x;
}

inline Map3 pad_reflect_multiple(const Map3& x, int64_t mh, int64_t mw) {
    const int64_t hp = round_up(x.h, mh), wp = round_up(x.w, mw);
    Map3 y(x.c, hp, wp);
    for (int64_t ch = 0; ch < x.c; ++ch)
        for (int64_t yy = 0; yy < hp; ++yy)
            for (int64_t xx = 0; xx < wp; ++xx) y.at(ch, yy, xx) = x.at(ch, mirror(yy, x.h), mirror(xx, x.w));
    return y;
}

inline Map3 crop(const Map3& x, int64_t h, int64_t w) {
    Map3 y(x.c, h, w);
    for (int64_t ch = 0; ch < x.c; ++ch)
        for (int64_t yy = 0; yy < h; ++yy)
            for (int64_t xx = 0; xx < w; ++xx) y.at(ch, yy, xx) = x.at(ch, yy, xx);
    return y;
}

inline Map3 roll(const Map3& x, int64_t dy, int64_t dx) {
    Map3 y(x.c, x.h, x.w);
    for (int64_t ch = 0; ch < x.c; ++ch)
        for (int64_t yy = 0; yy < x.h; ++yy)
            for (int64_t xx = 0; xx < x.w; ++xx)
                y.at(ch, (yy + dy % x.h + x.h) % x.h, (xx + dx % x.w + x.w) % x.w) = x.at(ch, yy, xx);
    return y;
}

inline Map3 add_maps(const Map3& a, const Map3& b) {
    Map3 y = a;
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.v[i];
    return y;
}

// --------------------------------------------------------------------------
// Blocks
// --------------------------------------------------------------------------

inline Map3 local_stage(const Map3& x, const LocalStageWeights<double>& w) {
    const int64_t c = x.c;
    Map3 s1 = depthwise_same_zero(x, w.shift_pre.data(), 3, 3);
    Map3 e = relu_map(conv1x1(s1, w.expand_w.data(), 2 * c, w.expand_b.data()));
    Map3 s2 = depthwise_same_zero(e, w.shift_mid.data(), 3, 3);
    Map3 comp = conv1x1(s2, w.compress_w.data(), c, w.compress_b.data());
    return add_maps(comp, x);
}

inline Map3 bsgm(const Map3& x, const BsgmWeights<double>& w) {
    const int64_t c = x.c;
    Map3 xp = pad_reflect_multiple(x, w.tile_h, w.tile_w);
    const int64_t hp = xp.h, wp = xp.w;
    // X1 = gelu(entry_dense(layer_norm over channels)) per pixel
    Map3 x1(c, hp, wp);
    for (int64_t yy = 0; yy < hp; ++yy)
        for (int64_t xx = 0; xx < wp; ++xx) {
            double mean = 0.0;
            for (int64_t ch = 0; ch < c; ++ch) mean += xp.at(ch, yy, xx);
            mean /= static_cast<double>(c);
            double var = 0.0;
            for (int64_t ch = 0; ch < c; ++ch) {
                const double d = xp.at(ch, yy, xx) - mean;
                var += d * d;
            }
            var /= static_cast<double>(c);
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            std::vector<double> ln(static_cast<std::size_t>(c));
            for (int64_t ch = 0; ch < c; ++ch)
                ln[static_cast<std::size_t>(ch)] =
                    w.ln_gamma.data()[ch] * (xp.at(ch, yy, xx) - mean) * inv + w.ln_beta.data()[ch];
            for (int64_t co = 0; co < c; ++co) {
                double acc = w.entry_b.data()[co];
                for (int64_t ci = 0; ci < c; ++ci) acc += w.entry_w.data()[co * c + ci] * ln[static_cast<std::size_t>(ci)];
                x1.at(co, yy, xx) = gelu_scalar(acc);
            }
        }
    // block dense within each tile: position (yy,xx) belongs to block
    // (yy/wh, xx/ww); blocks are mixed with same-offset blocks of the tile.
    const int64_t wh = w.win_h, ww = w.win_w;
    const int64_t tb_y = w.tile_h / wh, tb_x = w.tile_w / ww;
    const int64_t bstar = tb_y * tb_x;
    Map3 x4(c, hp, wp);
    for (int64_t ty = 0; ty < hp / w.tile_h; ++ty)
        for (int64_t tx = 0; tx < wp / w.tile_w; ++tx) {
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t lb = 0; lb < bstar; ++lb) {
                    const int64_t oy = ty * w.tile_h + (lb / tb_x) * wh;
                    const int64_t ox = tx * w.tile_w + (lb % tb_x) * ww;
                    for (int64_t py = 0; py < wh; ++py)
                        for (int64_t px = 0; px < ww; ++px) {
                            double acc = w.block_b.data()[lb];
                            for (int64_t sb = 0; sb < bstar; ++sb) {
                                const int64_t sy = ty * w.tile_h + (sb / tb_x) * wh;
                                const int64_t sx = tx * w.tile_w + (sb % tb_x) * ww;
                                acc += w.block_w.data()[lb * bstar + sb] * x1.at(ch, sy + py, sx + px);
                            }
                            x4.at(ch, oy + py, ox + px) = acc;
                        }
                }
        }
    // exit channel dense + residual to X1, then crop
    Map3 out(c, hp, wp);
    for (int64_t yy = 0; yy < hp; ++yy)
        for (int64_t xx = 0; xx < wp; ++xx)
            for (int64_t co = 0; co < c; ++co) {
                double acc = w.exit_b.data()[co];
                for (int64_t ci = 0; ci < c; ++ci) acc += w.exit_w.data()[co * c + ci] * x4.at(ci, yy, xx);
                out.at(co, yy, xx) = acc + x1.at(co, yy, xx);
            }
    return crop(out, x.h, x.w);
}

struct AttnResult {
    Map3 out;
    // probs[window][query][key]
    std::vector<std::vector<std::vector<double>>> probs;
    int64_t pad_h = 0, pad_w = 0;
};

// Dense per-window attention with explicit loops. When `reuse` is non-null its
// probability matrices are applied instead of computing Q/K scores.
inline AttnResult window_attention(const Map3& x, const MssaWeights<double>::Scale& w,
                                   const std::vector<std::vector<std::vector<double>>>* reuse = nullptr) {
    const int64_t c = x.c, wh = w.win_h, ww = w.win_w, n = wh * ww;
    Map3 xp = pad_reflect_multiple(x, wh, ww);
    Map3 q = conv1x1(xp, w.q_w.data(), c, w.q_b.data());
    Map3 k = conv1x1(xp, w.k_w.data(), c, w.k_b.data());
    Map3 v = conv1x1(xp, w.v_w.data(), c, w.v_b.data());
    const int64_t by = xp.h / wh, bx = xp.w / ww;
    AttnResult res;
    res.out = Map3(c, xp.h, xp.w);
    res.pad_h = xp.h;
    res.pad_w = xp.w;
    res.probs.resize(static_cast<std::size_t>(by * bx));
    for (int64_t wy = 0; wy < by; ++wy)
        for (int64_t wx = 0; wx < bx; ++wx) {
            const int64_t b = wy * bx + wx;
            std::vector<std::vector<double>> p(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
            if (reuse) {
                p = (*reuse)[static_cast<std::size_t>(b)];
            } else {
                for (int64_t pq = 0; pq < n; ++pq) {
                    const int64_t qy = wy * wh + pq / ww, qx = wx * ww + pq % ww;
                    std::vector<double> row(static_cast<std::size_t>(n));
                    double mx = -1e300;
                    for (int64_t pk = 0; pk < n; ++pk) {
                        const int64_t ky = wy * wh + pk / ww, kx = wx * ww + pk % ww;
                        double dot = 0.0;
                        for (int64_t ch = 0; ch < c; ++ch) dot += q.at(ch, qy, qx) * k.at(ch, ky, kx);
                        row[static_cast<std::size_t>(pk)] = dot / std::sqrt(static_cast<double>(n));
                        mx = std::max(mx, row[static_cast<std::size_t>(pk)]);
                    }
                    double s = 0.0;
                    for (auto& e : row) {
                        e = std::exp(e - mx);
                        s += e;
                    }
                    for (int64_t pk = 0; pk < n; ++pk) p[static_cast<std::size_t>(pq)][static_cast<std::size_t>(pk)] = row[static_cast<std::size_t>(pk)] / s;
                }
            }
            res.probs[static_cast<std::size_t>(b)] = p;
            for (int64_t pq = 0; pq < n; ++pq) {
                const int64_t oy = wy * wh + pq / ww, ox = wx * ww + pq % ww;
                for (int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int64_t pk = 0; pk < n; ++pk) {
                        const int64_t vy = wy * wh + pk / ww, vx = wx * ww + pk % ww;
                        acc += p[static_cast<std::size_t>(pq)][static_cast<std::size_t>(pk)] * v.at(ch, vy, vx);
                    }
                    res.out.at(ch, oy, ox) = acc;
                }
            }
        }
    res.out = crop(res.out, x.h, x.w);
    return res;
}

struct MssaResult {
    Map3 out;
    std::array<std::vector<std::vector<std::vector<double>>>, 3> probs;
};

// shifts per scale; when `reuse` is non-null its per-scale probabilities are
// applied to the (shifted) values.
inline MssaResult mssa(const Map3& x, const MssaWeights<double>& w,
                       const std::array<std::pair<int64_t, int64_t>, 3>& shifts,
                       const std::array<std::vector<std::vector<std::vector<double>>>, 3>* reuse = nullptr) {
    const int64_t c3 = x.c / 3;
    MssaResult res;
    Map3 cat(x.c, x.h, x.w);
    for (int s = 0; s < 3; ++s) {
        Map3 xs(c3, x.h, x.w);
        for (int64_t ch = 0; ch < c3; ++ch)
            for (int64_t yy = 0; yy < x.h; ++yy)
                for (int64_t xx = 0; xx < x.w; ++xx) xs.at(ch, yy, xx) = x.at(s * c3 + ch, yy, xx);
        const auto [sy, sx] = shifts[static_cast<std::size_t>(s)];
        if (sy || sx) xs = roll(xs, sy, sx);
        AttnResult attn = window_attention(xs, w.scales[static_cast<std::size_t>(s)],
                                           reuse ? &(*reuse)[static_cast<std::size_t>(s)] : nullptr);
        Map3 ys = attn.out;
        if (sy || sx) ys = roll(ys, -sy, -sx);
        res.probs[static_cast<std::size_t>(s)] = attn.probs;
        for (int64_t ch = 0; ch < c3; ++ch)
            for (int64_t yy = 0; yy < x.h; ++yy)
                for (int64_t xx = 0; xx < x.w; ++xx) cat.at(s * c3 + ch, yy, xx) = ys.at(ch, yy, xx);
    }
    res.out = conv1x1(cat, w.merge_w.data(), x.c, w.merge_b.data());
    return res;
}

inline Map3 lrcab_core(const Map3& x, const LrcabWeights<double>& w) {
    const int64_t c = x.c;
    const int64_t cmid = w.conv1_w.extent(0);
    Map3 t = relu_map(conv_same_zero(x, w.conv1_w.data(), cmid, w.conv1_w.extent(2), w.conv1_w.extent(3), w.conv1_b.data()));
    t = conv_same_zero(t, w.conv2_w.data(), c, w.conv2_w.extent(2), w.conv2_w.extent(3), w.conv2_b.data());
    // squeeze-excite on the spatial mean
    std::vector<double> pooled(static_cast<std::size_t>(c), 0.0);
    for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int64_t yy = 0; yy < t.h; ++yy)
            for (int64_t xx = 0; xx < t.w; ++xx) acc += t.at(ch, yy, xx);
        pooled[static_cast<std::size_t>(ch)] = acc / static_cast<double>(t.h * t.w);
    }
    const int64_t cr = w.squeeze_w.extent(0);
    std::vector<double> mid(static_cast<std::size_t>(cr), 0.0);
    for (int64_t j = 0; j < cr; ++j) {
        double acc = w.squeeze_b.data()[j];
        for (int64_t ch = 0; ch < c; ++ch) acc += w.squeeze_w.data()[j * c + ch] * pooled[static_cast<std::size_t>(ch)];
        mid[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
    }
    Map3 y(c, t.h, t.w);
    for (int64_t ch = 0; ch < c; ++ch) {
        double acc = w.excite_b.data()[ch];
        for (int64_t j = 0; j < cr; ++j) acc += w.excite_w.data()[ch * cr + j] * mid[static_cast<std::size_t>(j)];
        const double gate = sigmoid_scalar(acc);
        for (int64_t yy = 0; yy < t.h; ++yy)
            for (int64_t xx = 0; xx < t.w; ++xx) y.at(ch, yy, xx) = gate * t.at(ch, yy, xx);
    }
    return y;
}

inline Map3 lrcab(const Map3& x, const LrcabWeights<double>& w) { return add_maps(lrcab_core(x, w), x); }

inline Map3 estm(const Map3& x, const EstmWeights<double>& w) {
    Map3 o1 = local_stage(x, w.local1);
    Map3 b0 = w.bsgm1 ? bsgm(o1, *w.bsgm1) : o1;
    std::array<std::pair<int64_t, int64_t>, 3> no_shift{{{0, 0}, {0, 0}, {0, 0}}};
    MssaResult wm = mssa(b0, w.mssa, no_shift);
    Map3 o2 = add_maps(lrcab(wm.out, w.lrcab1), o1);
    Map3 o3 = local_stage(o2, w.local2);
    Map3 b1 = w.bsgm2 ? bsgm(o3, *w.bsgm2) : o3;
    const MssaWeights<double>& sw_w = w.mssa_shifted ? *w.mssa_shifted : w.mssa;
    std::array<std::pair<int64_t, int64_t>, 3> half;
    for (int s = 0; s < 3; ++s)
        half[static_cast<std::size_t>(s)] = {sw_w.scales[static_cast<std::size_t>(s)].win_h / 2,
                                             sw_w.scales[static_cast<std::size_t>(s)].win_w / 2};
    MssaResult sw = w.mssa_shifted ? mssa(b1, sw_w, half) : mssa(b1, w.mssa, half, &wm.probs);
    return add_maps(lrcab_core(sw.out, w.lrcab2), o3);
}

inline Map3 estn_forward(const EstnWeights<double>& w, const Map3& lr) {
    const int64_t c = w.cfg.channels;
    Map3 f0 = conv_same_zero(lr, w.sfem_w.data(), c, 3, 3, w.sfem_b.data());
    Map3 f = f0;
    for (const auto& e : w.estms) f = estm(f, e);
    Map3 um_in = add_maps(f, f0);
    const int64_t a = w.cfg.scale;
    Map3 um = conv_same_zero(um_in, w.um_w.data(), 3 * a * a, 3, 3, w.um_b.data());
    Map3 sr(3, a * lr.h, a * lr.w);
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t yy = 0; yy < lr.h; ++yy)
            for (int64_t xx = 0; xx < lr.w; ++xx)
                for (int64_t dy = 0; dy < a; ++dy)
                    for (int64_t dx = 0; dx < a; ++dx)
                        sr.at(ch, a * yy + dy, a * xx + dx) = um.at(ch * a * a + dy * a + dx, yy, xx);
    return sr;
}

}  // namespace estn::ref
