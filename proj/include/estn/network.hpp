#pragma once

#include <functional>
#include <string>

#include "estn/blocks.hpp"

namespace estn {

enum class LrcabVariant { Original, TwoConv1x1, TwoConv3x3, Lrcab };

inline const char* to_string(LrcabVariant v) {
    switch (v) {
        case LrcabVariant::Original: return "original";
        case LrcabVariant::TwoConv1x1: return "two_1x1";
        case LrcabVariant::TwoConv3x3: return "two_3x3";
        case LrcabVariant::Lrcab: return "lrcab";
    }
    return "lrcab";
}

inline LrcabVariant lrcab_variant_from(const std::string& s) {
    if (s == "original") return LrcabVariant::Original;
    if (s == "two_1x1") return LrcabVariant::TwoConv1x1;
    if (s == "two_3x3") return LrcabVariant::TwoConv3x3;
    if (s == "lrcab") return LrcabVariant::Lrcab;
    throw ValueError("unknown lrcab_variant '" + s + "' (expected original|two_1x1|two_3x3|lrcab)");
}

struct ModelConfig {
    std::int64_t channels = 60;  // C
    std::int64_t blocks = 12;    // ESTM count I
    std::int64_t scale = 4;      // upscale factor a
    std::array<std::pair<std::int64_t, std::int64_t>, 3> mssa_windows{{{4, 4}, {8, 8}, {16, 16}}};
    std::pair<std::int64_t, std::int64_t> bsgm_window{4, 4};
    std::int64_t train_patch = 64;  // LR-space training patch; also the block-dense tile
    bool bsgm_enabled = true;
    LrcabVariant lrcab_variant = LrcabVariant::Lrcab;
    bool share_scores = true;

    void validate() const {
        if (channels < 6 || channels % 3 != 0 || channels % 2 != 0)
            throw ValueError("channels must be >= 6 and divisible by 3 and by the channel-attention ratio 2");
        if (blocks < 1) throw ValueError("blocks must be >= 1");
        if (scale < 1) throw ValueError("scale must be >= 1");
        for (int s = 0; s < 2; ++s) {
            if (!(mssa_windows[s].first < mssa_windows[s + 1].first && mssa_windows[s].second < mssa_windows[s + 1].second))
                throw ValueError("mssa window sizes must be strictly increasing");
        }
        for (const auto& [h, w] : mssa_windows)
            if (h < 1 || w < 1) throw ValueError("mssa windows must be positive");
        if (bsgm_window.first < 1 || bsgm_window.second < 1) throw ValueError("bsgm window must be positive");
        if (train_patch < 1) throw ValueError("train_patch must be >= 1");
        if (train_patch % bsgm_window.first != 0 || train_patch % bsgm_window.second != 0)
            throw ValueError("train_patch must be a multiple of the bsgm window");
    }
};

template <typename T>
struct EstnWeights {
    ModelConfig cfg;
    Tensor<T> sfem_w, sfem_b;  // [C,3,3,3],[C]
    std::vector<EstmWeights<T>> estms;
    Tensor<T> um_w, um_b;  // [3a^2,C,3,3],[3a^2]
};

using EstnWeightsF = EstnWeights<float>;
using EstnWeightsD = EstnWeights<double>;

namespace detail {

template <typename T>
struct Init {
    std::mt19937_64 rng;

    Tensor<T> tensor(Shape shape, std::int64_t fan_in) {
        const T bound = static_cast<T>(std::sqrt(1.0 / static_cast<double>(fan_in)));
        Tensor<T> t = Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
        t.set_requires_grad(true);
        return t;
    }

    void conv(Tensor<T>& w, Tensor<T>& b, std::int64_t cout, std::int64_t cin, std::int64_t kh, std::int64_t kw) {
        const std::int64_t fan_in = cin * kh * kw;
        w = tensor({cout, cin, kh, kw}, fan_in);
        b = tensor({cout}, fan_in);
    }

    void dense(Tensor<T>& w, Tensor<T>& b, std::int64_t out, std::int64_t in) {
        w = tensor({out, in}, in);
        b = tensor({out}, in);
    }
};

template <typename T>
LocalStageWeights<T> make_local_stage(Init<T>& init, std::int64_t c) {
    LocalStageWeights<T> w;
    w.shift_pre = make_shift_kernel<T>(c);
    w.shift_mid = make_shift_kernel<T>(2 * c);
    init.conv(w.expand_w, w.expand_b, 2 * c, c, 1, 1);
    init.conv(w.compress_w, w.compress_b, c, 2 * c, 1, 1);
    return w;
}

template <typename T>
BsgmWeights<T> make_bsgm(Init<T>& init, const ModelConfig& cfg) {
    BsgmWeights<T> w;
    w.win_h = cfg.bsgm_window.first;
    w.win_w = cfg.bsgm_window.second;
    w.tile_h = cfg.train_patch;
    w.tile_w = cfg.train_patch;
    const std::int64_t c = cfg.channels;
    w.ln_gamma = Tensor<T>::full({c}, T(1));
    w.ln_gamma.set_requires_grad(true);
    w.ln_beta = Tensor<T>::zeros({c});
    w.ln_beta.set_requires_grad(true);
    init.dense(w.entry_w, w.entry_b, c, c);
    const std::int64_t bstar = w.trained_block_count();
    init.dense(w.block_w, w.block_b, bstar, bstar);
    init.dense(w.exit_w, w.exit_b, c, c);
    return w;
}

template <typename T>
MssaWeights<T> make_mssa(Init<T>& init, const ModelConfig& cfg) {
    MssaWeights<T> w;
    const std::int64_t c3 = cfg.channels / 3;
    for (int s = 0; s < 3; ++s) {
        auto& sc = w.scales[static_cast<std::size_t>(s)];
        sc.win_h = cfg.mssa_windows[static_cast<std::size_t>(s)].first;
        sc.win_w = cfg.mssa_windows[static_cast<std::size_t>(s)].second;
        init.conv(sc.q_w, sc.q_b, c3, c3, 1, 1);
        init.conv(sc.k_w, sc.k_b, c3, c3, 1, 1);
        init.conv(sc.v_w, sc.v_b, c3, c3, 1, 1);
    }
    init.conv(w.merge_w, w.merge_b, cfg.channels, cfg.channels, 1, 1);
    return w;
}

template <typename T>
LrcabWeights<T> make_lrcab(Init<T>& init, const ModelConfig& cfg) {
    LrcabWeights<T> w;
    const std::int64_t c = cfg.channels;
    switch (cfg.lrcab_variant) {
        case LrcabVariant::Original:
            init.conv(w.conv1_w, w.conv1_b, c, c, 3, 3);
            init.conv(w.conv2_w, w.conv2_b, c, c, 3, 3);
            break;
        case LrcabVariant::TwoConv1x1:
            init.conv(w.conv1_w, w.conv1_b, 2 * c, c, 1, 1);
            init.conv(w.conv2_w, w.conv2_b, c, 2 * c, 1, 1);
            break;
        case LrcabVariant::TwoConv3x3:
            init.conv(w.conv1_w, w.conv1_b, 2 * c, c, 3, 3);
            init.conv(w.conv2_w, w.conv2_b, c, 2 * c, 3, 3);
            break;
        case LrcabVariant::Lrcab:
            init.conv(w.conv1_w, w.conv1_b, 2 * c, c, 1, 1);
            init.conv(w.conv2_w, w.conv2_b, c, 2 * c, 3, 3);
            break;
    }
    init.conv(w.squeeze_w, w.squeeze_b, c / 2, c, 1, 1);
    init.conv(w.excite_w, w.excite_b, c, c / 2, 1, 1);
    return w;
}

}  // namespace detail

template <typename T>
EstnWeights<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    detail::Init<T> init{std::mt19937_64(seed)};
    EstnWeights<T> w;
    w.cfg = cfg;
    init.conv(w.sfem_w, w.sfem_b, cfg.channels, 3, 3, 3);
    w.estms.reserve(static_cast<std::size_t>(cfg.blocks));
    for (std::int64_t i = 0; i < cfg.blocks; ++i) {
        EstmWeights<T> e;
        e.local1 = detail::make_local_stage(init, cfg.channels);
        if (cfg.bsgm_enabled) e.bsgm1 = detail::make_bsgm(init, cfg);
        e.mssa = detail::make_mssa(init, cfg);
        if (!cfg.share_scores) e.mssa_shifted = detail::make_mssa(init, cfg);
        e.lrcab1 = detail::make_lrcab(init, cfg);
        e.local2 = detail::make_local_stage(init, cfg.channels);
        if (cfg.bsgm_enabled) e.bsgm2 = detail::make_bsgm(init, cfg);
        e.lrcab2 = detail::make_lrcab(init, cfg);
        w.estms.push_back(std::move(e));
    }
    init.conv(w.um_w, w.um_b, 3 * cfg.scale * cfg.scale, cfg.channels, 3, 3);
    return w;
}

// Visits every learnable tensor in a stable order (fixed shift kernels are
// not learnable and are skipped). The order defines the serialization and
// optimizer-state layout.
template <typename T, typename F>
void for_each_param(EstnWeights<T>& w, F&& f) {
    auto visit_local = [&](const std::string& p, LocalStageWeights<T>& l) {
        f(p + ".expand.weight", l.expand_w);
        f(p + ".expand.bias", l.expand_b);
        f(p + ".compress.weight", l.compress_w);
        f(p + ".compress.bias", l.compress_b);
    };
    auto visit_bsgm = [&](const std::string& p, BsgmWeights<T>& b) {
        f(p + ".ln.gamma", b.ln_gamma);
        f(p + ".ln.beta", b.ln_beta);
        f(p + ".entry.weight", b.entry_w);
        f(p + ".entry.bias", b.entry_b);
        f(p + ".block.weight", b.block_w);
        f(p + ".block.bias", b.block_b);
        f(p + ".exit.weight", b.exit_w);
        f(p + ".exit.bias", b.exit_b);
    };
    auto visit_mssa = [&](const std::string& p, MssaWeights<T>& m) {
        for (int s = 0; s < 3; ++s) {
            auto& sc = m.scales[static_cast<std::size_t>(s)];
            const std::string sp = p + ".s" + std::to_string(s);
            f(sp + ".q.weight", sc.q_w);
            f(sp + ".q.bias", sc.q_b);
            f(sp + ".k.weight", sc.k_w);
            f(sp + ".k.bias", sc.k_b);
            f(sp + ".v.weight", sc.v_w);
            f(sp + ".v.bias", sc.v_b);
        }
        f(p + ".merge.weight", m.merge_w);
        f(p + ".merge.bias", m.merge_b);
    };
    auto visit_lrcab = [&](const std::string& p, LrcabWeights<T>& l) {
        f(p + ".conv1.weight", l.conv1_w);
        f(p + ".conv1.bias", l.conv1_b);
        f(p + ".conv2.weight", l.conv2_w);
        f(p + ".conv2.bias", l.conv2_b);
        f(p + ".squeeze.weight", l.squeeze_w);
        f(p + ".squeeze.bias", l.squeeze_b);
        f(p + ".excite.weight", l.excite_w);
        f(p + ".excite.bias", l.excite_b);
    };

    f("sfem.weight", w.sfem_w);
    f("sfem.bias", w.sfem_b);
    for (std::size_t i = 0; i < w.estms.size(); ++i) {
        const std::string p = "estm" + std::to_string(i);
        auto& e = w.estms[i];
        visit_local(p + ".local1", e.local1);
        if (e.bsgm1) visit_bsgm(p + ".bsgm1", *e.bsgm1);
        visit_mssa(p + ".mssa", e.mssa);
        if (e.mssa_shifted) visit_mssa(p + ".mssa_sw", *e.mssa_shifted);
        visit_lrcab(p + ".lrcab1", e.lrcab1);
        visit_local(p + ".local2", e.local2);
        if (e.bsgm2) visit_bsgm(p + ".bsgm2", *e.bsgm2);
        visit_lrcab(p + ".lrcab2", e.lrcab2);
    }
    f("um.weight", w.um_w);
    f("um.bias", w.um_b);
}

// Total learnable scalar count; the fixed shift kernels are excluded by
// construction of the visitor.
template <typename T>
std::int64_t count_params(const EstnWeights<T>& w) {
    std::int64_t total = 0;
    for_each_param(const_cast<EstnWeights<T>&>(w), [&](const std::string&, Tensor<T>& t) { total += t.size(); });
    return total;
}

template <typename T>
Tensor<T> forward(const EstnWeights<T>& w, const Tensor<T>& lr) {
    require(lr.rank() == 3 && lr.extent(0) == 3, "forward: expected LR input [3,H,W], got " + shape_str(lr.shape()));
    require(lr.extent(1) >= 2 && lr.extent(2) >= 2, "forward: spatial extents must be >= 2");
    Tensor<T> f0 = conv2d(lr, w.sfem_w, &w.sfem_b, Pad::ZeroSame);
    Tensor<T> f = f0;
    for (const auto& e : w.estms) f = estm_forward(f, e);
    Tensor<T> um = conv2d(add(f, f0), w.um_w, &w.um_b, Pad::ZeroSame);
    return pixel_shuffle(um, w.cfg.scale);
}

// Shallow copy whose tensors share values but carry no autodiff state; lets a
// trained model run as a pure function of its input.
template <typename T>
EstnWeights<T> frozen_view(const EstnWeights<T>& w) {
    EstnWeights<T> v = w;
    for_each_param(v, [](const std::string&, Tensor<T>& t) { t = t.detached(); });
    for (auto& e : v.estms) {
        e.local1.shift_pre = e.local1.shift_pre.detached();
        e.local1.shift_mid = e.local1.shift_mid.detached();
        e.local2.shift_pre = e.local2.shift_pre.detached();
        e.local2.shift_mid = e.local2.shift_mid.detached();
    }
    return v;
}

// Zero every learnable gradient (leaves accumulate until explicitly reset).
template <typename T>
void zero_grads(EstnWeights<T>& w) {
    for_each_param(w, [](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

template <typename T>
EstnWeights<T> cast_weights(const EstnWeights<float>& w) = delete;

// Deep-copies a float model into another scalar type (gradient checking runs
// the same weights in 64-bit).
template <typename From, typename To>
EstnWeights<To> convert_weights(const EstnWeights<From>& w) {
    EstnWeights<To> out = build_model<To>(w.cfg, 0);
    auto& src = const_cast<EstnWeights<From>&>(w);
    std::vector<Tensor<From>*> flat;
    for_each_param(src, [&](const std::string&, Tensor<From>& t) { flat.push_back(&t); });
    std::size_t i = 0;
    for_each_param(out, [&](const std::string&, Tensor<To>& t) {
        t = flat[i]->template cast<To>();
        t.set_requires_grad(true);
        ++i;
    });
    return out;
}

}  // namespace estn
