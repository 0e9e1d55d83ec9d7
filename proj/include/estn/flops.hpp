#pragma once

#include <string>
#include <vector>

#include "estn/network.hpp"

namespace estn {

// Analytic multiply-accumulate model, counted as 2 FLOPs per MAC:
//   conv:      2 * Cout * Cin * kh * kw per output pixel
//   dense:     2 * in * out per application (one application per batched slice)
//   attention: 2 * (n^2 d + n^2 d) per window of n tokens and head width d
//              (score matrix + probability-value product); value-only reuse
//              in SW-MSSA drops the score half and the Q/K convs
// Fixed shift kernels, activations, norms and the pixel shuffle count as 0.
struct FlopBreakdown {
    std::vector<std::pair<std::string, double>> entries;
    double total = 0;

    void add(const std::string& name, double flops) {
        entries.emplace_back(name, flops);
        total += flops;
    }
};

namespace detail {

inline std::int64_t round_up_to(std::int64_t n, std::int64_t m) { return ((n + m - 1) / m) * m; }

inline double conv_flops(std::int64_t cout, std::int64_t cin, std::int64_t kh, std::int64_t kw, std::int64_t h,
                         std::int64_t w) {
    return 2.0 * static_cast<double>(cout) * static_cast<double>(cin) * static_cast<double>(kh * kw) *
           static_cast<double>(h * w);
}

}  // namespace detail

// FLOPs of one forward pass producing `out_w` x `out_h` SR output; the LR
// working resolution is out/scale (floor).
inline FlopBreakdown estimate_flops(const ModelConfig& cfg, std::int64_t out_w = 1280, std::int64_t out_h = 720) {
    cfg.validate();
    const std::int64_t h = out_h / cfg.scale, w = out_w / cfg.scale;
    const std::int64_t c = cfg.channels, c3 = c / 3;
    const double I = static_cast<double>(cfg.blocks);
    FlopBreakdown fb;

    fb.add("sfem", detail::conv_flops(c, 3, 3, 3, h, w));

    // two local stages per ESTM: 1x1 expand C->2C and 1x1 compress 2C->C
    fb.add("estm.local", I * 2.0 * (detail::conv_flops(2 * c, c, 1, 1, h, w) + detail::conv_flops(c, 2 * c, 1, 1, h, w)));

    if (cfg.bsgm_enabled) {
        const std::int64_t tile = cfg.train_patch;
        const std::int64_t hp = detail::round_up_to(h, tile), wp = detail::round_up_to(w, tile);
        const std::int64_t tiles = (hp / tile) * (wp / tile);
        const std::int64_t n = cfg.bsgm_window.first * cfg.bsgm_window.second;
        const std::int64_t bstar = (tile / cfg.bsgm_window.first) * (tile / cfg.bsgm_window.second);
        const double channel_dense = 2.0 * static_cast<double>(c) * static_cast<double>(c) * static_cast<double>(hp * wp);
        const double block_dense =
            2.0 * static_cast<double>(bstar) * static_cast<double>(bstar) * static_cast<double>(tiles * n * c);
        fb.add("estm.bsgm", I * 2.0 * (2.0 * channel_dense + block_dense));
    }

    // W-MSSA: Q,K,V convs and both attention products per scale, plus merge
    double wmssa = 0.0, swmssa = 0.0;
    for (const auto& [wh, ww] : cfg.mssa_windows) {
        const std::int64_t hs = detail::round_up_to(h, wh), ws = detail::round_up_to(w, ww);
        const std::int64_t windows = (hs / wh) * (ws / ww);
        const double n = static_cast<double>(wh * ww);
        const double qkv = detail::conv_flops(c3, c3, 1, 1, hs, ws);
        wmssa += 3.0 * qkv + static_cast<double>(windows) * 4.0 * n * n * static_cast<double>(c3);
        if (cfg.share_scores) {
            swmssa += qkv + static_cast<double>(windows) * 2.0 * n * n * static_cast<double>(c3);
        } else {
            swmssa += 3.0 * qkv + static_cast<double>(windows) * 4.0 * n * n * static_cast<double>(c3);
        }
    }
    const double merge = detail::conv_flops(c, c, 1, 1, h, w);
    fb.add("estm.wmssa", I * (wmssa + merge));
    fb.add("estm.swmssa", I * (swmssa + merge));

    // two LRCABs per ESTM
    std::int64_t k1 = 1, k2 = 3, cmid = 2 * c;
    switch (cfg.lrcab_variant) {
        case LrcabVariant::Original: k1 = 3, k2 = 3, cmid = c; break;
        case LrcabVariant::TwoConv1x1: k1 = 1, k2 = 1, cmid = 2 * c; break;
        case LrcabVariant::TwoConv3x3: k1 = 3, k2 = 3, cmid = 2 * c; break;
        case LrcabVariant::Lrcab: k1 = 1, k2 = 3, cmid = 2 * c; break;
    }
    const double se = 2.0 * (2.0 * static_cast<double>(c) * static_cast<double>(c / 2));
    fb.add("estm.lrcab",
           I * 2.0 * (detail::conv_flops(cmid, c, k1, k1, h, w) + detail::conv_flops(c, cmid, k2, k2, h, w) + se));

    fb.add("um", detail::conv_flops(3 * cfg.scale * cfg.scale, c, 3, 3, h, w));
    return fb;
}

}  // namespace estn
