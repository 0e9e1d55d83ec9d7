#pragma once

#include <array>
#include <optional>

#include "estn/ops_image.hpp"

namespace estn {

// ---------------------------------------------------------------------------
// Shift convolution
// ---------------------------------------------------------------------------

// Builds the fixed depthwise kernel that shifts five contiguous channel
// groups (center / up / down / left / right) by one pixel each. Group sizes
// differ by at most one; the taps are non-learnable one-hot 3x3 slices and
// rely on zero padding to push content out at the borders.
template <typename T>
Tensor<T> make_shift_kernel(std::int64_t channels) {
    require(channels >= 1, "make_shift_kernel: need at least one channel");
    // tap coordinates (dy,dx) per group, acting as out(y,x) = in(y+dy-1, x+dx-1)
    static constexpr std::int64_t taps[5][2] = {
        {1, 1},  // center: identity
        {2, 1},  // up: content moves toward smaller y
        {0, 1},  // down
        {1, 2},  // left: content moves toward smaller x
        {1, 0},  // right
    };
    Tensor<T> k({channels, 3, 3});
    const std::int64_t base = channels / 5;
    const std::int64_t extra = channels % 5;
    std::int64_t ch = 0;
    for (int g = 0; g < 5; ++g) {
        const std::int64_t len = base + (g < extra ? 1 : 0);
        for (std::int64_t i = 0; i < len; ++i, ++ch) k(ch, taps[g][0], taps[g][1]) = T(1);
    }
    return k;
}

// ---------------------------------------------------------------------------
// Weight bundles
// ---------------------------------------------------------------------------

template <typename T>
struct LocalStageWeights {
    Tensor<T> shift_pre;   // fixed [C,3,3]
    Tensor<T> expand_w;    // [2C,C,1,1]
    Tensor<T> expand_b;    // [2C]
    Tensor<T> shift_mid;   // fixed [2C,3,3]
    Tensor<T> compress_w;  // [C,2C,1,1]
    Tensor<T> compress_b;  // [C]
};

template <typename T>
struct BsgmWeights {
    Tensor<T> ln_gamma;  // [C]
    Tensor<T> ln_beta;   // [C]
    Tensor<T> entry_w;   // [C,C] dense over the channel axis
    Tensor<T> entry_b;   // [C]
    Tensor<T> block_w;   // [B*,B*] dense over the block axis
    Tensor<T> block_b;   // [B*]
    Tensor<T> exit_w;    // [C,C]
    Tensor<T> exit_b;    // [C]
    std::int64_t win_h = 4, win_w = 4;
    std::int64_t tile_h = 64, tile_w = 64;  // training patch geometry

    std::int64_t trained_block_count() const { return (tile_h / win_h) * (tile_w / win_w); }
};

template <typename T>
struct MssaWeights {
    struct Scale {
        Tensor<T> q_w, q_b;  // [c3,c3,1,1],[c3]
        Tensor<T> k_w, k_b;
        Tensor<T> v_w, v_b;
        std::int64_t win_h = 0, win_w = 0;
    };
    std::array<Scale, 3> scales;
    Tensor<T> merge_w;  // [C,C,1,1]
    Tensor<T> merge_b;  // [C]
};

template <typename T>
struct LrcabWeights {
    Tensor<T> conv1_w, conv1_b;      // expand
    Tensor<T> conv2_w, conv2_b;      // compress, back to C channels
    Tensor<T> squeeze_w, squeeze_b;  // [C/2,C,1,1]
    Tensor<T> excite_w, excite_b;    // [C,C/2,1,1]
};

template <typename T>
struct EstmWeights {
    LocalStageWeights<T> local1, local2;
    std::optional<BsgmWeights<T>> bsgm1, bsgm2;  // absent when the module is toggled off
    MssaWeights<T> mssa;                         // W-MSSA; also serves SW-MSSA when scores are shared
    std::optional<MssaWeights<T>> mssa_shifted;  // own Q/K/V for SW-MSSA when scores are not shared
    LrcabWeights<T> lrcab1, lrcab2;

    bool share_scores() const { return !mssa_shifted.has_value(); }
};

// Per-forward attention state: the post-softmax probability matrices of each
// W-MSSA scale plus the padded geometry they were computed at. Never shared
// across concurrent forwards.
template <typename T>
struct AttentionCache {
    struct Slot {
        Tensor<T> probs;  // [B, wh*ww, wh*ww]
        std::int64_t pad_h = 0, pad_w = 0;
        bool valid = false;
    };
    std::array<Slot, 3> scales;
};

enum class AttnMode { Compute, Reuse };

// ---------------------------------------------------------------------------
// Stage 1 / stage 3: shift-convolution local aggregation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> local_stage(const Tensor<T>& x, const LocalStageWeights<T>& w) {
    Tensor<T> s1 = depthwise_conv2d(x, w.shift_pre, Pad::ZeroSame);
    Tensor<T> e = relu(conv2d(s1, w.expand_w, &w.expand_b, Pad::None));
    Tensor<T> s2 = depthwise_conv2d(e, w.shift_mid, Pad::ZeroSame);
    Tensor<T> c = conv2d(s2, w.compress_w, &w.compress_b, Pad::None);
    return add(c, x);
}

// ---------------------------------------------------------------------------
// Stage 2 / stage 4: block sparse global-awareness
// ---------------------------------------------------------------------------

namespace detail {

// Permutation that groups window-blocks of a padded map by tile, row-major
// within each tile. Identity when the map is a single tile.
inline std::vector<std::int64_t> tile_block_order(std::int64_t pad_h, std::int64_t pad_w, std::int64_t win_h,
                                                  std::int64_t win_w, std::int64_t tile_h, std::int64_t tile_w) {
    const std::int64_t blocks_x = pad_w / win_w;
    const std::int64_t tiles_y = pad_h / tile_h, tiles_x = pad_w / tile_w;
    const std::int64_t tb_y = tile_h / win_h, tb_x = tile_w / win_w;
    std::vector<std::int64_t> order;
    order.reserve(static_cast<std::size_t>((pad_h / win_h) * blocks_x));
    for (std::int64_t ty = 0; ty < tiles_y; ++ty)
        for (std::int64_t tx = 0; tx < tiles_x; ++tx)
            for (std::int64_t by = 0; by < tb_y; ++by)
                for (std::int64_t bx = 0; bx < tb_x; ++bx) order.push_back((ty * tb_y + by) * blocks_x + tx * tb_x + bx);
    return order;
}

inline std::vector<std::int64_t> invert_permutation(const std::vector<std::int64_t>& p) {
    std::vector<std::int64_t> inv(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) inv[static_cast<std::size_t>(p[i])] = static_cast<std::int64_t>(i);
    return inv;
}

}  // namespace detail

// The feature map is reflect-padded up to whole training tiles; the block
// dense mixes the window-blocks of each tile through the trained operator.
template <typename T>
Tensor<T> bsgm_forward(const Tensor<T>& x, const BsgmWeights<T>& w) {
    require(x.rank() == 3, "bsgm_forward: expected [C,H,W]");
    const std::int64_t c = x.extent(0);
    require(w.ln_gamma.size() == c, "bsgm_forward: channel mismatch with weights");
    require(w.tile_h % w.win_h == 0 && w.tile_w % w.win_w == 0, "bsgm_forward: tile not divisible by window");
    const std::int64_t bstar = w.trained_block_count();
    if (w.block_w.extent(0) != bstar || w.block_w.extent(1) != bstar)
        throw ShapeError("bsgm_forward: block count " + std::to_string(bstar) + " does not match trained block dense " +
                         shape_str(w.block_w.shape()));

    auto [xp, rec] = pad_reflect(x, w.tile_h, w.tile_w);
    const std::int64_t hp = xp.extent(1), wp = xp.extent(2);

    Tensor<T> hwc = chw_to_hwc(xp);
    Tensor<T> x1 = gelu(dense(layer_norm(hwc, 2, w.ln_gamma, w.ln_beta), 2, w.entry_w, &w.entry_b));
    Tensor<T> blocks = grid_partition(x1, w.win_h, w.win_w);  // [B_all, n, C]
    const std::int64_t n = blocks.extent(1);
    const std::int64_t b_all = blocks.extent(0);
    const std::int64_t tiles = b_all / bstar;

    Tensor<T> mixed;
    if (tiles == 1) {
        mixed = dense(reshape(blocks, {1, bstar, n, c}), 1, w.block_w, &w.block_b);
        mixed = reshape(mixed, {b_all, n, c});
    } else {
        const auto order = detail::tile_block_order(hp, wp, w.win_h, w.win_w, w.tile_h, w.tile_w);
        Tensor<T> grouped = reshape(gather0(blocks, order), {tiles, bstar, n, c});
        mixed = dense(grouped, 1, w.block_w, &w.block_b);
        mixed = gather0(reshape(mixed, {b_all, n, c}), detail::invert_permutation(order));
    }
    Tensor<T> x4 = grid_merge(mixed, hp, wp, w.win_h, w.win_w);
    Tensor<T> out_hwc = add(dense(x4, 2, w.exit_w, &w.exit_b), x1);
    return crop_to(hwc_to_chw(out_hwc), rec);
}

// ---------------------------------------------------------------------------
// Window attention
// ---------------------------------------------------------------------------

// Per-window scaled dot-product attention over the channel features of each
// window position; scores are scaled by 1/sqrt(wh*ww). In Compute mode the
// probability matrices are written to `slot` (when given); Reuse mode applies
// the stored matrices to freshly computed values and never mutates the slot.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, const typename MssaWeights<T>::Scale& w,
                           typename AttentionCache<T>::Slot* slot, AttnMode mode) {
    require(x.rank() == 3, "window_attention: expected [C,H,W]");
    auto [xp, rec] = pad_reflect(x, w.win_h, w.win_w);
    const std::int64_t hp = xp.extent(1), wp = xp.extent(2);
    const std::int64_t n = w.win_h * w.win_w;

    Tensor<T> v_win = grid_partition(chw_to_hwc(conv2d(xp, w.v_w, &w.v_b, Pad::None)), w.win_h, w.win_w);
    Tensor<T> probs;
    if (mode == AttnMode::Compute) {
        Tensor<T> q_win = grid_partition(chw_to_hwc(conv2d(xp, w.q_w, &w.q_b, Pad::None)), w.win_h, w.win_w);
        Tensor<T> k_win = grid_partition(chw_to_hwc(conv2d(xp, w.k_w, &w.k_b, Pad::None)), w.win_h, w.win_w);
        Tensor<T> scores = scale(matmul(q_win, transpose_last2(k_win)), T(1) / std::sqrt(static_cast<T>(n)));
        probs = softmax_rows(scores);
        if (slot) {
            slot->probs = probs;
            slot->pad_h = hp;
            slot->pad_w = wp;
            slot->valid = true;
        }
    } else {
        if (!slot || !slot->valid)
            throw ShapeError("window_attention: reuse mode requires a populated attention cache");
        if (slot->pad_h != hp || slot->pad_w != wp || slot->probs.extent(0) != v_win.extent(0) ||
            slot->probs.extent(1) != n || slot->probs.extent(2) != n)
            throw ShapeError("window_attention: cached attention shape " + shape_str(slot->probs.shape()) +
                             " does not match padded geometry " + std::to_string(hp) + "x" + std::to_string(wp));
        probs = slot->probs;
    }
    Tensor<T> out_win = matmul(probs, v_win);
    return crop_to(hwc_to_chw(grid_merge(out_win, hp, wp, w.win_h, w.win_w)), rec);
}

// ---------------------------------------------------------------------------
// W-MSSA / SW-MSSA
// ---------------------------------------------------------------------------

// Shared engine: split channels into thirds, run window attention per scale
// (optionally on cyclically shifted features), concatenate, 1x1 merge.
template <typename T>
Tensor<T> mssa_apply(const Tensor<T>& x, const MssaWeights<T>& w, AttentionCache<T>* cache, AttnMode mode,
                     const std::array<std::pair<std::int64_t, std::int64_t>, 3>& shifts) {
    require(x.rank() == 3, "mssa: expected [C,H,W]");
    const std::int64_t c = x.extent(0);
    require(c % 3 == 0, "mssa: channel count " + std::to_string(c) + " not divisible by 3");
    const std::int64_t c3 = c / 3;
    std::vector<Tensor<T>> outs;
    outs.reserve(3);
    for (int s = 0; s < 3; ++s) {
        Tensor<T> xs = slice0(x, s * c3, c3);
        const auto [sy, sx] = shifts[static_cast<std::size_t>(s)];
        if (sy != 0 || sx != 0) xs = cyclic_shift(xs, sy, sx);
        Tensor<T> ys = window_attention(xs, w.scales[static_cast<std::size_t>(s)],
                                        cache ? &cache->scales[static_cast<std::size_t>(s)] : nullptr, mode);
        if (sy != 0 || sx != 0) ys = cyclic_shift(ys, -sy, -sx);
        outs.push_back(ys);
    }
    return conv2d(concat0(outs), w.merge_w, &w.merge_b, Pad::None);
}

template <typename T>
Tensor<T> w_mssa_forward(const Tensor<T>& x, const MssaWeights<T>& w, AttentionCache<T>& cache) {
    return mssa_apply(x, w, &cache, AttnMode::Compute, {{{0, 0}, {0, 0}, {0, 0}}});
}

// Cyclic shift by half the window size per scale. With shared scores the
// cached W-MSSA probabilities are applied to values computed from the shifted
// features; otherwise `w` is this stage's own weight set and the attention is
// recomputed (without touching the cache).
template <typename T>
Tensor<T> sw_mssa_forward(const Tensor<T>& x, const MssaWeights<T>& w, AttentionCache<T>& cache, bool share_scores) {
    std::array<std::pair<std::int64_t, std::int64_t>, 3> shifts;
    for (int s = 0; s < 3; ++s)
        shifts[static_cast<std::size_t>(s)] = {w.scales[static_cast<std::size_t>(s)].win_h / 2,
                                               w.scales[static_cast<std::size_t>(s)].win_w / 2};
    if (share_scores) return mssa_apply(x, w, &cache, AttnMode::Reuse, shifts);
    return mssa_apply(x, w, static_cast<AttentionCache<T>*>(nullptr), AttnMode::Compute, shifts);
}

// ---------------------------------------------------------------------------
// LRCAB
// ---------------------------------------------------------------------------

// Expand/compress convs followed by squeeze-excite channel gating; no outer
// residual (callers pick the residual target).
template <typename T>
Tensor<T> lrcab_core(const Tensor<T>& x, const LrcabWeights<T>& w) {
    Tensor<T> t = conv2d(relu(conv2d(x, w.conv1_w, &w.conv1_b, Pad::ZeroSame)), w.conv2_w, &w.conv2_b, Pad::ZeroSame);
    Tensor<T> s = sigmoid(
        conv2d(relu(conv2d(global_avg_pool(t), w.squeeze_w, &w.squeeze_b, Pad::None)), w.excite_w, &w.excite_b, Pad::None));
    return scale_channels(t, s);
}

template <typename T>
Tensor<T> lrcab_forward(const Tensor<T>& x, const LrcabWeights<T>& w) {
    return add(lrcab_core(x, w), x);
}

// ---------------------------------------------------------------------------
// ESTM: the four-stage module
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> estm_forward(const Tensor<T>& x, const EstmWeights<T>& w) {
    Tensor<T> o1 = local_stage(x, w.local1);
    Tensor<T> b0 = w.bsgm1 ? bsgm_forward(o1, *w.bsgm1) : o1;
    AttentionCache<T> cache;
    Tensor<T> wm = w_mssa_forward(b0, w.mssa, cache);
    Tensor<T> o2 = add(lrcab_forward(wm, w.lrcab1), o1);
    Tensor<T> o3 = local_stage(o2, w.local2);
    Tensor<T> b1 = w.bsgm2 ? bsgm_forward(o3, *w.bsgm2) : o3;
    Tensor<T> sw = w.share_scores() ? sw_mssa_forward(b1, w.mssa, cache, true)
                                    : sw_mssa_forward(b1, *w.mssa_shifted, cache, false);
    return add(lrcab_core(sw, w.lrcab2), o3);
}

}  // namespace estn
