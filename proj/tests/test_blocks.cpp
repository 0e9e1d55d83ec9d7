#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "estn/gradcheck.hpp"
#include "estn/reference.hpp"

using estn::Tensor;
using estn::TensorD;

namespace {

estn::ModelConfig tiny_config() {
    estn::ModelConfig cfg;
    cfg.channels = 6;
    cfg.blocks = 1;
    cfg.scale = 2;
    cfg.mssa_windows = {{{2, 2}, {4, 4}, {8, 8}}};
    cfg.bsgm_window = {2, 2};
    cfg.train_patch = 8;
    return cfg;
}

TensorD random_chw(estn::Shape s, std::mt19937_64& rng) { return TensorD::uniform(std::move(s), -1.0, 1.0, rng); }

void zero_params(estn::EstnWeights<double>& w) {
    estn::for_each_param(w, [](const std::string&, TensorD& t) { std::fill(t.data(), t.data() + t.size(), 0.0); });
}

void check_close(const TensorD& got, const estn::ref::Map3& want, double tol) {
    REQUIRE(got.size() == static_cast<std::int64_t>(want.v.size()));
    for (std::int64_t i = 0; i < got.size(); ++i) {
        const double denom = std::max({std::abs(want.v[static_cast<std::size_t>(i)]), std::abs(got.data()[i]), 1.0});
        CHECK(std::abs(got.data()[i] - want.v[static_cast<std::size_t>(i)]) / denom < tol);
    }
}

}  // namespace

TEST_CASE("shift kernel: five one-hot groups covering all channels") {
    TensorD k = estn::make_shift_kernel<double>(7);
    // every slice has exactly one tap set to 1
    for (int c = 0; c < 7; ++c) {
        double s = 0;
        for (int i = 0; i < 9; ++i) s += k.data()[c * 9 + i];
        CHECK(s == 1.0);
    }
    // group sizes differ by at most one: 7 -> 2,2,1,1,1
    CHECK(k(0, 1, 1) == 1.0);
    CHECK(k(1, 1, 1) == 1.0);
    CHECK(k(2, 2, 1) == 1.0);
    CHECK(k(3, 2, 1) == 1.0);
    CHECK(k(4, 0, 1) == 1.0);
    CHECK(k(5, 1, 2) == 1.0);
    CHECK(k(6, 1, 0) == 1.0);
}

TEST_CASE("local_stage: zero learnable weights is a bit-exact identity") {
    auto w = estn::build_model<double>(tiny_config(), 7);
    zero_params(w);
    std::mt19937_64 rng(3);
    TensorD x = random_chw({6, 5, 9}, rng);
    TensorD y = estn::local_stage(x, w.estms[0].local1);
    REQUIRE(y.shape() == x.shape());
    CHECK(std::equal(x.data(), x.data() + x.size(), y.data()));
}

TEST_CASE("local_stage: 1x1 spatial input evaluated by hand") {
    // With H=W=1 every shifted group is pushed out by zero padding, so only
    // the center group survives each shift conv.
    estn::LocalStageWeights<double> w;
    const std::int64_t c = 5, c2 = 10;
    w.shift_pre = estn::make_shift_kernel<double>(c);   // center group = channel 0
    w.shift_mid = estn::make_shift_kernel<double>(c2);  // center group = channels 0,1
    w.expand_w = TensorD({c2, c, 1, 1});
    w.expand_b = TensorD({c2});
    w.compress_w = TensorD({c, c2, 1, 1});
    w.compress_b = TensorD({c});
    for (std::int64_t i = 0; i < c2; ++i) w.expand_w(i, i % c, 0, 0) = 1.0;  // copy channels round-robin
    for (std::int64_t i = 0; i < c2; ++i) w.expand_b(i) = 0.5;
    for (std::int64_t i = 0; i < c; ++i) w.compress_w(i, 0, 0, 0) = 2.0;  // read surviving channel 0
    TensorD x({c, 1, 1}, {0.3, -0.7, 0.1, 0.9, -0.2});
    TensorD y = estn::local_stage(x, w);
    // shift1 keeps only channel 0 (=0.3); expand row i reads x[i%5] of the
    // shifted map => rows reading channel 0 get 0.3, others 0; +0.5 bias; relu.
    // shift2 keeps channels 0,1: e0 = 0.8, e1 = 0.5 (reads zeroed ch1).
    // compress: out_i = 2.0 * e0 = 1.6; residual adds x.
    for (std::int64_t i = 0; i < c; ++i) CHECK(y(i, 0, 0) == doctest::Approx(1.6 + x(i, 0, 0)).epsilon(1e-12));
}

TEST_CASE("local_stage: shape preserved on random extents") {
    auto w = estn::build_model<double>(tiny_config(), 11);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 5; ++t) {
        std::uniform_int_distribution<std::int64_t> d(2, 13);
        TensorD x = random_chw({6, d(rng), d(rng)}, rng);
        TensorD y = estn::local_stage(x, w.estms[0].local1);
        CHECK(y.shape() == x.shape());
    }
}

TEST_CASE("bsgm: identity block dense and zero exit dense reduce to the X1 path") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 19);
    auto& w = *model.estms[0].bsgm1;
    // entry dense = identity, gamma=1, beta=0
    std::fill(w.entry_w.data(), w.entry_w.data() + w.entry_w.size(), 0.0);
    for (std::int64_t i = 0; i < 6; ++i) w.entry_w(i, i) = 1.0;
    std::fill(w.entry_b.data(), w.entry_b.data() + w.entry_b.size(), 0.0);
    std::fill(w.ln_gamma.data(), w.ln_gamma.data() + w.ln_gamma.size(), 1.0);
    std::fill(w.ln_beta.data(), w.ln_beta.data() + w.ln_beta.size(), 0.0);
    const std::int64_t bstar = w.trained_block_count();
    std::fill(w.block_w.data(), w.block_w.data() + w.block_w.size(), 0.0);
    for (std::int64_t i = 0; i < bstar; ++i) w.block_w(i, i) = 1.0;
    std::fill(w.block_b.data(), w.block_b.data() + w.block_b.size(), 0.0);
    std::fill(w.exit_w.data(), w.exit_w.data() + w.exit_w.size(), 0.0);
    std::fill(w.exit_b.data(), w.exit_b.data() + w.exit_b.size(), 0.0);

    std::mt19937_64 rng(5);
    TensorD x = random_chw({6, 8, 8}, rng);
    TensorD out = estn::bsgm_forward(x, w);
    // expected: gelu(layer_norm(x)) channelwise
    TensorD hwc = estn::chw_to_hwc(x);
    TensorD x1 = estn::gelu(estn::layer_norm(hwc, 2, w.ln_gamma, w.ln_beta));
    TensorD want = estn::hwc_to_chw(x1);
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));

    // constant input: LN gives zeros, gelu(0)=0, so the whole output is zero
    TensorD c = TensorD::full({6, 8, 8}, 3.7);
    TensorD zout = estn::bsgm_forward(c, w);
    for (std::int64_t i = 0; i < zout.size(); ++i) CHECK(zout.data()[i] == doctest::Approx(0.0));
}

TEST_CASE("bsgm: block-permutation equivariance on an 8x8 toy") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 23);
    auto w = *model.estms[0].bsgm1;  // window 2x2 on an 8x8 tile -> 16 blocks
    std::mt19937_64 rng(6);
    TensorD x = random_chw({6, 8, 8}, rng);

    // swap two window-blocks of the input spatially
    const std::int64_t b1 = 3, b2 = 10, bx = 4;  // block grid is 4x4
    auto swap_blocks = [&](const TensorD& in) {
        TensorD out = in.clone();
        for (std::int64_t ch = 0; ch < 6; ++ch)
            for (std::int64_t py = 0; py < 2; ++py)
                for (std::int64_t px = 0; px < 2; ++px) {
                    const std::int64_t y1 = (b1 / bx) * 2 + py, x1 = (b1 % bx) * 2 + px;
                    const std::int64_t y2 = (b2 / bx) * 2 + py, x2 = (b2 % bx) * 2 + px;
                    out(ch, y1, x1) = in(ch, y2, x2);
                    out(ch, y2, x2) = in(ch, y1, x1);
                }
        return out;
    };

    // permute D_f rows and columns the same way
    auto wp = w;
    wp.block_w = w.block_w.clone();
    wp.block_b = w.block_b.clone();
    auto pidx = [&](std::int64_t i) { return i == b1 ? b2 : (i == b2 ? b1 : i); };
    const std::int64_t bstar = w.trained_block_count();
    for (std::int64_t i = 0; i < bstar; ++i) {
        wp.block_b(pidx(i)) = w.block_b(i);
        for (std::int64_t j = 0; j < bstar; ++j) wp.block_w(pidx(i), pidx(j)) = w.block_w(i, j);
    }

    TensorD lhs = estn::bsgm_forward(swap_blocks(x), wp);
    TensorD rhs = swap_blocks(estn::bsgm_forward(x, w));
    for (std::int64_t i = 0; i < lhs.size(); ++i) CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-10));
}

TEST_CASE("bsgm: block-count mismatch with the trained dense is rejected") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 29);
    auto w = *model.estms[0].bsgm1;
    w.tile_h = 16;  // claims 8x4... actually (16/2)*(8/2) blocks; dense stays 16x16
    CHECK_THROWS_AS(estn::bsgm_forward(TensorD::zeros({6, 8, 8}), w), estn::ShapeError);
}

TEST_CASE("bsgm: matches the straight-line oracle, including multi-tile inputs") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 31);
    const auto& w = *model.estms[0].bsgm1;
    std::mt19937_64 rng(7);
    for (estn::Shape s : {estn::Shape{6, 8, 8}, estn::Shape{6, 16, 8}, estn::Shape{6, 11, 13}}) {
        TensorD x = random_chw(s, rng);
        TensorD got = estn::bsgm_forward(x, w);
        estn::ref::Map3 want = estn::ref::bsgm(estn::ref::from_tensor(x), w);
        check_close(got, want, 1e-10);
    }
}

TEST_CASE("window_attention: zero query gives windowed means of V") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 37);
    auto sc = model.estms[0].mssa.scales[0];  // 2x2 windows, 2 channels
    std::fill(sc.q_w.data(), sc.q_w.data() + sc.q_w.size(), 0.0);
    std::fill(sc.q_b.data(), sc.q_b.data() + sc.q_b.size(), 0.0);
    std::mt19937_64 rng(8);
    TensorD x = random_chw({2, 4, 4}, rng);
    TensorD y = estn::window_attention(x, sc, static_cast<estn::AttentionCache<double>::Slot*>(nullptr),
                                       estn::AttnMode::Compute);
    TensorD v = estn::conv2d(x, sc.v_w, &sc.v_b, estn::Pad::None);
    for (std::int64_t ch = 0; ch < 2; ++ch)
        for (std::int64_t wy = 0; wy < 2; ++wy)
            for (std::int64_t wx = 0; wx < 2; ++wx) {
                double mean = 0;
                for (std::int64_t py = 0; py < 2; ++py)
                    for (std::int64_t px = 0; px < 2; ++px) mean += v(ch, 2 * wy + py, 2 * wx + px);
                mean /= 4.0;
                for (std::int64_t py = 0; py < 2; ++py)
                    for (std::int64_t px = 0; px < 2; ++px)
                        CHECK(y(ch, 2 * wy + py, 2 * wx + px) == doctest::Approx(mean).epsilon(1e-12));
            }
}

TEST_CASE("window_attention: 1x1 window degenerates to the value conv") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 41);
    auto sc = model.estms[0].mssa.scales[0];
    sc.win_h = sc.win_w = 1;
    std::mt19937_64 rng(9);
    TensorD x = random_chw({2, 3, 5}, rng);
    TensorD y = estn::window_attention(x, sc, static_cast<estn::AttentionCache<double>::Slot*>(nullptr),
                                       estn::AttnMode::Compute);
    TensorD v = estn::conv2d(x, sc.v_w, &sc.v_b, estn::Pad::None);
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(v.data()[i]).epsilon(1e-12));
}

TEST_CASE("attention cache: probability rows sum to one; reuse does not mutate") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 43);
    std::mt19937_64 rng(10);
    TensorD x = random_chw({6, 10, 6}, rng);  // exercises reflect padding
    estn::AttentionCache<double> cache;
    TensorD y = estn::w_mssa_forward(x, model.estms[0].mssa, cache);
    REQUIRE(y.shape() == x.shape());
    for (const auto& slot : cache.scales) {
        REQUIRE(slot.valid);
        const auto& p = slot.probs;
        const std::int64_t rows = p.extent(0) * p.extent(1), n = p.extent(2);
        for (std::int64_t r = 0; r < rows; ++r) {
            double s = 0;
            for (std::int64_t j = 0; j < n; ++j) s += p.data()[r * n + j];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    std::array<std::vector<double>, 3> before;
    for (int s = 0; s < 3; ++s) before[s].assign(cache.scales[s].probs.data(),
                                                 cache.scales[s].probs.data() + cache.scales[s].probs.size());
    estn::sw_mssa_forward(x, model.estms[0].mssa, cache, true);
    for (int s = 0; s < 3; ++s)
        CHECK(std::equal(before[s].begin(), before[s].end(), cache.scales[s].probs.data()));
}

TEST_CASE("sw_mssa: reuse mode without a populated cache is an error") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 47);
    estn::AttentionCache<double> cache;
    TensorD x = TensorD::zeros({6, 8, 8});
    CHECK_THROWS_AS(estn::sw_mssa_forward(x, model.estms[0].mssa, cache, true), estn::ShapeError);
}

TEST_CASE("w_mssa / sw_mssa match the explicit-loop oracle") {
    auto cfg = tiny_config();
    cfg.share_scores = false;
    auto model = estn::build_model<double>(cfg, 53);
    std::mt19937_64 rng(11);
    for (estn::Shape s : {estn::Shape{6, 8, 8}, estn::Shape{6, 10, 14}, estn::Shape{6, 9, 6}}) {
        TensorD x = random_chw(s, rng);
        estn::AttentionCache<double> cache;
        TensorD got_w = estn::w_mssa_forward(x, model.estms[0].mssa, cache);
        std::array<std::pair<std::int64_t, std::int64_t>, 3> zero{{{0, 0}, {0, 0}, {0, 0}}};
        auto want_w = estn::ref::mssa(estn::ref::from_tensor(x), model.estms[0].mssa, zero);
        check_close(got_w, want_w.out, 1e-10);

        TensorD got_sw = estn::sw_mssa_forward(x, *model.estms[0].mssa_shifted, cache, false);
        std::array<std::pair<std::int64_t, std::int64_t>, 3> half;
        for (int i = 0; i < 3; ++i)
            half[i] = {model.estms[0].mssa_shifted->scales[i].win_h / 2, model.estms[0].mssa_shifted->scales[i].win_w / 2};
        auto want_sw = estn::ref::mssa(estn::ref::from_tensor(x), *model.estms[0].mssa_shifted, half);
        check_close(got_sw, want_sw.out, 1e-10);
    }
}

TEST_CASE("sw_mssa with shared scores matches the oracle's reuse semantics") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 59);
    std::mt19937_64 rng(12);
    TensorD x = random_chw({6, 8, 8}, rng);
    estn::AttentionCache<double> cache;
    estn::w_mssa_forward(x, model.estms[0].mssa, cache);
    TensorD got = estn::sw_mssa_forward(x, model.estms[0].mssa, cache, true);

    std::array<std::pair<std::int64_t, std::int64_t>, 3> zero{{{0, 0}, {0, 0}, {0, 0}}};
    auto base = estn::ref::mssa(estn::ref::from_tensor(x), model.estms[0].mssa, zero);
    std::array<std::pair<std::int64_t, std::int64_t>, 3> half;
    for (int i = 0; i < 3; ++i)
        half[i] = {model.estms[0].mssa.scales[i].win_h / 2, model.estms[0].mssa.scales[i].win_w / 2};
    auto want = estn::ref::mssa(estn::ref::from_tensor(x), model.estms[0].mssa, half, &base.probs);
    check_close(got, want.out, 1e-10);
}

TEST_CASE("sw_mssa with zero shift equals w_mssa bit-exactly") {
    auto cfg = tiny_config();
    cfg.share_scores = false;
    auto model = estn::build_model<double>(cfg, 61);
    std::mt19937_64 rng(13);
    TensorD x = random_chw({6, 12, 10}, rng);
    estn::AttentionCache<double> cache;
    TensorD w = estn::w_mssa_forward(x, model.estms[0].mssa, cache);
    std::array<std::pair<std::int64_t, std::int64_t>, 3> zero{{{0, 0}, {0, 0}, {0, 0}}};
    TensorD sw = estn::mssa_apply(x, model.estms[0].mssa, static_cast<estn::AttentionCache<double>*>(nullptr),
                                  estn::AttnMode::Compute, zero);
    CHECK(std::equal(w.data(), w.data() + w.size(), sw.data()));
}

TEST_CASE("full-image window: uniform attention broadcasts the global mean, shift-invariant") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 67);
    auto sc = model.estms[0].mssa.scales[0];
    sc.win_h = 4;
    sc.win_w = 4;  // the whole padded 4x4 image is one window
    std::fill(sc.q_w.data(), sc.q_w.data() + sc.q_w.size(), 0.0);
    std::fill(sc.q_b.data(), sc.q_b.data() + sc.q_b.size(), 0.0);
    std::mt19937_64 rng(14);
    TensorD x = random_chw({2, 4, 4}, rng);
    TensorD plain = estn::window_attention(x, sc, static_cast<estn::AttentionCache<double>::Slot*>(nullptr),
                                           estn::AttnMode::Compute);
    TensorD rolled = estn::cyclic_shift(
        estn::window_attention(estn::cyclic_shift(x, 2, 2), sc, static_cast<estn::AttentionCache<double>::Slot*>(nullptr),
                               estn::AttnMode::Compute),
        -2, -2);
    TensorD v = estn::conv2d(x, sc.v_w, &sc.v_b, estn::Pad::None);
    for (std::int64_t ch = 0; ch < 2; ++ch) {
        double mean = 0;
        for (std::int64_t i = 0; i < 16; ++i) mean += v.data()[ch * 16 + i];
        mean /= 16.0;
        for (std::int64_t i = 0; i < 16; ++i) {
            CHECK(plain.data()[ch * 16 + i] == doctest::Approx(mean).epsilon(1e-10));
            CHECK(rolled.data()[ch * 16 + i] == doctest::Approx(mean).epsilon(1e-10));
        }
    }
}

TEST_CASE("lrcab: zero weights is a bit-exact identity; gate lies in (0,1)") {
    auto model = estn::build_model<double>(tiny_config(), 71);
    auto w = model.estms[0].lrcab1;
    estn::for_each_param(model, [](const std::string&, TensorD& t) { std::fill(t.data(), t.data() + t.size(), 0.0); });
    std::mt19937_64 rng(15);
    TensorD x = random_chw({6, 7, 5}, rng);
    TensorD y = estn::lrcab_forward(x, w);
    CHECK(std::equal(x.data(), x.data() + x.size(), y.data()));
}

TEST_CASE("lrcab: two-channel toy evaluated by hand") {
    estn::LrcabWeights<double> w;
    const std::int64_t c = 2;
    w.conv1_w = TensorD({2 * c, c, 1, 1});
    w.conv1_b = TensorD({2 * c});
    w.conv2_w = TensorD({c, 2 * c, 3, 3});
    w.conv2_b = TensorD({c});
    w.squeeze_w = TensorD({1, c, 1, 1});
    w.squeeze_b = TensorD({1});
    w.excite_w = TensorD({c, 1, 1, 1});
    w.excite_b = TensorD({c});
    // conv1: channel i of the expansion copies input channel i%2
    for (std::int64_t i = 0; i < 4; ++i) w.conv1_w(i, i % 2, 0, 0) = 1.0;
    // conv2: center tap reads expansion channel 0 into both outputs
    w.conv2_w(0, 0, 1, 1) = 1.0;
    w.conv2_w(1, 0, 1, 1) = 1.0;
    w.squeeze_w(0, 0, 0, 0) = 1.0;  // pooled channel 0
    w.excite_w(0, 0, 0, 0) = 1.0;
    w.excite_w(1, 0, 0, 0) = -1.0;
    TensorD x({2, 1, 1}, {0.5, -0.25});
    // t = [relu(0.5), relu(0.5)] = [0.5, 0.5]; pooled = [0.5, 0.5]
    // squeeze -> relu(0.5) = 0.5; excite -> [0.5, -0.5]
    // gates = [sigmoid(0.5), sigmoid(-0.5)]; out = gate*t + x
    TensorD y = estn::lrcab_forward(x, w);
    const double g0 = 1.0 / (1.0 + std::exp(-0.5));
    const double g1 = 1.0 / (1.0 + std::exp(0.5));
    CHECK(y(0, 0, 0) == doctest::Approx(g0 * 0.5 + 0.5).epsilon(1e-12));
    CHECK(y(1, 0, 0) == doctest::Approx(g1 * 0.5 - 0.25).epsilon(1e-12));

    // gate range on random inputs
    std::mt19937_64 rng(16);
    auto model = estn::build_model<double>(tiny_config(), 73);
    TensorD xr = random_chw({6, 6, 6}, rng);
    TensorD t = estn::conv2d(estn::relu(estn::conv2d(xr, model.estms[0].lrcab1.conv1_w, &model.estms[0].lrcab1.conv1_b,
                                                     estn::Pad::ZeroSame)),
                             model.estms[0].lrcab1.conv2_w, &model.estms[0].lrcab1.conv2_b, estn::Pad::ZeroSame);
    TensorD s = estn::sigmoid(estn::conv2d(
        estn::relu(estn::conv2d(estn::global_avg_pool(t), model.estms[0].lrcab1.squeeze_w,
                                &model.estms[0].lrcab1.squeeze_b, estn::Pad::None)),
        model.estms[0].lrcab1.excite_w, &model.estms[0].lrcab1.excite_b, estn::Pad::None));
    for (std::int64_t i = 0; i < s.size(); ++i) {
        CHECK(s.data()[i] > 0.0);
        CHECK(s.data()[i] < 1.0);
    }
}

TEST_CASE("estm: zero learnable weights reduce to the identity") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 79);
    estn::for_each_param(model, [](const std::string&, TensorD& t) { std::fill(t.data(), t.data() + t.size(), 0.0); });
    std::mt19937_64 rng(17);
    TensorD x = random_chw({6, 8, 8}, rng);
    TensorD y = estn::estm_forward(x, model.estms[0]);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("estm: matches the straight-line oracle in both score-sharing modes") {
    std::mt19937_64 rng(18);
    for (bool share : {true, false}) {
        auto cfg = tiny_config();
        cfg.share_scores = share;
        auto model = estn::build_model<double>(cfg, share ? 83 : 89);
        TensorD x = random_chw({6, 8, 8}, rng);
        TensorD got = estn::estm_forward(x, model.estms[0]);
        estn::ref::Map3 want = estn::ref::estm(estn::ref::from_tensor(x), model.estms[0]);
        check_close(got, want, 1e-10);
    }
}

TEST_CASE("estm: scalar readout gradient passes the finite-difference check") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 97);
    std::mt19937_64 rng(19);
    TensorD x = random_chw({6, 8, 8}, rng);
    const auto frozen = estn::frozen_view(model);
    const double err = estn::finite_diff_check<double>(
        [&](const TensorD& t) { return estn::sum(estn::estm_forward(t, frozen.estms[0])); }, x, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("estm: shape preserved for arbitrary extents >= 2") {
    auto cfg = tiny_config();
    auto model = estn::build_model<double>(cfg, 101);
    std::mt19937_64 rng(20);
    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{5, 7}, {8, 8}, {13, 6}}) {
        TensorD x = random_chw({6, h, w}, rng);
        TensorD y = estn::estm_forward(x, model.estms[0]);
        CHECK(y.shape() == estn::Shape{6, h, w});
    }
}
