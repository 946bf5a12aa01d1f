#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>

#include "efft/vit.hpp"

using namespace efft;

namespace {

ViTConfig tiny_cfg() {
    ViTConfig cfg;
    cfg.d = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.image = 16;
    cfg.patch = 8;
    cfg.classes = 4;
    return cfg;
}

Tensor random_batch(const ViTConfig& cfg, int b, Rng& rng) {
    return randn({b, cfg.n_patches(), cfg.patch_dim()}, 1.0, rng);
}

bool bit_identical(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i], y = b[i];
        if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
    }
    return true;
}

} // namespace

TEST_CASE("patchify counting and ordering") {
    SUBCASE("4x4 image, patch 2 -> 4 patches of 4 values") {
        Tensor img({4, 4});
        for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
        const Tensor p = patchify(img, 2);
        CHECK(p.shape() == std::vector<int>{4, 4});
        // patch 0 = entries (0,0), (0,1), (1,0), (1,1)
        CHECK(p(0, 0) == 0.0);
        CHECK(p(0, 1) == 1.0);
        CHECK(p(0, 2) == 4.0);
        CHECK(p(0, 3) == 5.0);
        // patch 1 = the top-right block
        CHECK(p(1, 0) == 2.0);
        CHECK(p(1, 3) == 7.0);
        // last patch = bottom-right block
        CHECK(p(3, 3) == 15.0);
    }
    SUBCASE("constant image gives identical patch rows") {
        Tensor img({6, 6});
        for (std::size_t i = 0; i < img.size(); ++i) img[i] = 0.25;
        const Tensor p = patchify(img, 3);
        for (int r = 0; r < p.rows(); ++r)
            for (int c = 0; c < p.cols(); ++c) CHECK(p(r, c) == 0.25);
    }
    SUBCASE("indivisible dims rejected") {
        CHECK_THROWS_AS(patchify(Tensor({5, 4}), 2), ShapeError);
        CHECK_THROWS_AS(patchify(Tensor({4}), 2), ShapeError);
    }
}

TEST_CASE("build_vit: exhaustive parameter count") {
    const ViTConfig cfg = tiny_cfg();
    Rng rng(1);
    const ViTModel m = build_vit(cfg, rng);
    const std::size_t expected_backbone =
        static_cast<std::size_t>(cfg.layers) * (12 * cfg.d * cfg.d + 4 * cfg.d) // weights + LNs
        + cfg.patch_dim() * cfg.d                                               // patch embed
        + cfg.d                                                                 // class token
        + cfg.seq_len() * cfg.d;                                                // positions
    CHECK(backbone_param_count(m) == expected_backbone);
    CHECK(head_param_count(m) == static_cast<std::size_t>(cfg.d * cfg.classes + cfg.classes));
}

TEST_CASE("build_vit determinism and config errors") {
    const ViTConfig cfg = tiny_cfg();
    Rng a(7), b(7);
    const ViTModel ma = build_vit(cfg, a);
    const ViTModel mb = build_vit(cfg, b);
    CHECK(backbone_hash(ma) == backbone_hash(mb));
    CHECK(bit_identical(ma.head_w, mb.head_w));

    ViTConfig bad = cfg;
    bad.heads = 3;
    CHECK_THROWS_AS(build_vit(bad, a), ConfigError);
    bad = cfg;
    bad.patch = 5;
    CHECK_THROWS_AS(build_vit(bad, a), ConfigError);
}

TEST_CASE("hand-computed forward pass of a single-layer d=4 model") {
    // 2-token input: one patch + class token; heads = 1.
    ViTConfig cfg;
    cfg.d = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.image = 2;
    cfg.patch = 2;
    cfg.classes = 3;
    Rng rng(0);
    ViTModel m = build_vit(cfg, rng);

    // Deterministic, independently chosen weights.
    auto fill = [](Tensor& t, double a, double b) {
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = 0.3 * std::sin(a * static_cast<double>(i) + b);
    };
    fill(m.patch_embed, 0.7, 0.1);
    fill(m.cls_token, 0.9, 0.4);
    fill(m.pos_embed, 1.1, 0.8);
    fill(m.layers[0].w_q, 0.5, 0.2);
    fill(m.layers[0].w_k, 0.6, 0.9);
    fill(m.layers[0].w_v, 0.8, 0.3);
    fill(m.layers[0].w_o, 0.4, 0.7);
    fill(m.layers[0].w_ffn1, 0.55, 0.15);
    fill(m.layers[0].w_ffn2, 0.65, 0.45);
    fill(m.layers[0].ln1_bias, 0.35, 0.6);
    fill(m.layers[0].ln2_bias, 0.45, 0.2);
    for (int j = 0; j < 4; ++j) {
        m.layers[0].ln1_gain(0, j) = 1.0 + 0.1 * j;
        m.layers[0].ln2_gain(0, j) = 1.2 - 0.1 * j;
    }
    fill(m.head_w, 0.75, 0.5);
    fill(m.head_b, 0.85, 0.25);

    Tensor batch({1, 1, 4});
    batch(0, 0, 0) = 0.9;
    batch(0, 0, 1) = -0.3;
    batch(0, 0, 2) = 0.5;
    batch(0, 0, 3) = 0.1;

    // Straight-line oracle with its own loops.
    const int d = 4;
    auto at = [](std::array<double, 4>& a, int i) -> double& {
        return a[static_cast<std::size_t>(i)];
    };
    auto vecmat = [&](const std::array<double, 4>& x, const Tensor& w, int cols) {
        std::vector<double> y(static_cast<std::size_t>(cols), 0.0);
        for (int j = 0; j < cols; ++j)
            for (int i = 0; i < d; ++i)
                y[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(i)] * w(i, j);
        return y;
    };
    std::array<std::array<double, 4>, 2> x{};
    for (int j = 0; j < d; ++j) at(x[0], j) = m.cls_token(0, j) + m.pos_embed(0, j);
    for (int j = 0; j < d; ++j) {
        double e = 0;
        for (int i = 0; i < d; ++i) e += batch(0, 0, i) * m.patch_embed(i, j);
        at(x[1], j) = e + m.pos_embed(1, j);
    }
    auto layer_norm = [&](const std::array<double, 4>& row, const Tensor& gain,
                          const Tensor& bias) {
        double mu = 0;
        for (double v : row) mu += v;
        mu /= d;
        double var = 0;
        for (double v : row) var += (v - mu) * (v - mu);
        var /= d;
        const double rstd = 1.0 / std::sqrt(var + 1e-5);
        std::array<double, 4> out{};
        for (int j = 0; j < d; ++j)
            at(out, j) = (row[static_cast<std::size_t>(j)] - mu) * rstd * gain(0, j) + bias(0, j);
        return out;
    };

    std::array<std::array<double, 4>, 2> h{}, q{}, k{}, v{};
    for (int t = 0; t < 2; ++t)
        h[static_cast<std::size_t>(t)] =
            layer_norm(x[static_cast<std::size_t>(t)], m.layers[0].ln1_gain, m.layers[0].ln1_bias);
    for (int t = 0; t < 2; ++t) {
        const auto qt = vecmat(h[static_cast<std::size_t>(t)], m.layers[0].w_q, d);
        const auto kt = vecmat(h[static_cast<std::size_t>(t)], m.layers[0].w_k, d);
        const auto vt = vecmat(h[static_cast<std::size_t>(t)], m.layers[0].w_v, d);
        for (int j = 0; j < d; ++j) {
            at(q[static_cast<std::size_t>(t)], j) = qt[static_cast<std::size_t>(j)];
            at(k[static_cast<std::size_t>(t)], j) = kt[static_cast<std::size_t>(j)];
            at(v[static_cast<std::size_t>(t)], j) = vt[static_cast<std::size_t>(j)];
        }
    }
    std::array<std::array<double, 2>, 2> att{};
    for (int a = 0; a < 2; ++a) {
        std::array<double, 2> scores{};
        for (int b = 0; b < 2; ++b) {
            double s = 0;
            for (int j = 0; j < d; ++j)
                s += q[static_cast<std::size_t>(a)][static_cast<std::size_t>(j)] *
                     k[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
            scores[static_cast<std::size_t>(b)] = s / 2.0; // 1/sqrt(d_h) with d_h = 4
        }
        const double mx = std::max(scores[0], scores[1]);
        const double e0 = std::exp(scores[0] - mx), e1 = std::exp(scores[1] - mx);
        att[static_cast<std::size_t>(a)][0] = e0 / (e0 + e1);
        att[static_cast<std::size_t>(a)][1] = e1 / (e0 + e1);
    }
    for (int t = 0; t < 2; ++t) {
        std::array<double, 4> mixed{};
        for (int j = 0; j < d; ++j)
            at(mixed, j) = att[static_cast<std::size_t>(t)][0] * v[0][static_cast<std::size_t>(j)] +
                           att[static_cast<std::size_t>(t)][1] * v[1][static_cast<std::size_t>(j)];
        const auto o = vecmat(mixed, m.layers[0].w_o, d);
        for (int j = 0; j < d; ++j)
            at(x[static_cast<std::size_t>(t)], j) += o[static_cast<std::size_t>(j)];
    }
    auto gelu = [](double t) {
        return 0.5 * t * (1.0 + std::tanh(0.7978845608028654 * (t + 0.044715 * t * t * t)));
    };
    for (int t = 0; t < 2; ++t) {
        const auto h2 =
            layer_norm(x[static_cast<std::size_t>(t)], m.layers[0].ln2_gain, m.layers[0].ln2_bias);
        std::vector<double> f1 = vecmat(h2, m.layers[0].w_ffn1, 16);
        for (double& g : f1) g = gelu(g);
        std::array<double, 4> f2{};
        for (int j = 0; j < d; ++j)
            for (int i = 0; i < 16; ++i)
                at(f2, j) += f1[static_cast<std::size_t>(i)] * m.layers[0].w_ffn2(i, j);
        for (int j = 0; j < d; ++j)
            at(x[static_cast<std::size_t>(t)], j) += f2[static_cast<std::size_t>(j)];
    }
    std::array<double, 3> expected{};
    for (int c = 0; c < 3; ++c) {
        double s = m.head_b(0, c);
        for (int j = 0; j < d; ++j) s += x[0][static_cast<std::size_t>(j)] * m.head_w(j, c);
        expected[static_cast<std::size_t>(c)] = s;
    }

    const Tensor logits = vit_logits(m, batch, std::nullopt, TuningMask::none());
    REQUIRE(logits.shape() == std::vector<int>{1, 3});
    for (int c = 0; c < 3; ++c)
        CHECK(logits(0, c) ==
              doctest::Approx(expected[static_cast<std::size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("every attention map has rows summing to 1") {
    const ViTConfig cfg = tiny_cfg();
    Rng mr(2);
    const ViTModel m = build_vit(cfg, mr);
    Rng br(3);
    const Tensor batch = random_batch(cfg, 4, br);

    Tape tape;
    const ModelBinding mb = bind_model(tape, m, false);
    vit_forward(tape, m, mb, batch, nullptr, TuningMask::none());
    int softmax_nodes = 0;
    for (int id = 0; id < static_cast<int>(tape.size()); ++id) {
        if (tape.op(id) != Op::SoftmaxRows) continue;
        ++softmax_nodes;
        const Tensor& attn = tape.value(id);
        for (int i = 0; i < attn.rows(); ++i) {
            double sum = 0;
            for (int j = 0; j < attn.cols(); ++j) sum += attn(i, j);
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
    // one map per head per layer per sample
    CHECK(softmax_nodes == 4 * cfg.layers * cfg.heads);
}

TEST_CASE("zero-init factors leave logits bit-identical") {
    const ViTConfig cfg = tiny_cfg();
    Rng mr(3);
    const ViTModel m = build_vit(cfg, mr);
    Rng br(4);
    const Tensor batch = random_batch(cfg, 3, br);
    const TuningMask mask = TuningMask::all(cfg.layers);
    const Tensor base = vit_logits(m, batch, std::nullopt, mask);

    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Rng fr(seed);
        std::optional<Factors> f1 = init_efft1(cfg.d, 4, 4, 10.0, 0.02, fr);
        std::optional<Factors> f2 = init_efft2(cfg.d, 4, 4, 1.0, 1.0, 0.02, fr);
        std::optional<Factors> lo = init_lora(cfg.d, cfg.layers, 8, 1.0, 0.02, fr);
        std::optional<Factors> ft = init_fact_tt(cfg.d, cfg.layers, 4, 4, 1.0, 0.02, fr);
        CHECK(bit_identical(vit_logits(m, batch, f1, mask), base));
        CHECK(bit_identical(vit_logits(m, batch, f2, mask), base));
        CHECK(bit_identical(vit_logits(m, batch, lo, mask), base));
        CHECK(bit_identical(vit_logits(m, batch, ft, mask), base));
    }
}

TEST_CASE("empty mask disables trained deltas entirely") {
    const ViTConfig cfg = tiny_cfg();
    Rng mr(5);
    const ViTModel m = build_vit(cfg, mr);
    Rng br(6);
    const Tensor batch = random_batch(cfg, 2, br);

    Rng fr(7);
    std::optional<Factors> f = init_efft1(cfg.d, 4, 4, 1.0, 0.02, fr);
    Rng rr(11);
    for (const ParamRef& p : factor_params(*f)) *p.tensor = randn(p.tensor->shape(), 1.0, rr);

    const Tensor base = vit_logits(m, batch, std::nullopt, TuningMask::none());
    const Tensor masked = vit_logits(m, batch, f, TuningMask::none());
    CHECK(bit_identical(masked, base));

    // sanity: with the mask on, the randomized factors do change the logits
    const Tensor active = vit_logits(m, batch, f, TuningMask::all(cfg.layers));
    CHECK(!bit_identical(active, base));
}

TEST_CASE("mask block selection applies deltas to the right roles") {
    TuningMask mhsa_only;
    mhsa_only.layers = {0, 1};
    mhsa_only.mhsa = true;
    CHECK(mhsa_only.applies(0, WeightRole::Q));
    CHECK(!mhsa_only.applies(0, WeightRole::Ffn1));
    CHECK(!mhsa_only.applies(2, WeightRole::Q));
    CHECK(mhsa_only.describe() == "0+1:mhsa");
    CHECK(TuningMask::none().describe() == "none");
}

TEST_CASE("permuting head columns permutes logits identically") {
    const ViTConfig cfg = tiny_cfg();
    Rng mr(8);
    const ViTModel m = build_vit(cfg, mr);
    Rng br(9);
    const Tensor batch = random_batch(cfg, 2, br);
    const Tensor base = vit_logits(m, batch, std::nullopt, TuningMask::none());

    const std::array<int, 4> perm = {2, 0, 3, 1};
    ViTModel permuted = m;
    for (int j = 0; j < cfg.classes; ++j) {
        for (int i = 0; i < cfg.d; ++i)
            permuted.head_w(i, perm[static_cast<std::size_t>(j)]) = m.head_w(i, j);
        permuted.head_b(0, perm[static_cast<std::size_t>(j)]) = m.head_b(0, j);
    }
    const Tensor shuffled = vit_logits(permuted, batch, std::nullopt, TuningMask::none());
    for (int b = 0; b < 2; ++b)
        for (int j = 0; j < cfg.classes; ++j)
            CHECK(shuffled(b, perm[static_cast<std::size_t>(j)]) == base(b, j));
}

TEST_CASE("trainable_params: head only, or head plus factor tensors") {
    const ViTConfig cfg = tiny_cfg();
    Rng mr(10);
    ViTModel m = build_vit(cfg, mr);

    Tape tape;
    const ModelBinding mb = bind_model(tape, m, true);
    std::optional<Factors> none;
    const TrainableSet probe = trainable_params(m, mb, none, nullptr);
    CHECK(probe.params.size() == 2);
    CHECK(probe.params[0].name == "head.weight");
    CHECK(probe.params[1].name == "head.bias");
    CHECK_FALSE(probe.params[1].decay);

    Rng fr(11);
    std::optional<Factors> f1 = init_efft1(cfg.d, 2, 2, 1.0, 0.02, fr);
    Tape t1;
    const ModelBinding mb1 = bind_model(t1, m, true);
    const FactorBinding fb1 = bind_factors(t1, *f1, true);
    CHECK(trainable_params(m, mb1, f1, &fb1).params.size() == 5);

    std::optional<Factors> f2 = init_efft2(cfg.d, 2, 2, 1.0, 1.0, 0.02, fr);
    Tape t2;
    const ModelBinding mb2 = bind_model(t2, m, true);
    const FactorBinding fb2 = bind_factors(t2, *f2, true);
    CHECK(trainable_params(m, mb2, f2, &fb2).params.size() == 8);
}

TEST_CASE("factor dimension mismatch is rejected") {
    const ViTConfig cfg = tiny_cfg();
    Rng mr(12);
    const ViTModel m = build_vit(cfg, mr);
    Rng br(13);
    const Tensor batch = random_batch(cfg, 1, br);
    Rng fr(14);
    std::optional<Factors> wrong = init_efft1(cfg.d * 2, 2, 2, 1.0, 0.02, fr);
    CHECK_THROWS_AS(vit_logits(m, batch, wrong, TuningMask::all(cfg.layers)), ConfigError);
}

TEST_CASE("forward gradient flows only into trainable leaves") {
    const ViTConfig cfg = tiny_cfg();
    Rng mr(15);
    ViTModel m = build_vit(cfg, mr);
    Rng br(16);
    const Tensor batch = random_batch(cfg, 2, br);
    Rng fr(17);
    std::optional<Factors> f = init_efft1(cfg.d, 2, 2, 1.0, 0.02, fr);

    Tape tape;
    const ModelBinding mb = bind_model(tape, m, true);
    const FactorBinding fb = bind_factors(tape, *f, true);
    const int logits = vit_forward(tape, m, mb, batch, &fb, TuningMask::all(cfg.layers));
    const int loss = tape.cross_entropy_logits(logits, {0, 1});
    const auto grads = tape.backward(loss);
    CHECK(grads.size() == 5); // head w+b, sigma, u, v
    CHECK(!grads.contains(mb.patch_embed));
    CHECK(!grads.contains(mb.layers[0].q));
    // with v = 0 the u gradient vanishes but v itself sees the loss
    const Tensor& gv = grads.at(fb.v_a);
    double norm = 0;
    for (std::size_t i = 0; i < gv.size(); ++i) norm += gv[i] * gv[i];
    CHECK(norm > 0.0);
}
