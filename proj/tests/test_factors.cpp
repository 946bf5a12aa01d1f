#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "efft/factors.hpp"

using namespace efft;

namespace {

/// Eq.-style elementwise oracle with the same accumulation order as the
/// two-matmul route: inner product over t1 first, then t2 ascending.
double slot_entry_matched(const Tensor& sigma, int slot, const Tensor& u, const Tensor& v,
                          double s, int j, int k) {
    const int r1 = sigma.dim(1), r2 = sigma.dim(2);
    double acc = 0.0;
    for (int t2 = 0; t2 < r2; ++t2) {
        double m = 0.0;
        for (int t1 = 0; t1 < r1; ++t1) m += u(j, t1) * sigma(slot, t1, t2);
        acc += m * v(k, t2);
    }
    return acc * s;
}

/// Independent naive order: t1 outer, t2 inner, product sigma*u*v per term.
double slot_entry_naive(const Tensor& sigma, int slot, const Tensor& u, const Tensor& v, double s,
                        int j, int k) {
    const int r1 = sigma.dim(1), r2 = sigma.dim(2);
    double acc = 0.0;
    for (int t1 = 0; t1 < r1; ++t1)
        for (int t2 = 0; t2 < r2; ++t2) acc += sigma(slot, t1, t2) * u(j, t1) * v(k, t2);
    return s * acc;
}

void randomize(Factors& f, Rng& rng) {
    for (const ParamRef& p : factor_params(f)) {
        Tensor fresh = randn(p.tensor->shape(), 1.0, rng);
        *p.tensor = std::move(fresh);
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

const std::vector<WeightRole> kAllRoles = {WeightRole::Q,    WeightRole::K,
                                           WeightRole::VProj, WeightRole::O,
                                           WeightRole::Ffn1, WeightRole::Ffn2};

} // namespace

TEST_CASE("zero at init for every parameterization and seed") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        Factors e1 = init_efft1(8, 3, 3, 1.0, 0.02, rng);
        Factors e2 = init_efft2(8, 3, 3, 1.0, 1.0, 0.02, rng);
        Factors lo = init_lora(8, 2, 2, 1.0, 0.02, rng);
        Factors ft = init_fact_tt(8, 2, 2, 2, 1.0, 0.02, rng);
        for (const Factors* f : {&e1, &e2, &lo, &ft}) {
            for (WeightRole role : kAllRoles) {
                if (!has_role(*f, role, 0)) continue;
                const Tensor delta = delta_for(*f, role, 0);
                for (std::size_t i = 0; i < delta.size(); ++i) CHECK(delta[i] == 0.0);
            }
        }
        const Tensor full = materialize_efft1(std::get<Efft1Factors>(e1));
        for (std::size_t i = 0; i < full.size(); ++i) CHECK(full[i] == 0.0);
    }
}

TEST_CASE("different seeds change U but not the zero delta") {
    Rng a(1), b(2);
    const Efft1Factors fa = init_efft1(8, 2, 2, 1.0, 0.02, a);
    const Efft1Factors fb = init_efft1(8, 2, 2, 1.0, 0.02, b);
    bool any_diff = false;
    for (std::size_t i = 0; i < fa.u.size(); ++i) any_diff = any_diff || fa.u[i] != fb.u[i];
    CHECK(any_diff);
    CHECK(max_abs_diff(materialize_efft1(fa), materialize_efft1(fb)) == 0.0);
}

TEST_CASE("parameter counts match the declared shapes") {
    Rng rng(3);
    SUBCASE("efft1 at ViT-B width") {
        const Factors f = init_efft1(768, 16, 16, 1.0, 0.02, rng);
        CHECK(count_params(f) == 62208);
        CHECK(count_params(f) == 5 * 768 * 16 + 3 * 16 * 16);
        const Factors f32 = init_efft1(768, 32, 32, 1.0, 0.02, rng);
        CHECK(count_params(f32) == 125952);
    }
    SUBCASE("efft1 closed form 4*d*r1 + d*r2 + 3*r1*r2") {
        for (int d : {16, 768}) {
            for (int r : {8, 16, 32}) {
                const Factors f = init_efft1(d, r, r, 1.0, 0.02, rng);
                CHECK(count_params(f) ==
                      static_cast<std::size_t>(4 * d * r + d * r + 3 * r * r));
            }
        }
    }
    SUBCASE("efft2 declared shapes sum to 7dr + 6r^2") {
        const Factors f = init_efft2(768, 16, 16, 1.0, 1.0, 0.02, rng);
        CHECK(count_params(f) == 87552);
        CHECK(count_params(f) == 7 * 768 * 16 + 6 * 16 * 16);
        for (int d : {16, 768}) {
            for (int r : {8, 16, 32}) {
                const Factors g = init_efft2(d, r, r, 1.0, 1.0, 0.02, rng);
                CHECK(count_params(g) ==
                      static_cast<std::size_t>(d * r + d * r + 4 * d * r + d * r +
                                               4 * r * r + 2 * r * r));
            }
        }
    }
    SUBCASE("lora Q+V over 12 layers at r=8 gives the 0.295M of the ViT-B setup") {
        const Factors f = init_lora(768, 12, 8, 1.0, 0.02, rng);
        CHECK(count_params(f) == 294912);
        CHECK(count_params(f) == static_cast<std::size_t>(12 * 2 * (768 * 8 + 8 * 768)));
    }
    SUBCASE("fact_tt") {
        const Factors f = init_fact_tt(768, 12, 16, 16, 1.0, 0.02, rng);
        CHECK(count_params(f) ==
              static_cast<std::size_t>(12 * 12 * 16 * 16 + 768 * 16 + 768 * 16));
    }
    SUBCASE("unequal ranks r2 = 4*r1 are accepted") {
        const Efft2Factors f = init_efft2(16, 8, 32, 1.0, 1.0, 0.02, rng);
        CHECK(f.sigma1.shape() == std::vector<int>{4, 8, 32});
        CHECK(f.u1.shape() == std::vector<int>{16, 8});
        CHECK(f.v1.shape() == std::vector<int>{16, 32});
        const Efft1Factors g = init_efft1(16, 8, 32, 1.0, 0.02, rng);
        CHECK(g.u.shape() == std::vector<int>{64, 8});
        CHECK(g.v.shape() == std::vector<int>{16, 32});
    }
}

TEST_CASE("materialize collapses to s for all-ones rank-1 factors") {
    Efft1Factors f;
    f.d = 4;
    f.r1 = f.r2 = 1;
    f.s = 2.0;
    f.sigma = Tensor::from({3, 1, 1}, {1.0, 1.0, 1.0});
    f.u = Tensor({16, 1});
    f.v = Tensor({4, 1});
    for (std::size_t i = 0; i < f.u.size(); ++i) f.u[i] = 1.0;
    for (std::size_t i = 0; i < f.v.size(); ++i) f.v[i] = 1.0;
    const Tensor delta = materialize_efft1(f);
    for (std::size_t i = 0; i < delta.size(); ++i) CHECK(delta[i] == 2.0);
}

TEST_CASE("materialization equals the elementwise oracle exactly at small dims") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const int d = 2 + static_cast<int>(rng.next_below(7));  // up to 8
        const int r1 = 1 + static_cast<int>(rng.next_below(3)); // up to 3
        const int r2 = 1 + static_cast<int>(rng.next_below(3));
        Factors f = init_efft1(d, r1, r2, 1.0, 0.02, rng);
        randomize(f, rng);
        auto& e1 = std::get<Efft1Factors>(f);
        e1.s = 10.0;
        const Tensor m = materialize_efft1(e1);
        for (int slot = 0; slot < 3; ++slot)
            for (int j = 0; j < 4 * d; ++j)
                for (int k = 0; k < d; ++k) {
                    const double exact =
                        slot_entry_matched(e1.sigma, slot, e1.u, e1.v, e1.s, j, k);
                    CHECK(m(slot, j, k) == exact);
                    const double naive = slot_entry_naive(e1.sigma, slot, e1.u, e1.v, e1.s, j, k);
                    CHECK(std::abs(m(slot, j, k) - naive) < 1e-12);
                }
    }
}

TEST_CASE("efft2 materialization against the naive loops") {
    Rng rng(9);
    Factors f = init_efft2(4, 2, 2, 3.0, 0.5, 0.02, rng);
    randomize(f, rng);
    const auto& e2 = std::get<Efft2Factors>(f);
    const auto [d1, d2] = materialize_efft2(e2);
    for (int slot = 0; slot < 4; ++slot)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k)
                CHECK(d1(slot, j, k) ==
                      slot_entry_matched(e2.sigma1, slot, e2.u1, e2.v1, e2.s1, j, k));
    for (int slot = 0; slot < 2; ++slot)
        for (int j = 0; j < 16; ++j)
            for (int k = 0; k < 4; ++k)
                CHECK(d2(slot, j, k) ==
                      slot_entry_matched(e2.sigma2, slot, e2.u2, e2.v2, e2.s2, j, k));
}

TEST_CASE("fact_tt slots against the naive loops") {
    Rng rng(11);
    Factors f = init_fact_tt(4, 1, 1, 1, 1.0, 0.02, rng);
    randomize(f, rng);
    const auto& ft = std::get<FactTtFactors>(f);
    for (int slot = 0; slot < 12; ++slot) {
        const Tensor m = materialize_fact_tt_slot(ft, slot);
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k)
                CHECK(m(j, k) == slot_entry_matched(ft.sigma, slot, ft.u, ft.v, ft.s, j, k));
    }
}

TEST_CASE("efft1 slot layout: role slices of the materialized tensor") {
    Rng rng(13);
    Factors f = init_efft1(6, 2, 3, 2.0, 0.02, rng);
    randomize(f, rng);
    const auto& e1 = std::get<Efft1Factors>(f);
    const Tensor m = materialize_efft1(e1);
    const int d = e1.d;

    for (int ri = 0; ri < 4; ++ri) {
        const auto role = static_cast<WeightRole>(ri);
        const Tensor delta = delta_for(f, role, 0);
        CHECK(delta.shape() == std::vector<int>{d, d});
        for (int i = 0; i < d; ++i)
            for (int k = 0; k < d; ++k) CHECK(delta(i, k) == m(0, ri * d + i, k));
    }
    const Tensor f1 = delta_for(f, WeightRole::Ffn1, 0);
    CHECK(f1.shape() == std::vector<int>{d, 4 * d});
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < 4 * d; ++j) CHECK(f1(i, j) == m(1, j, i));
    const Tensor f2 = delta_for(f, WeightRole::Ffn2, 0);
    CHECK(f2.shape() == std::vector<int>{4 * d, d});
    for (int j = 0; j < 4 * d; ++j)
        for (int k = 0; k < d; ++k) CHECK(f2(j, k) == m(2, j, k));
}

TEST_CASE("cross-layer sharing: identical delta for every layer index") {
    Rng rng(15);
    Factors f = init_efft1(8, 2, 2, 1.0, 0.02, rng);
    randomize(f, rng);
    const Tensor d0 = delta_for(f, WeightRole::Q, 0);
    const Tensor d7 = delta_for(f, WeightRole::Q, 7);
    CHECK(max_abs_diff(d0, d7) == 0.0);

    Factors ft = init_fact_tt(8, 2, 2, 2, 1.0, 0.02, rng);
    randomize(ft, rng);
    const Tensor l0 = delta_for(ft, WeightRole::Q, 0);
    const Tensor l1 = delta_for(ft, WeightRole::Q, 1);
    CHECK(max_abs_diff(l0, l1) > 0.0); // layer-specific by construction
}

TEST_CASE("scale linearity is exact") {
    Rng rng(17);
    Factors f = init_efft1(8, 3, 3, 1.0, 0.02, rng);
    randomize(f, rng);
    auto& e1 = std::get<Efft1Factors>(f);
    e1.s = 1.0;
    const Tensor base = materialize_efft1(e1);
    e1.s = 100.0;
    const Tensor scaled = materialize_efft1(e1);
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(scaled[i] == 100.0 * base[i]);
}

TEST_CASE("apply_delta equals the materialized product") {
    Rng rng(19);
    SUBCASE("identity probe returns the delta itself") {
        Factors f = init_efft1(8, 2, 2, 1.0, 0.02, rng);
        randomize(f, rng);
        const Tensor probe = Tensor::identity(8);
        const Tensor applied = apply_delta(probe, f, WeightRole::Q, 0);
        CHECK(max_abs_diff(applied, delta_for(f, WeightRole::Q, 0)) < 1e-12);
    }
    SUBCASE("random x at d=8, r=2 within 1e-12") {
        Factors f = init_efft1(8, 2, 2, 1.0, 0.02, rng);
        randomize(f, rng);
        const Tensor x = randn({5, 8}, 1.0, rng);
        const Tensor via_mat = matmul(x, delta_for(f, WeightRole::K, 0));
        CHECK(max_abs_diff(apply_delta(x, f, WeightRole::K, 0), via_mat) < 1e-12);
    }
    SUBCASE("all kinds, all roles within 1e-10") {
        const int d = 8;
        std::vector<Factors> all;
        all.push_back(init_efft1(d, 3, 2, 2.0, 0.02, rng));
        all.push_back(init_efft2(d, 2, 3, 0.5, 4.0, 0.02, rng));
        all.push_back(init_lora(d, 2, 2, 2.0, 0.02, rng,
                                {WeightRole::Q, WeightRole::VProj, WeightRole::Ffn1,
                                 WeightRole::Ffn2}));
        all.push_back(init_fact_tt(d, 2, 2, 2, 3.0, 0.02, rng));
        for (Factors& f : all) {
            randomize(f, rng);
            for (WeightRole role : kAllRoles) {
                if (!has_role(f, role, 1)) continue;
                const int d_in = (role == WeightRole::Ffn2) ? 4 * d : d;
                const Tensor x = randn({6, d_in}, 1.0, rng);
                const Tensor via_mat = matmul(x, delta_for(f, role, 1));
                CHECK(max_abs_diff(apply_delta(x, f, role, 1), via_mat) < 1e-10);
            }
        }
    }
    SUBCASE("zero at init through the low-rank path") {
        Factors f = init_efft2(8, 2, 2, 1.0, 1.0, 0.02, rng);
        const Tensor x = randn({4, 8}, 1.0, rng);
        const Tensor y = apply_delta(x, f, WeightRole::O, 0);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
    }
}

TEST_CASE("materialized slots obey the rank bound") {
    Rng rng(23);
    Factors f = init_efft1(32, 4, 4, 1.0, 0.02, rng);
    randomize(f, rng);
    const auto& e1 = std::get<Efft1Factors>(f);
    const Tensor m = materialize_efft1(e1);
    for (int slot = 0; slot < 3; ++slot) {
        Tensor sm({4 * e1.d, e1.d});
        const std::size_t off = static_cast<std::size_t>(slot) * sm.size();
        for (std::size_t i = 0; i < sm.size(); ++i) sm[i] = m[off + i];
        const SvdResult r = svd(sm);
        for (int i = 4; i < r.s.dim(0); ++i) CHECK(r.s[static_cast<std::size_t>(i)] < 1e-10);
    }
}

TEST_CASE("lora entries are layer specific and error outside their set") {
    Rng rng(29);
    Factors f = init_lora(8, 3, 2, 1.0, 0.02, rng);
    CHECK(has_role(f, WeightRole::Q, 2));
    CHECK(has_role(f, WeightRole::VProj, 0));
    CHECK(!has_role(f, WeightRole::K, 0));
    CHECK(!has_role(f, WeightRole::Q, 3));
    CHECK_THROWS_AS(delta_for(f, WeightRole::K, 0), ContractError);
}

TEST_CASE("init contract errors") {
    Rng rng(31);
    CHECK_THROWS_AS(init_efft1(0, 2, 2, 1.0, 0.02, rng), ShapeError);
    CHECK_THROWS_AS(init_efft1(8, 0, 2, 1.0, 0.02, rng), ShapeError);
    CHECK_THROWS_AS(init_efft1(8, 2, 2, 0.0, 0.02, rng), ContractError);
    CHECK_THROWS_AS(init_fact_tt(8, 0, 2, 2, 1.0, 0.02, rng), ShapeError);
}
