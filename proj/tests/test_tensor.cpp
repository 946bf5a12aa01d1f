#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "efft/tensor.hpp"

using namespace efft;

TEST_CASE("tensor shape invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor(std::vector<int>{}), ShapeError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("matmul hand oracle") {
    const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    const Tensor b = Tensor::from_rows({{5}, {6}});
    const Tensor c = matmul(a, b);
    CHECK(c(0, 0) == 17.0);
    CHECK(c(1, 0) == 39.0);
}

TEST_CASE("matmul identity and counting") {
    Rng rng(3);
    const Tensor b = randn({3, 4}, 1.0, rng);
    const Tensor ib = matmul(Tensor::identity(3), b);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(ib[i] == b[i]);

    const int k = 7;
    Tensor ones_row({1, k}), ones_col({k, 1});
    for (int i = 0; i < k; ++i) {
        ones_row(0, i) = 1.0;
        ones_col(i, 0) = 1.0;
    }
    CHECK(matmul(ones_row, ones_col)(0, 0) == static_cast<double>(k));
}

TEST_CASE("matmul shape error") {
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor({2, 2, 2}), Tensor({2, 2})), ShapeError);
}

TEST_CASE("matmul associativity within 1e-9 relative") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = randn({5, 7}, 1.0, rng);
        const Tensor b = randn({7, 4}, 1.0, rng);
        const Tensor c = randn({4, 6}, 1.0, rng);
        const Tensor left = matmul(matmul(a, b), c);
        const Tensor right = matmul(a, matmul(b, c));
        double diff = 0, norm = 0;
        for (std::size_t i = 0; i < left.size(); ++i) {
            diff += (left[i] - right[i]) * (left[i] - right[i]);
            norm += left[i] * left[i];
        }
        CHECK(std::sqrt(diff) <= 1e-9 * std::sqrt(norm));
    }
}

TEST_CASE("frobenius norm squared") {
    CHECK(frobenius_norm_sq(Tensor({3, 3})) == 0.0);
    CHECK(frobenius_norm_sq(Tensor::from_rows({{1, 2}, {3, 4}})) == 30.0);
}

TEST_CASE("randn: zero sigma, determinism, moments") {
    Rng rng0(42);
    const Tensor z = randn({2, 2}, 0.0, rng0);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

    Rng a(7), b(7);
    const Tensor ta = randn({64}, 1.0, a);
    const Tensor tb = randn({64}, 1.0, b);
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);

    Rng c(123);
    const Tensor big = randn({10000}, 1.0, c);
    double mean = 0;
    for (std::size_t i = 0; i < big.size(); ++i) mean += big[i];
    mean /= static_cast<double>(big.size());
    double var = 0;
    for (std::size_t i = 0; i < big.size(); ++i) var += (big[i] - mean) * (big[i] - mean);
    var /= static_cast<double>(big.size());
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("randn rejects bad shapes") {
    Rng rng(1);
    CHECK_THROWS_AS(randn({0}, 1.0, rng), ShapeError);
    CHECK_THROWS_AS(randn({3, 0}, 1.0, rng), ShapeError);
}

namespace {

double reconstruction_rel_error(const Tensor& a, const SvdResult& r) {
    const int k = r.s.dim(0);
    Tensor us = r.u;
    for (int i = 0; i < us.rows(); ++i)
        for (int j = 0; j < k; ++j) us(i, j) *= r.s[static_cast<std::size_t>(j)];
    const Tensor rec = matmul(us, r.vt);
    double diff = 0, norm = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (rec[i] - a[i]) * (rec[i] - a[i]);
        norm += a[i] * a[i];
    }
    return norm == 0 ? std::sqrt(diff) : std::sqrt(diff / norm);
}

double orthonormality_error(const Tensor& u) {
    const Tensor gram = matmul(transpose(u), u);
    double worst = 0;
    for (int i = 0; i < gram.rows(); ++i)
        for (int j = 0; j < gram.cols(); ++j)
            worst = std::max(worst, std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)));
    return worst;
}

} // namespace

TEST_CASE("svd diagonal") {
    Tensor a({3, 3});
    a(0, 0) = 3;
    a(1, 1) = 2;
    a(2, 2) = 1;
    const SvdResult r = svd(a);
    CHECK(r.s[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(r.s[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.s[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("svd rank-1 outer product") {
    const int m = 6, n = 4;
    Rng rng(5);
    Tensor u = randn({m, 1}, 1.0, rng), v = randn({n, 1}, 1.0, rng);
    double nu = 0, nv = 0;
    for (int i = 0; i < m; ++i) nu += u(i, 0) * u(i, 0);
    for (int i = 0; i < n; ++i) nv += v(i, 0) * v(i, 0);
    for (int i = 0; i < m; ++i) u(i, 0) /= std::sqrt(nu);
    for (int i = 0; i < n; ++i) v(i, 0) /= std::sqrt(nv);
    const Tensor a = matmul(u, transpose(v));
    const SvdResult r = svd(a);
    CHECK(r.s[0] == doctest::Approx(1.0).epsilon(1e-10));
    for (int i = 1; i < n; ++i) CHECK(r.s[static_cast<std::size_t>(i)] <= 1e-12);
    CHECK(orthonormality_error(r.u) < 1e-10);
    CHECK(reconstruction_rel_error(a, r) < 1e-9);
}

TEST_CASE("svd reconstruction on random 8x5") {
    Rng rng(17);
    const Tensor a = randn({8, 5}, 1.0, rng);
    const SvdResult r = svd(a);
    CHECK(reconstruction_rel_error(a, r) < 1e-9);
    CHECK(orthonormality_error(r.u) < 1e-10);
    for (int i = 1; i < r.s.dim(0); ++i)
        CHECK(r.s[static_cast<std::size_t>(i)] <= r.s[static_cast<std::size_t>(i - 1)]);
}

TEST_CASE("svd property sweep: random matrices up to 64x64") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = 1 + static_cast<int>(rng.next_below(64));
        const int n = 1 + static_cast<int>(rng.next_below(64));
        const Tensor a = randn({m, n}, 1.0, rng);
        const SvdResult r = svd(a);
        CHECK(reconstruction_rel_error(a, r) < 1e-9);
        CHECK(orthonormality_error(r.u) < 1e-10);
        for (int i = 1; i < r.s.dim(0); ++i) {
            CHECK(r.s[static_cast<std::size_t>(i)] >= 0.0);
            CHECK(r.s[static_cast<std::size_t>(i)] <= r.s[static_cast<std::size_t>(i - 1)]);
        }
    }
}

TEST_CASE("svd sign convention is reproducible") {
    Rng rng(31);
    const Tensor a = randn({9, 4}, 1.0, rng);
    const SvdResult r1 = svd(a);
    const SvdResult r2 = svd(a);
    for (std::size_t i = 0; i < r1.u.size(); ++i) CHECK(r1.u[i] == r2.u[i]);
    for (int j = 0; j < r1.u.cols(); ++j) {
        double lead = 0;
        for (int i = 0; i < r1.u.rows(); ++i)
            if (r1.u(i, j) != 0.0) {
                lead = r1.u(i, j);
                break;
            }
        CHECK(lead >= 0.0);
    }
}

TEST_CASE("svd of the zero matrix completes an orthonormal basis") {
    const Tensor z({5, 3});
    const SvdResult r = svd(z);
    for (int i = 0; i < 3; ++i) CHECK(r.s[static_cast<std::size_t>(i)] == 0.0);
    CHECK(orthonormality_error(r.u) < 1e-12);
}

TEST_CASE("svd rejects non-2-D input") {
    CHECK_THROWS_AS(svd(Tensor({4})), ShapeError);
    CHECK_THROWS_AS(svd(Tensor({2, 2, 2})), ShapeError);
}

TEST_CASE("orthonormal columns have frobenius norm sq = k") {
    Rng rng(55);
    const Tensor a = randn({12, 5}, 1.0, rng);
    const SvdResult r = svd(a);
    CHECK(frobenius_norm_sq(r.u) == doctest::Approx(5.0).epsilon(1e-10));
}
