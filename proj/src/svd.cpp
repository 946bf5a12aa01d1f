#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "efft/tensor.hpp"

namespace efft {

namespace {

constexpr double kRotationTol = 1e-12; // sweep convergence threshold
constexpr int kMaxSweeps = 64;

// One-sided Jacobi on the columns of b (m x n, m >= n). v accumulates the
// right rotations and stays exactly orthogonal by construction.
void jacobi_sweeps(Tensor& b, Tensor& v) {
    const int m = b.rows(), n = b.cols();
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int i = 0; i < m; ++i) {
                    const double bp = b(i, p), bq = b(i, q);
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if (gamma == 0.0) continue;
                if (std::abs(gamma) <= kRotationTol * std::sqrt(alpha * beta)) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    const double bp = b(i, p), bq = b(i, q);
                    b(i, p) = c * bp - s * bq;
                    b(i, q) = s * bp + c * bq;
                }
                for (int i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
                rotated = true;
            }
        }
        if (!rotated) break;
    }
}

// Unit vector orthogonal to the first `count` columns of u, built from the
// canonical basis vector with the largest residual. Deterministic.
void complete_column(Tensor& u, int count, int col) {
    const int m = u.rows();
    std::vector<double> best(m, 0.0);
    double best_norm = -1.0;
    for (int t = 0; t < m; ++t) {
        std::vector<double> r(m, 0.0);
        r[t] = 1.0;
        for (int j = 0; j < count; ++j) {
            double dot = u(t, j); // e_t . u_j
            for (int i = 0; i < m; ++i) r[i] -= dot * u(i, j);
        }
        double norm_sq = 0.0;
        for (double x : r) norm_sq += x * x;
        if (norm_sq > best_norm) {
            best_norm = norm_sq;
            best = std::move(r);
        }
        if (best_norm > 0.5) break; // good enough; keeps the scan short
    }
    // One re-orthogonalization pass for numerical cleanliness.
    for (int j = 0; j < count; ++j) {
        double dot = 0.0;
        for (int i = 0; i < m; ++i) dot += best[i] * u(i, j);
        for (int i = 0; i < m; ++i) best[i] -= dot * u(i, j);
    }
    double norm = 0.0;
    for (double x : best) norm += x * x;
    norm = std::sqrt(norm);
    for (int i = 0; i < m; ++i) u(i, col) = best[i] / norm;
}

SvdResult svd_tall(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    Tensor b = a;
    Tensor v = Tensor::identity(n);
    jacobi_sweeps(b, v);

    std::vector<double> sigma(n, 0.0);
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += b(i, j) * b(i, j);
        sigma[static_cast<std::size_t>(j)] = std::sqrt(s);
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return sigma[static_cast<std::size_t>(x)] >
                                                sigma[static_cast<std::size_t>(y)]; });

    const double smax = sigma[static_cast<std::size_t>(order[0])];
    const double tiny = static_cast<double>(std::max(m, n)) *
                        std::numeric_limits<double>::epsilon() * smax;

    SvdResult r;
    r.u = Tensor({m, n});
    r.s = Tensor({n});
    r.vt = Tensor({n, n});
    int numerical_rank = 0;
    for (int j = 0; j < n; ++j) {
        const int src = order[static_cast<std::size_t>(j)];
        double s = sigma[static_cast<std::size_t>(src)];
        if (s <= tiny) s = 0.0; // below numerical rank
        r.s[static_cast<std::size_t>(j)] = s;
        if (s > 0.0) {
            for (int i = 0; i < m; ++i) r.u(i, j) = b(i, src) / s;
            ++numerical_rank;
        }
        for (int i = 0; i < n; ++i) r.vt(j, i) = v(i, src);
    }
    for (int j = numerical_rank; j < n; ++j) complete_column(r.u, j, j);

    // Sign convention: first nonzero entry of each left singular vector >= 0.
    for (int j = 0; j < n; ++j) {
        double lead = 0.0;
        for (int i = 0; i < m; ++i) {
            if (r.u(i, j) != 0.0) {
                lead = r.u(i, j);
                break;
            }
        }
        if (lead < 0.0) {
            for (int i = 0; i < m; ++i) r.u(i, j) = -r.u(i, j);
            for (int i = 0; i < n; ++i) r.vt(j, i) = -r.vt(j, i);
        }
    }
    return r;
}

} // namespace

SvdResult svd(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("svd: expected a 2-D tensor");
    if (!a.all_finite()) throw NumericError("svd: non-finite entries");
    if (a.rows() >= a.cols()) return svd_tall(a);
    // Wide case: a = (a^T)^T = v' s u'^T.
    SvdResult t = svd_tall(transpose(a));
    SvdResult r;
    r.u = transpose(t.vt);
    r.s = t.s;
    r.vt = transpose(t.u);
    // Re-apply the sign convention to the left vectors of the original.
    const int m = a.rows(), k = r.s.dim(0), n = a.cols();
    for (int j = 0; j < k; ++j) {
        double lead = 0.0;
        for (int i = 0; i < m; ++i) {
            if (r.u(i, j) != 0.0) {
                lead = r.u(i, j);
                break;
            }
        }
        if (lead < 0.0) {
            for (int i = 0; i < m; ++i) r.u(i, j) = -r.u(i, j);
            for (int i = 0; i < n; ++i) r.vt(j, i) = -r.vt(j, i);
        }
    }
    return r;
}

} // namespace efft
