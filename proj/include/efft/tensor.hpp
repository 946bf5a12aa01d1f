#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "efft/error.hpp"
#include "efft/rng.hpp"

namespace efft {

/// Dense n-dimensional f64 array, row-major, value semantics.
/// Invariant: data().size() == product(shape()) and every dimension is >= 1.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor from(std::vector<int> shape, std::vector<double> data);

    /// 2-D convenience: rows of equal length.
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    static Tensor identity(int n);

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& buffer() { return data_; }
    const std::vector<double>& buffer() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D / 3-D element access; shapes are checked in debug builds only.
    double& operator()(int i, int j) {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double operator()(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double& operator()(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    int rows() const { return shape_[0]; }
    int cols() const { return shape_[1]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Same buffer under a new shape; sizes must match.
    Tensor reshaped(std::vector<int> shape) const;

    /// True when every entry is finite.
    bool all_finite() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

/// Gaussian N(0, sigma^2) entries via Box-Muller on the seeded generator.
/// Deterministic: fills in row-major order, two draws per entry.
Tensor randn(std::vector<int> shape, double sigma, Rng& rng);

/// Standard matrix product, f64 accumulation, fixed summation order
/// (ascending inner index).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

/// Sum of squared entries.
double frobenius_norm_sq(const Tensor& a);

// Elementwise helpers used across modules.
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// Copy of rows [start, start+count) of a 2-D tensor.
Tensor slice_rows(const Tensor& a, int start, int count);

/// Copy of columns [start, start+count) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, int start, int count);

/// Thin SVD a = u * diag(s) * vt.
/// u: m x k with orthonormal columns, s: k singular values descending,
/// vt: k x n with orthonormal rows, k = min(m, n).
struct SvdResult {
    Tensor u;
    Tensor s;
    Tensor vt;
};

/// One-sided Jacobi SVD. Sweeps until every column-pair rotation measure
/// |a_p . a_q| / (|a_p| |a_q|) drops below 1e-12. Singular values below
/// max(m,n) * eps * s_max are flattened to exact zero and the matching left
/// singular vectors completed to an orthonormal basis. Sign convention:
/// the first nonzero entry of each left singular vector is non-negative.
SvdResult svd(const Tensor& a);

} // namespace efft
