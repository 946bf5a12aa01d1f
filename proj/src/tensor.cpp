#include "efft/tensor.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace efft {

namespace {

std::size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0)
            throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void require_2d(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a 2-D tensor");
}

} // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), 0.0);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
    std::size_t n = checked_size(shape);
    if (n != data.size()) throw ShapeError("tensor data length does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    int m = static_cast<int>(rows.size());
    if (m == 0) throw ShapeError("from_rows: no rows");
    int n = static_cast<int>(rows.begin()->size());
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m) * n);
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != n) throw ShapeError("from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return from({m, n}, std::move(data));
}

Tensor Tensor::identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (checked_size(shape) != data_.size())
        throw ShapeError("reshape size mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor randn(std::vector<int> shape, double sigma, Rng& rng) {
    if (sigma < 0) throw ContractError("randn: sigma must be non-negative");
    Tensor t(std::move(shape));
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < t.size(); ++i) {
        double u1 = rng.next_uniform_open();
        double u2 = rng.next_uniform();
        t[i] = sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }
    return t;
}

double Rng::next_normal() {
    double u1 = next_uniform_open();
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
    const int m = a.rows(), p = a.cols(), n = b.cols();
    Tensor c({m, n});
    const double* ad = a.data();
    const double* bd = b.data();
    double* cd = c.data();
    for (int i = 0; i < m; ++i) {
        for (int k = 0; k < p; ++k) {
            const double aik = ad[static_cast<std::size_t>(i) * p + k];
            const double* brow = bd + static_cast<std::size_t>(k) * n;
            double* crow = cd + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    Tensor t({a.cols(), a.rows()});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

double frobenius_norm_sq(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return s;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

Tensor scale(const Tensor& a, double c) {
    Tensor t = a;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= c;
    return t;
}

Tensor slice_rows(const Tensor& a, int start, int count) {
    require_2d(a, "slice_rows");
    if (start < 0 || count < 1 || start + count > a.rows())
        throw ShapeError("slice_rows: range out of bounds");
    Tensor t({count, a.cols()});
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < a.cols(); ++j) t(i, j) = a(start + i, j);
    return t;
}

Tensor slice_cols(const Tensor& a, int start, int count) {
    require_2d(a, "slice_cols");
    if (start < 0 || count < 1 || start + count > a.cols())
        throw ShapeError("slice_cols: range out of bounds");
    Tensor t({a.rows(), count});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < count; ++j) t(i, j) = a(i, start + j);
    return t;
}

} // namespace efft
