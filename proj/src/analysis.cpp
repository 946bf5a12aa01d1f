#include "efft/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>

namespace efft {

namespace {

Tensor top_left_vectors(const Tensor& a, int count) {
    const int available = std::min(a.rows(), a.cols());
    if (count < 1 || count > available)
        throw ContractError("subspace_similarity: requested " + std::to_string(count) +
                            " singular vectors, only " + std::to_string(available) +
                            " available");
    SvdResult r = svd(a);
    return slice_cols(r.u, 0, count);
}

} // namespace

double subspace_similarity(const Tensor& a, const Tensor& b, int i, int j) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("subspace_similarity: expected 2-D tensors");
    if (a.rows() != b.rows())
        throw ContractError("subspace_similarity: inputs must share their row count");
    const Tensor ui = top_left_vectors(a, i);
    const Tensor uj = top_left_vectors(b, j);
    const double raw = frobenius_norm_sq(matmul(transpose(ui), uj)) / std::min(i, j);
    return std::clamp(raw, 0.0, 1.0);
}

double adjusted_similarity(const Tensor& a, const Tensor& b, int i, int j, int baseline_seeds,
                           Rng& rng) {
    const double raw = subspace_similarity(a, b, i, j);
    if (baseline_seeds <= 0) return raw;
    double baseline = 0.0;
    for (int k = 0; k < baseline_seeds; ++k) {
        const Tensor ga = randn(a.shape(), 1.0, rng);
        const Tensor gb = randn(b.shape(), 1.0, rng);
        baseline += subspace_similarity(ga, gb, i, j);
    }
    baseline /= baseline_seeds;
    return std::max(0.0, raw - baseline);
}

SimilarityGrid similarity_grid(const Tensor& a, const Tensor& b, int i_max, int j_max,
                               bool adjust, int baseline_seeds, Rng& rng,
                               const std::string& label_a, const std::string& label_b) {
    SimilarityGrid grid;
    grid.values = Tensor({i_max, j_max});
    grid.matrix_a = label_a;
    grid.matrix_b = label_b;
    grid.adjusted = adjust;
    grid.baseline_seeds = adjust ? baseline_seeds : 0;
    for (int i = 1; i <= i_max; ++i)
        for (int j = 1; j <= j_max; ++j)
            grid.values(i - 1, j - 1) = adjust
                                            ? adjusted_similarity(a, b, i, j, baseline_seeds, rng)
                                            : subspace_similarity(a, b, i, j);
    return grid;
}

void write_similarity_grid_csv(std::ostream& out, const SimilarityGrid& grid) {
    out << "# a=" << grid.matrix_a << " b=" << grid.matrix_b
        << " adjusted=" << (grid.adjusted ? 1 : 0) << " baseline_seeds=" << grid.baseline_seeds
        << "\n";
    out << "i";
    for (int j = 1; j <= grid.values.cols(); ++j) out << ",j" << j;
    out << "\n";
    char buf[32];
    for (int i = 0; i < grid.values.rows(); ++i) {
        out << (i + 1);
        for (int j = 0; j < grid.values.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.6f", grid.values(i, j));
            out << ',' << buf;
        }
        out << "\n";
    }
}

AggregateScores aggregate_scores(const std::vector<double>& per_task) {
    constexpr int kGroups[3] = {7, 4, 8}; // Natural, Specialized, Structured
    if (per_task.size() != 19)
        throw ContractError("aggregate_scores: expected 19 task accuracies, got " +
                            std::to_string(per_task.size()));
    AggregateScores out;
    std::size_t at = 0;
    double group_sum = 0.0;
    for (int g : kGroups) {
        double sum = 0.0;
        for (int k = 0; k < g; ++k) sum += per_task[at++];
        group_sum += sum / g;
        out.overall += sum;
    }
    out.overall /= 19.0;
    out.group_avg = group_sum / 3.0;
    return out;
}

} // namespace efft
