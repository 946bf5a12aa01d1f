#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "efft/tensor.hpp"

namespace efft {

/// Normalized subspace similarity ||U_i^T U_j||_F^2 / min(i, j), where U_i
/// spans the top-i left singular vectors of a and U_j the top-j of b.
/// a and b must share their row count; the result lies in [0, 1].
double subspace_similarity(const Tensor& a, const Tensor& b, int i, int j);

/// Similarity minus the mean similarity of `baseline_seeds` independent
/// Gaussian pairs of matching shapes, clamped at zero. baseline_seeds = 0
/// returns the raw value.
double adjusted_similarity(const Tensor& a, const Tensor& b, int i, int j, int baseline_seeds,
                           Rng& rng);

/// All pairwise similarities up to (i_max, j_max), plus what produced them.
/// Raw entries lie in [0, 1]; adjusted entries are clamped at zero.
struct SimilarityGrid {
    Tensor values; // i_max x j_max, entry (i-1, j-1) = similarity at (i, j)
    std::string matrix_a, matrix_b;
    bool adjusted = false;
    int baseline_seeds = 0;
};

SimilarityGrid similarity_grid(const Tensor& a, const Tensor& b, int i_max, int j_max,
                               bool adjust, int baseline_seeds, Rng& rng,
                               const std::string& label_a = "A", const std::string& label_b = "B");

void write_similarity_grid_csv(std::ostream& out, const SimilarityGrid& grid);

struct AggregateScores {
    double overall = 0.0;   // mean of all 19 task accuracies
    double group_avg = 0.0; // mean of the three group means
};

/// The VTAB-style 19-task aggregation: 7 Natural + 4 Specialized +
/// 8 Structured, in that order.
AggregateScores aggregate_scores(const std::vector<double>& per_task);

} // namespace efft
