#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "efft/optimizer.hpp"
#include "efft/vit.hpp"

namespace efft {

struct TrainHyper {
    double lr = 1e-3;
    int batch_size = 64;
    int epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::uint64_t seed = 42;
    int max_steps = 0;         // 0 = bounded by epochs only
    double val_fraction = 0.2; // seed-deterministic holdout; 0 trains on all

    void validate() const;
};

struct Dataset {
    int image_h = 0, image_w = 0, channels = 1;
    int n_classes = 0;
    std::vector<Tensor> images; // [H, W] or [H, W, C] each
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

struct RunReport {
    std::string method;
    int d = 0, layers = 0, r1 = 0, r2 = 0;
    double s = 0.0;
    std::string mask_desc;
    std::uint64_t seed = 0;
    std::size_t param_count = 0; // trained scalars: head + factors

    std::vector<double> epoch_loss;
    std::vector<double> epoch_train_acc;
    double final_train_acc = 0.0;
    double final_val_acc = 0.0;
    int steps = 0;
    bool diverged = false;
    double wall_ms = 0.0; // excluded from determinism comparisons
};

/// Loss above this aborts the run as diverged (recorded, not thrown).
constexpr double kDivergenceLossLimit = 1e6;

/// Accuracy of argmax logits over the given samples (patchified up front).
double evaluate(const ViTModel& m, const std::optional<Factors>& factors, const TuningMask& mask,
                const std::vector<Tensor>& patches, const std::vector<int>& labels,
                int batch_size);

/// AdamW fine-tuning of head + factors; the backbone never changes.
/// Deterministic given (seed, dataset, config). With factors == nullopt this
/// is the linear probe.
RunReport train(ViTModel& model, std::optional<Factors>& factors, const TuningMask& mask,
                const Dataset& data, const TrainHyper& hyper);

struct SweepCell {
    double s = 0.0;
    int rank = 0;
    RunReport report;
    bool usable = false; // false when diverged or aborted
};

struct SweepResult {
    std::vector<SweepCell> cells;
    int best = -1; // index into cells
};

/// Grid over (scale, rank). Each cell trains a fresh copy of the pristine
/// model with its own seed-derived stream. Best cell = max validation
/// accuracy; ties broken by fewer params, then smaller scale. Diverged
/// cells are never selected.
SweepResult sweep(const ViTModel& pristine, const Dataset& data, MethodKind kind,
                  const std::vector<double>& scales, const std::vector<int>& ranks,
                  const TrainHyper& hyper, const TuningMask& mask);

struct AblationCell {
    std::vector<int> layer_set;
    std::string blocks; // "mhsa" | "ffn" | "both"
    RunReport report;
    double delta_pp = 0.0; // accuracy minus all-layers-both baseline, in points
};

struct AblationResult {
    RunReport baseline; // all layers, both blocks
    std::vector<AblationCell> cells;
};

/// Trains every (layer set x block choice) cell from identical init and
/// reports signed accuracy deltas against the all-layers-both baseline.
AblationResult ablation_run(const ViTModel& pristine, const Dataset& data, MethodKind kind, int r1,
                            int r2, double s, const std::vector<std::vector<int>>& layer_sets,
                            const std::vector<std::string>& block_choices,
                            const TrainHyper& hyper);

/// Factor set for one method at the given shape, seeded.
Factors make_factors(MethodKind kind, int d, int layers, int r1, int r2, double s, Rng& rng);

} // namespace efft
