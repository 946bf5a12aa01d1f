#pragma once

#include <iosfwd>
#include <string>

#include "efft/dataset.hpp"
#include "efft/train.hpp"
#include "efft/vit.hpp"

namespace efft {

/// [method] section. kind "linear" means no factor set (probe baseline).
struct MethodConfig {
    std::string kind = "efft1";
    int r1 = 8, r2 = 8;
    double s = 1.0;

    bool operator==(const MethodConfig&) const = default;
};

struct DataConfig {
    std::string source = "synthetic"; // synthetic | idx
    SyntheticSpec synth;
    bool synth_seed_set = false; // when false, the data stream derives from --seed
    std::string images, labels;  // idx paths
    int max_samples = 0;

    bool operator==(const DataConfig&) const = default;
};

/// [mask] section, unresolved text form ("all" needs the layer count).
struct MaskSpec {
    std::string layers = "all";
    std::string blocks = "both"; // both | mhsa | ffn | none

    bool operator==(const MaskSpec&) const = default;
};

struct ExperimentConfig {
    ViTConfig model;
    MethodConfig method;
    TrainHyper train;
    DataConfig data;
    MaskSpec mask;

    TuningMask resolve_mask() const;
    bool is_linear_probe() const { return method.kind == "linear"; }
    void validate() const;

    bool operator==(const ExperimentConfig&) const;
};

bool operator==(const SyntheticSpec& a, const SyntheticSpec& b);
bool operator==(const ViTConfig& a, const ViTConfig& b);
bool operator==(const TrainHyper& a, const TrainHyper& b);

/// key = value lines under [section] headers; '#' starts a comment. Unknown
/// sections or keys are hard errors with the line number.
ExperimentConfig parse_config(std::istream& in, const std::string& origin);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, std::ostream& out);

/// Inclusive layer list syntax: "all" or "0-2,5". Bounds checked against n.
std::set<int> parse_layer_set(const std::string& text, int n_layers);

} // namespace efft
