#pragma once

#include <cstdint>
#include <string>

#include "efft/train.hpp"

namespace efft {

/// Synthetic grating classification task: one fixed sinusoidal template per
/// class (orientation varies by class), plus Gaussian pixel noise.
struct SyntheticSpec {
    int n_classes = 4;
    int samples_per_class = 50;
    int image = 16; // square side
    double noise_std = 0.1;
    std::uint64_t seed = 7;
};

/// The noiseless [image, image] template of one class; pixels in [0, 1].
Tensor grating_template(const SyntheticSpec& spec, int cls);

/// Class-major sample order, pixels clamped to [0, 1]; deterministic per rng.
Dataset gen_synthetic(const SyntheticSpec& spec, Rng& rng);

/// IDX (big-endian) readers/writers; images magic 0x00000803, labels
/// 0x00000801. Pixels scale by 1/255 on load. max_samples = 0 keeps all.
Dataset load_idx(const std::string& image_path, const std::string& label_path, int max_samples);
void save_idx(const Dataset& data, const std::string& image_path, const std::string& label_path);

} // namespace efft
