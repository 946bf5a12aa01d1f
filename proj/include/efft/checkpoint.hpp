#pragma once

#include <optional>
#include <string>

#include "efft/train.hpp"
#include "efft/vit.hpp"

namespace efft {

/// Everything needed to resume or analyze a run. Byte layout:
///   bytes 0-7   magic "EFFTCKPT"
///   u32 LE      version (1)
///   u32 LE      header length in bytes
///   header      UTF-8 JSON: method kind, dims, scale, seed, mask, model
///               config, report summary and the ordered tensor manifest
///   payload     raw little-endian f64 buffers in manifest order
struct Checkpoint {
    ViTModel model;
    std::optional<Factors> factors;
    TuningMask mask;
    std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const ViTModel& model,
                     const std::optional<Factors>& factors, const TuningMask& mask,
                     std::uint64_t seed, const RunReport* report = nullptr);

Checkpoint load_checkpoint(const std::string& path);

} // namespace efft
