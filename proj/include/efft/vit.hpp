#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include "efft/autodiff.hpp"
#include "efft/factors.hpp"
#include "efft/tensor.hpp"

namespace efft {

struct ViTConfig {
    int d = 16;
    int layers = 2;
    int heads = 2;
    int image = 16; // square input side
    int patch = 8;
    int classes = 4;
    int channels = 1;

    int d_f() const { return 4 * d; }
    int d_head() const { return d / heads; }
    int grid() const { return image / patch; }
    int n_patches() const { return grid() * grid(); }
    int patch_dim() const { return patch * patch * channels; }
    int seq_len() const { return n_patches() + 1; } // class token prepended

    void validate() const;
};

/// Weights are stored d_in x d_out and applied as X * W.
struct LayerWeights {
    Tensor w_q, w_k, w_v, w_o; // d x d
    Tensor w_ffn1;             // d x 4d
    Tensor w_ffn2;             // 4d x d
    Tensor ln1_gain, ln1_bias; // 1 x d
    Tensor ln2_gain, ln2_bias; // 1 x d
};

/// Toy backbone: everything here is frozen during fine-tuning except the
/// classification head (and whatever factor set rides along).
struct ViTModel {
    ViTConfig cfg;
    Tensor patch_embed; // patch_dim x d
    Tensor cls_token;   // 1 x d
    Tensor pos_embed;   // seq_len x d
    std::vector<LayerWeights> layers;
    Tensor head_w; // d x classes
    Tensor head_b; // 1 x classes
};

/// Which layers/blocks receive deltas. An empty mask applies them nowhere.
struct TuningMask {
    std::set<int> layers;
    bool mhsa = false;
    bool ffn = false;

    static TuningMask all(int n_layers);
    static TuningMask none() { return {}; }
    bool applies(int layer, WeightRole role) const;
    bool empty() const { return layers.empty() || (!mhsa && !ffn); }
    std::string describe() const; // canonical "0+1:mhsa+ffn" rendering
};

/// Gaussian(0, 0.02^2) weights and embeddings, zero biases, unit LN gains.
/// Deterministic per seed.
ViTModel build_vit(const ViTConfig& cfg, Rng& rng);

/// Non-overlapping patches of an [H, W] or [H, W, C] image, flattened
/// row-major, ordered top-left to bottom-right.
Tensor patchify(const Tensor& image, int patch);

std::size_t backbone_param_count(const ViTModel& m); // excludes the head
std::size_t head_param_count(const ViTModel& m);

/// FNV-1a over the raw bytes of every frozen tensor, fixed order.
std::uint64_t backbone_hash(const ViTModel& m);

/// Tape leaves for the model; backbone leaves are frozen, the head is
/// trainable on request.
struct ModelBinding {
    int patch_embed = -1, cls_token = -1, pos_embed = -1;
    struct Layer {
        int q, k, v, o, ffn1, ffn2, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    };
    std::vector<Layer> layers;
    int head_w = -1, head_b = -1;
};

ModelBinding bind_model(Tape& tape, const ViTModel& m, bool head_trainable);

/// Pre-norm transformer forward over a [B, n_patches, patch_dim] batch.
/// Returns the logits node (B x classes). Deltas are injected as
/// X*W0 + apply_delta(X) for every (layer, role) the mask selects.
int vit_forward(Tape& tape, const ViTModel& m, const ModelBinding& mb, const Tensor& batch,
                const FactorBinding* factors, const TuningMask& mask);

/// Convenience inference: frozen forward on a throwaway tape.
Tensor vit_logits(const ViTModel& m, const Tensor& batch, const std::optional<Factors>& factors,
                  const TuningMask& mask);

/// Trainable leaves for one training step, canonical order:
/// head weight, head bias, then the factor tensors.
struct TrainableSet {
    std::vector<ParamRef> params; // pointers into model + factors
    std::vector<int> nodes;       // aligned tape leaf ids
};

TrainableSet trainable_params(ViTModel& m, const ModelBinding& mb, std::optional<Factors>& factors,
                              const FactorBinding* fb);

} // namespace efft
