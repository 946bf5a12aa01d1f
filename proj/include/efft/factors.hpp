#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "efft/autodiff.hpp"
#include "efft/tensor.hpp"

namespace efft {

/// The six tuned weight matrices of one transformer layer. Values index the
/// EFFT slot layouts below.
enum class WeightRole { Q = 0, K = 1, VProj = 2, O = 3, Ffn1 = 4, Ffn2 = 5 };

bool is_mhsa_role(WeightRole role);
const char* role_name(WeightRole role);
std::optional<WeightRole> role_from_name(const std::string& name);

/// Gaussian std for the non-zeroed factors.
constexpr double kFactorInitStd = 0.02;

/// Single shared delta tensor of shape [3, 4d, d]:
///   slot 0 = [W_q; W_k; W_v; W_o] stacked vertically,
///   slot 1 = W_ffn1 transposed, slot 2 = W_ffn2.
/// Factorized as s * Sigma x2 U^T x3 V^T with Sigma [3, r1, r2],
/// U [4d, r1], V [d, r2]. One delta serves every layer.
struct Efft1Factors {
    int d = 0, r1 = 0, r2 = 0;
    double s = 1.0;
    Tensor sigma; // [3, r1, r2]
    Tensor u;     // [4d, r1]
    Tensor v;     // [d, r2]
};

/// MHSA and FFN condensed separately: delta1 [4, d, d] with slots Q,K,V,O;
/// delta2 [2, 4d, d] with slot 0 = W_ffn1 transposed, slot 1 = W_ffn2.
struct Efft2Factors {
    int d = 0, r1 = 0, r2 = 0;
    double s1 = 1.0, s2 = 1.0;
    Tensor sigma1, u1, v1; // [4, r1, r2], [d, r1], [d, r2]
    Tensor sigma2, u2, v2; // [2, r1, r2], [4d, r1], [d, r2]
};

/// Per-matrix low-rank delta s * w_down * w_up; layer-specific.
struct LoraEntry {
    int layer = 0;
    WeightRole role = WeightRole::Q;
    Tensor w_down; // d_in x r
    Tensor w_up;   // r x d_out
};

struct LoraFactors {
    int d = 0, r = 0, layers = 0;
    double s = 1.0;
    std::vector<LoraEntry> entries; // layer-major, role-minor order
};

/// Tensor-Train baseline: Sigma [12L, r1, r2], U [d, r1], V [d, r2].
/// Per layer, slots 0-3 are Q,K,V,O; slots 4-7 the four d x d column blocks
/// of W_ffn1; slots 8-11 the four d x d row blocks of W_ffn2.
struct FactTtFactors {
    int d = 0, layers = 0, r1 = 0, r2 = 0;
    double s = 1.0;
    Tensor sigma; // [12L, r1, r2]
    Tensor u;     // [d, r1]
    Tensor v;     // [d, r2]
};

using Factors = std::variant<Efft1Factors, Efft2Factors, LoraFactors, FactTtFactors>;

enum class MethodKind { Efft1, Efft2, Lora, FactTt };

MethodKind kind_of(const Factors& f);
const char* kind_name(MethodKind k);
std::optional<MethodKind> kind_from_name(const std::string& name);

// Initialization: one factor per group zeroed (V), the rest N(0, sigma_std^2),
// so every materialized delta starts exactly at zero.
Efft1Factors init_efft1(int d, int r1, int r2, double s, double sigma_std, Rng& rng);
Efft2Factors init_efft2(int d, int r1, int r2, double s1, double s2, double sigma_std, Rng& rng);
/// Tunes Q and V of every layer by default (the usual LoRA placement).
LoraFactors init_lora(int d, int layers, int r, double s, double sigma_std, Rng& rng,
                      const std::vector<WeightRole>& roles = {WeightRole::Q, WeightRole::VProj});
FactTtFactors init_fact_tt(int d, int layers, int r1, int r2, double s, double sigma_std, Rng& rng);

/// Full delta tensor [3, 4d, d] via per-slot s * (U * Sigma_i) * V^T.
Tensor materialize_efft1(const Efft1Factors& f);
/// Both delta tensors: first [4, d, d], second [2, 4d, d].
std::pair<Tensor, Tensor> materialize_efft2(const Efft2Factors& f);
/// One d x d slot of the per-layer stack, slot in [0, 12L).
Tensor materialize_fact_tt_slot(const FactTtFactors& f, int slot);

/// The additive delta for one weight matrix, in backbone storage
/// orientation (Q/K/V/O: d x d, FFN1: d x 4d, FFN2: 4d x d). For EFFT the
/// same tensor is returned for every layer index; LoRA and FacT-TT are
/// layer-specific.
Tensor delta_for(const Factors& f, WeightRole role, int layer);

/// Whether this parameterization defines a delta for (role, layer).
bool has_role(const Factors& f, WeightRole role, int layer);

/// x * delta via the low-rank path, never materializing the full delta.
Tensor apply_delta(const Tensor& x, const Factors& f, WeightRole role, int layer);

/// Exact count of trainable scalars in the factor set.
std::size_t count_params(const Factors& f);

/// A trainable tensor slot: name for diagnostics, decay flag for AdamW.
struct ParamRef {
    std::string name;
    Tensor* tensor = nullptr;
    bool decay = true;
};

/// Factor tensors in canonical order (the checkpoint and optimizer order).
std::vector<ParamRef> factor_params(Factors& f);

/// Tape leaves for a factor set. 3-D core tensors enter the tape as 2-D
/// views ([k, r1, r2] -> [k*r1, r2]); gradients come back in the same flat
/// layout, which matches the canonical tensors' row-major buffers.
struct FactorBinding {
    MethodKind kind = MethodKind::Efft1;
    int d = 0, r1 = 0, r2 = 0, layers = 0;
    double s = 1.0, s2 = 1.0;
    int sigma_a = -1, u_a = -1, v_a = -1; // efft1 / fact_tt / efft2 group 1
    int sigma_b = -1, u_b = -1, v_b = -1; // efft2 group 2
    std::vector<std::pair<int, int>> lora_nodes; // (down, up) per entry
    const LoraFactors* lora = nullptr;           // entry lookup
    std::vector<int> param_nodes; // aligned with factor_params() order
};

FactorBinding bind_factors(Tape& tape, const Factors& f, bool trainable);

/// Tape version of apply_delta; returns the delta's contribution node.
int apply_delta_node(Tape& tape, const FactorBinding& fb, int x, WeightRole role, int layer);

bool binding_has(const FactorBinding& fb, WeightRole role, int layer);

} // namespace efft
