#pragma once

#include <vector>

#include "efft/factors.hpp"
#include "efft/tensor.hpp"

namespace efft {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay. Decay multiplies the pre-update value
/// and is skipped for params registered with decay=false (biases).
class AdamW {
public:
    AdamW(std::vector<ParamRef> params, AdamWConfig cfg);

    /// One update. grads must align with the registered params; sizes are
    /// checked, shapes may differ by reshape. Throws NumericError naming the
    /// offending tensor on a non-finite gradient.
    void step(const std::vector<const Tensor*>& grads);

    long long t() const { return t_; }
    const std::vector<ParamRef>& params() const { return params_; }

private:
    std::vector<ParamRef> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWConfig cfg_;
    long long t_ = 0;
};

} // namespace efft
