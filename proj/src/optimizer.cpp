#include "efft/optimizer.hpp"

#include <cmath>

namespace efft {

AdamW::AdamW(std::vector<ParamRef> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0) throw ContractError("adamw: lr must be positive");
    for (const ParamRef& p : params_) {
        m_.emplace_back(p.tensor->size(), 0.0);
        v_.emplace_back(p.tensor->size(), 0.0);
    }
}

void AdamW::step(const std::vector<const Tensor*>& grads) {
    if (grads.size() != params_.size())
        throw ContractError("adamw: gradient list does not match registered params");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = *params_[pi].tensor;
        const Tensor& g = *grads[pi];
        if (g.size() != p.size())
            throw ContractError("adamw: gradient size mismatch for " + params_[pi].name);
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            if (!std::isfinite(gi))
                throw NumericError("adamw: non-finite gradient in " + params_[pi].name);
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            const double old = p[i];
            double next = old - cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
            if (params_[pi].decay) next -= cfg_.lr * cfg_.weight_decay * old;
            p[i] = next;
        }
    }
}

} // namespace efft
