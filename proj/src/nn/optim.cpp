#include "qislab/nn/optim.hpp"

#include <cmath>

namespace qislab::nn {

template <typename Real>
void adam_step(const std::vector<std::span<Real>>& params, const std::vector<std::span<const Real>>& grads,
               AdamState& state, const AdamConfig& cfg) {
    require(params.size() == grads.size(), "adam: params/grads group count mismatch");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    require(state.m.size() == params.size(), "adam: state does not match parameter groups");
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t g = 0; g < params.size(); ++g) {
        auto p = params[g];
        auto gr = grads[g];
        require(p.size() == gr.size() && p.size() == state.m[g].size(), "adam: group size mismatch");
        auto& m = state.m[g];
        auto& v = state.v[g];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = gr[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] = static_cast<Real>(p[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

template void adam_step<float>(const std::vector<std::span<float>>&, const std::vector<std::span<const float>>&,
                               AdamState&, const AdamConfig&);
template void adam_step<double>(const std::vector<std::span<double>>&, const std::vector<std::span<const double>>&,
                                AdamState&, const AdamConfig&);

}  // namespace qislab::nn
