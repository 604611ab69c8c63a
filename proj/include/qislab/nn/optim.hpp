#pragma once

#include <span>
#include <vector>

#include "qislab/common.hpp"

namespace qislab::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments per parameter group plus the shared step counter.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    long t = 0;
};

/// One bias-corrected Adam update over every (param, grad) group. The state
/// is sized lazily on the first call; group shapes must not change afterwards.
template <typename Real>
void adam_step(const std::vector<std::span<Real>>& params, const std::vector<std::span<const Real>>& grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace qislab::nn
