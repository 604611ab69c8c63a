#pragma once

// Finite-difference verification of every layer's backward pass and of the
// composite network, over randomized shapes (64-bit).

#include <cstdint>
#include <string>
#include <vector>

#include "qislab/experiment.hpp"
#include "qislab/nn/gradcheck.hpp"

namespace qislab {

struct LayerCheck {
    std::string layer;
    std::size_t configs = 0;
    std::size_t redrawn = 0;  // draws rejected for sitting near a kink
    std::size_t checked = 0;  // scalar probes
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckSuite {
    double tolerance = 1e-4;
    std::vector<LayerCheck> layers;
    bool pass() const;
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Layers: embedding, conv1d, relu, batch_norm (train and infer), attention_pool,
/// max_pool, dense, dense_relu, dropout, softmax_xent, hrn. Composite draws
/// whose forward pass lies within 1e-3 of a ReLU or max-pool kink are redrawn.
GradCheckSuite run_gradcheck_suite(std::size_t configs_per_layer = 20, std::uint64_t seed = 1,
                                   double tolerance = kGradCheckTolerance);

/// Columns: layer, configs, redrawn, checked, max_rel_err, result.
ReportTable gradcheck_table(const GradCheckSuite& suite);

}  // namespace qislab
