#pragma once

// Hand-derived forward/backward kernels. Conventions:
//  - forward functions overwrite their outputs;
//  - backward functions ACCUMULATE (+=) into every gradient they produce, so a
//    caller zeroes gradient buffers once and lets several consumers add in.
// All kernels are instantiated for float and double.

#include <cstdint>
#include <span>
#include <vector>

#include "qislab/nn/tensor.hpp"

namespace qislab::nn {

enum class Mode { train, infer };
enum class Activation { none, relu };

// Embedding ------------------------------------------------------------------

/// out.row(i) = table.row(indices[i]). out may be a column block of a wider
/// matrix (stride > cols).
template <typename Real>
void embed_lookup(std::span<const std::int32_t> indices, ConstMatRef<Real> table, MatRef<Real> out);

template <typename Real>
void embed_lookup_backward(std::span<const std::int32_t> indices, ConstMatRef<Real> dout, MatRef<Real> dtable);

// 1-D valid convolution --------------------------------------------------------

/// Filter bank of F filters, each k×C_in, stored as F×k×C_in.
template <typename Real>
struct ConvWeights {
    const Real* kernel;
    const Real* bias;
    std::size_t filters;
    std::size_t width;
    std::size_t channels;
};

template <typename Real>
struct ConvGrads {
    Real* kernel;
    Real* bias;
};

inline std::size_t conv_output_length(std::size_t frames, std::size_t width) {
    return frames >= width ? frames - width + 1 : 0;
}

/// x: T×C_in (contiguous rows), out: (T−k+1)×F. Pre-activation only.
template <typename Real>
void conv1d_forward(ConstMatRef<Real> x, const ConvWeights<Real>& w, MatRef<Real> out);

/// dx may be empty (data == nullptr) when the input gradient is not needed.
template <typename Real>
void conv1d_backward(ConstMatRef<Real> x, const ConvWeights<Real>& w, ConstMatRef<Real> dout, MatRef<Real> dx,
                     const ConvGrads<Real>& grads);

// Elementwise -------------------------------------------------------------------

template <typename Real>
void relu_forward(std::span<const Real> x, std::span<Real> y);

/// Uses the forward output: the subgradient at 0 is 0.
template <typename Real>
void relu_backward(std::span<const Real> y, std::span<const Real> dy, std::span<Real> dx);

// Batch normalization ---------------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

template <typename Real>
struct BatchNormCache {
    std::vector<Real> xhat;       // N×D
    std::vector<Real> inv_std;    // D
    std::vector<Real> batch_mean; // D (train mode)
    std::vector<Real> batch_var;  // D (train mode, biased)
    Mode mode = Mode::train;
};

/// x: N×D with N ≥ 2 in train mode. Train mode normalizes with batch
/// statistics; infer mode with running_mean / running_var. Running stats are
/// not touched here, see batch_norm_update_running.
template <typename Real>
void batch_norm_forward(ConstMatRef<Real> x, std::span<const Real> gamma, std::span<const Real> beta,
                        std::span<const Real> running_mean, std::span<const Real> running_var, Mode mode,
                        MatRef<Real> y, BatchNormCache<Real>& cache);

/// running ← momentum·running + (1 − momentum)·batch.
template <typename Real>
void batch_norm_update_running(const BatchNormCache<Real>& cache, std::span<Real> running_mean,
                               std::span<Real> running_var);

template <typename Real>
void batch_norm_backward(const BatchNormCache<Real>& cache, std::span<const Real> gamma, ConstMatRef<Real> dy,
                         MatRef<Real> dx, std::span<Real> dgamma, std::span<Real> dbeta);

// Attention pooling ------------------------------------------------------------

/// score_i = wᵀ·tanh(h_i) + b, alpha = softmax(score), r = Σ alpha_i·h_i.
/// `tanh_h` (n×D) and `alpha` (n) are outputs kept for the backward pass.
template <typename Real>
void attention_pool_forward(ConstMatRef<Real> h, std::span<const Real> w, Real b, std::span<Real> r,
                            std::span<Real> alpha, MatRef<Real> tanh_h);

template <typename Real>
void attention_pool_backward(ConstMatRef<Real> h, std::span<const Real> w, std::span<const Real> alpha,
                             ConstMatRef<Real> tanh_h, std::span<const Real> dr, MatRef<Real> dh, std::span<Real> dw,
                             Real& db);

/// Per-channel max over positions; argmax keeps the first maximum.
template <typename Real>
void max_pool_forward(ConstMatRef<Real> h, std::span<Real> r, std::span<std::uint32_t> argmax);

template <typename Real>
void max_pool_backward(std::span<const std::uint32_t> argmax, std::span<const Real> dr, MatRef<Real> dh);

// Dense -------------------------------------------------------------------------

/// y = act(W·x + b) with W: D_out×D_in.
template <typename Real>
void dense_forward(std::span<const Real> x, ConstMatRef<Real> W, std::span<const Real> b, Activation act,
                   std::span<Real> y);

/// `y` is the forward output (needed for the relu mask). dx may be empty.
template <typename Real>
void dense_backward(std::span<const Real> x, ConstMatRef<Real> W, std::span<const Real> y, Activation act,
                    std::span<const Real> dy, std::span<Real> dx, MatRef<Real> dW, std::span<Real> db);

// Dropout -----------------------------------------------------------------------

/// Inverted-dropout mask: train mode keeps each unit with probability
/// 1 − rate and scales kept units by 1/(1 − rate); infer mode is all ones.
template <typename Real>
std::vector<Real> dropout_mask(std::size_t n, double rate, Mode mode, std::uint64_t seed);

// Loss ----------------------------------------------------------------------------

template <typename Real>
struct SoftmaxXent {
    Real loss;
    std::vector<Real> probs;
    std::vector<Real> grad_logits;
};

/// Numerically stable softmax + negative log-likelihood.
template <typename Real>
SoftmaxXent<Real> softmax_cross_entropy(std::span<const Real> logits, std::size_t label);

template <typename Real>
void softmax(std::span<const Real> logits, std::span<Real> probs);

}  // namespace qislab::nn
