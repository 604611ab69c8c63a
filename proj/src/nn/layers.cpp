#include "qislab/nn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace qislab::nn {

namespace {

template <typename Real>
inline Real dot(const Real* a, const Real* b, std::size_t n) {
    Real acc = 0;
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename Real>
inline void axpy(Real alpha, const Real* x, Real* y, std::size_t n) {
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename Real>
void embed_lookup(std::span<const std::int32_t> indices, ConstMatRef<Real> table, MatRef<Real> out) {
    require(out.rows == indices.size() && out.cols == table.cols, "embed_lookup: output shape mismatch");
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto idx = indices[i];
        if (idx < 0 || static_cast<std::size_t>(idx) >= table.rows)
            throw InvalidArgument("embed_lookup: index " + std::to_string(idx) + " outside table of " +
                                  std::to_string(table.rows) + " rows");
        std::copy_n(table.row(static_cast<std::size_t>(idx)), table.cols, out.row(i));
    }
}

template <typename Real>
void embed_lookup_backward(std::span<const std::int32_t> indices, ConstMatRef<Real> dout, MatRef<Real> dtable) {
    for (std::size_t i = 0; i < indices.size(); ++i)
        axpy(Real(1), dout.row(i), dtable.row(static_cast<std::size_t>(indices[i])), dtable.cols);
}

// ---------------------------------------------------------------------------

template <typename Real>
void conv1d_forward(ConstMatRef<Real> x, const ConvWeights<Real>& w, MatRef<Real> out) {
    if (x.rows < w.width)
        throw InvalidArgument("conv1d: input length " + std::to_string(x.rows) + " is shorter than kernel width " +
                              std::to_string(w.width));
    require(x.cols == w.channels && x.contiguous(), "conv1d: input must be contiguous T×C_in");
    const std::size_t len = x.rows - w.width + 1;
    require(out.rows == len && out.cols == w.filters, "conv1d: output shape mismatch");
    const std::size_t span = w.width * w.channels;
    for (std::size_t j = 0; j < len; ++j) {
        const Real* window = x.row(j);
        Real* o = out.row(j);
        for (std::size_t f = 0; f < w.filters; ++f) o[f] = w.bias[f] + dot(window, w.kernel + f * span, span);
    }
}

template <typename Real>
void conv1d_backward(ConstMatRef<Real> x, const ConvWeights<Real>& w, ConstMatRef<Real> dout, MatRef<Real> dx,
                     const ConvGrads<Real>& grads) {
    const std::size_t span = w.width * w.channels;
    const bool want_dx = dx.data != nullptr;
    require(!want_dx || (dx.rows == x.rows && dx.cols == x.cols && dx.contiguous()), "conv1d: dx shape mismatch");
    for (std::size_t j = 0; j < dout.rows; ++j) {
        const Real* window = x.row(j);
        const Real* g = dout.row(j);
        Real* dwin = want_dx ? dx.row(j) : nullptr;
        for (std::size_t f = 0; f < w.filters; ++f) {
            const Real gf = g[f];
            grads.bias[f] += gf;
            axpy(gf, window, grads.kernel + f * span, span);
            if (want_dx) axpy(gf, w.kernel + f * span, dwin, span);
        }
    }
}

// ---------------------------------------------------------------------------

template <typename Real>
void relu_forward(std::span<const Real> x, std::span<Real> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > Real(0) ? x[i] : Real(0);
}

template <typename Real>
void relu_backward(std::span<const Real> y, std::span<const Real> dy, std::span<Real> dx) {
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] > Real(0)) dx[i] += dy[i];
}

// ---------------------------------------------------------------------------

template <typename Real>
void batch_norm_forward(ConstMatRef<Real> x, std::span<const Real> gamma, std::span<const Real> beta,
                        std::span<const Real> running_mean, std::span<const Real> running_var, Mode mode,
                        MatRef<Real> y, BatchNormCache<Real>& cache) {
    const std::size_t n = x.rows, d = x.cols;
    require(gamma.size() == d && beta.size() == d, "batch_norm: parameter size mismatch");
    require(y.rows == n && y.cols == d, "batch_norm: output shape mismatch");
    if (mode == Mode::train && n < 2)
        throw InvalidArgument("batch_norm: train mode needs at least 2 rows, got " + std::to_string(n));
    cache.mode = mode;
    cache.xhat.resize(n * d);
    cache.inv_std.resize(d);
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    if (mode == Mode::train) {
        for (std::size_t r = 0; r < n; ++r) {
            const Real* xr = x.row(r);
            for (std::size_t c = 0; c < d; ++c) mean[c] += xr[c];
        }
        for (auto& m : mean) m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
            const Real* xr = x.row(r);
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = xr[c] - mean[c];
                var[c] += diff * diff;
            }
        }
        for (auto& v : var) v /= static_cast<double>(n);
        cache.batch_mean.assign(mean.begin(), mean.end());
        cache.batch_var.assign(var.begin(), var.end());
    } else {
        require(running_mean.size() == d && running_var.size() == d, "batch_norm: running stats size mismatch");
        for (std::size_t c = 0; c < d; ++c) {
            mean[c] = running_mean[c];
            var[c] = running_var[c];
        }
    }
    std::vector<Real> mean_r(d);
    for (std::size_t c = 0; c < d; ++c) {
        cache.inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var[c] + kBatchNormEps));
        mean_r[c] = static_cast<Real>(mean[c]);
    }
    for (std::size_t r = 0; r < n; ++r) {
        const Real* xr = x.row(r);
        Real* xh = cache.xhat.data() + r * d;
        Real* yr = y.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            xh[c] = (xr[c] - mean_r[c]) * cache.inv_std[c];
            yr[c] = gamma[c] * xh[c] + beta[c];
        }
    }
}

template <typename Real>
void batch_norm_update_running(const BatchNormCache<Real>& cache, std::span<Real> running_mean,
                               std::span<Real> running_var) {
    require(cache.mode == Mode::train, "batch_norm: running stats update needs a train-mode pass");
    const Real mom = static_cast<Real>(kBatchNormMomentum);
    for (std::size_t c = 0; c < running_mean.size(); ++c) {
        running_mean[c] = mom * running_mean[c] + (Real(1) - mom) * cache.batch_mean[c];
        running_var[c] = mom * running_var[c] + (Real(1) - mom) * cache.batch_var[c];
    }
}

template <typename Real>
void batch_norm_backward(const BatchNormCache<Real>& cache, std::span<const Real> gamma, ConstMatRef<Real> dy,
                         MatRef<Real> dx, std::span<Real> dgamma, std::span<Real> dbeta) {
    const std::size_t n = dy.rows, d = dy.cols;
    std::vector<double> sum_dy(d, 0.0), sum_dy_xhat(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const Real* g = dy.row(r);
        const Real* xh = cache.xhat.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) {
            sum_dy[c] += g[c];
            sum_dy_xhat[c] += static_cast<double>(g[c]) * xh[c];
        }
    }
    for (std::size_t c = 0; c < d; ++c) {
        dbeta[c] += static_cast<Real>(sum_dy[c]);
        dgamma[c] += static_cast<Real>(sum_dy_xhat[c]);
    }
    if (dx.data == nullptr) return;
    if (cache.mode == Mode::infer) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) dx(r, c) += dy(r, c) * gamma[c] * cache.inv_std[c];
        return;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<Real> scale(d), mean_dy(d), mean_dy_xhat(d);
    for (std::size_t c = 0; c < d; ++c) {
        scale[c] = gamma[c] * cache.inv_std[c];
        mean_dy[c] = static_cast<Real>(sum_dy[c] * inv_n);
        mean_dy_xhat[c] = static_cast<Real>(sum_dy_xhat[c] * inv_n);
    }
    for (std::size_t r = 0; r < n; ++r) {
        const Real* g = dy.row(r);
        const Real* xh = cache.xhat.data() + r * d;
        Real* o = dx.row(r);
        for (std::size_t c = 0; c < d; ++c) o[c] += scale[c] * (g[c] - mean_dy[c] - xh[c] * mean_dy_xhat[c]);
    }
}

// ---------------------------------------------------------------------------

template <typename Real>
void attention_pool_forward(ConstMatRef<Real> h, std::span<const Real> w, Real b, std::span<Real> r,
                            std::span<Real> alpha, MatRef<Real> tanh_h) {
    const std::size_t n = h.rows, d = h.cols;
    if (n == 0) throw InvalidArgument("attention_pool: empty input");
    require(w.size() == d && r.size() == d && alpha.size() == n, "attention_pool: shape mismatch");
    Real max_score = -std::numeric_limits<Real>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const Real* hi = h.row(i);
        Real* mi = tanh_h.row(i);
        for (std::size_t c = 0; c < d; ++c) mi[c] = std::tanh(hi[c]);
        alpha[i] = dot(w.data(), static_cast<const Real*>(mi), d) + b;
        max_score = std::max(max_score, alpha[i]);
    }
    Real total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        alpha[i] = std::exp(alpha[i] - max_score);
        total += alpha[i];
    }
    for (auto& a : alpha) a /= total;
    std::fill(r.begin(), r.end(), Real(0));
    for (std::size_t i = 0; i < n; ++i) axpy(alpha[i], h.row(i), r.data(), d);
}

template <typename Real>
void attention_pool_backward(ConstMatRef<Real> h, std::span<const Real> w, std::span<const Real> alpha,
                             ConstMatRef<Real> tanh_h, std::span<const Real> dr, MatRef<Real> dh, std::span<Real> dw,
                             Real& db) {
    const std::size_t n = h.rows, d = h.cols;
    std::vector<Real> dalpha(n);
    Real weighted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        dalpha[i] = dot(h.row(i), dr.data(), d);
        weighted += alpha[i] * dalpha[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Real dscore = alpha[i] * (dalpha[i] - weighted);
        const Real* mi = tanh_h.row(i);
        Real* dhi = dh.row(i);
        for (std::size_t c = 0; c < d; ++c) dhi[c] += alpha[i] * dr[c] + dscore * w[c] * (Real(1) - mi[c] * mi[c]);
        axpy(dscore, mi, dw.data(), d);
        db += dscore;
    }
}

template <typename Real>
void max_pool_forward(ConstMatRef<Real> h, std::span<Real> r, std::span<std::uint32_t> argmax) {
    if (h.rows == 0) throw InvalidArgument("max_pool: empty input");
    for (std::size_t c = 0; c < h.cols; ++c) {
        r[c] = h(0, c);
        argmax[c] = 0;
    }
    for (std::size_t i = 1; i < h.rows; ++i) {
        const Real* hi = h.row(i);
        for (std::size_t c = 0; c < h.cols; ++c)
            if (hi[c] > r[c]) {
                r[c] = hi[c];
                argmax[c] = static_cast<std::uint32_t>(i);
            }
    }
}

template <typename Real>
void max_pool_backward(std::span<const std::uint32_t> argmax, std::span<const Real> dr, MatRef<Real> dh) {
    for (std::size_t c = 0; c < dr.size(); ++c) dh(argmax[c], c) += dr[c];
}

// ---------------------------------------------------------------------------

template <typename Real>
void dense_forward(std::span<const Real> x, ConstMatRef<Real> W, std::span<const Real> b, Activation act,
                   std::span<Real> y) {
    require(W.cols == x.size() && W.rows == y.size() && b.size() == y.size(), "dense: shape mismatch");
    for (std::size_t o = 0; o < W.rows; ++o) {
        const Real v = dot(W.row(o), x.data(), x.size()) + b[o];
        y[o] = act == Activation::relu && v < Real(0) ? Real(0) : v;
    }
}

template <typename Real>
void dense_backward(std::span<const Real> x, ConstMatRef<Real> W, std::span<const Real> y, Activation act,
                    std::span<const Real> dy, std::span<Real> dx, MatRef<Real> dW, std::span<Real> db) {
    for (std::size_t o = 0; o < W.rows; ++o) {
        const Real g = act == Activation::relu && !(y[o] > Real(0)) ? Real(0) : dy[o];
        if (g == Real(0)) continue;
        db[o] += g;
        axpy(g, x.data(), dW.row(o), x.size());
        if (!dx.empty()) axpy(g, W.row(o), dx.data(), x.size());
    }
}

// ---------------------------------------------------------------------------

template <typename Real>
std::vector<Real> dropout_mask(std::size_t n, double rate, Mode mode, std::uint64_t seed) {
    require(rate >= 0.0 && rate < 1.0, "dropout rate must lie in [0, 1)");
    std::vector<Real> mask(n, Real(1));
    if (mode == Mode::infer || rate == 0.0) return mask;
    Rng rng(seed);
    const Real scale = static_cast<Real>(1.0 / (1.0 - rate));
    for (auto& m : mask) m = rng.uniform() < rate ? Real(0) : scale;
    return mask;
}

// ---------------------------------------------------------------------------

template <typename Real>
void softmax(std::span<const Real> logits, std::span<Real> probs) {
    const Real m = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) total += std::exp(static_cast<double>(logits[i] - m));
    for (std::size_t i = 0; i < logits.size(); ++i)
        probs[i] = static_cast<Real>(std::exp(static_cast<double>(logits[i] - m)) / total);
}

template <typename Real>
SoftmaxXent<Real> softmax_cross_entropy(std::span<const Real> logits, std::size_t label) {
    require(!logits.empty(), "softmax_cross_entropy: empty logits");
    if (label >= logits.size()) throw InvalidArgument("softmax_cross_entropy: label out of range");
    SoftmaxXent<Real> out;
    out.probs.resize(logits.size());
    softmax(logits, std::span<Real>(out.probs));
    const double m = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (Real l : logits) total += std::exp(static_cast<double>(l) - m);
    // −log p_label = log Σ exp(l_k − m) − (l_label − m)
    out.loss = static_cast<Real>(std::log(total) - (static_cast<double>(logits[label]) - m));
    out.grad_logits = out.probs;
    out.grad_logits[label] -= Real(1);
    return out;
}

// ---------------------------------------------------------------------------

#define QISLAB_INSTANTIATE_LAYERS(Real)                                                                               \
    template void embed_lookup<Real>(std::span<const std::int32_t>, ConstMatRef<Real>, MatRef<Real>);                \
    template void embed_lookup_backward<Real>(std::span<const std::int32_t>, ConstMatRef<Real>, MatRef<Real>);       \
    template void conv1d_forward<Real>(ConstMatRef<Real>, const ConvWeights<Real>&, MatRef<Real>);                    \
    template void conv1d_backward<Real>(ConstMatRef<Real>, const ConvWeights<Real>&, ConstMatRef<Real>, MatRef<Real>, \
                                        const ConvGrads<Real>&);                                                      \
    template void relu_forward<Real>(std::span<const Real>, std::span<Real>);                                         \
    template void relu_backward<Real>(std::span<const Real>, std::span<const Real>, std::span<Real>);                 \
    template void batch_norm_forward<Real>(ConstMatRef<Real>, std::span<const Real>, std::span<const Real>,           \
                                           std::span<const Real>, std::span<const Real>, Mode, MatRef<Real>,          \
                                           BatchNormCache<Real>&);                                                    \
    template void batch_norm_update_running<Real>(const BatchNormCache<Real>&, std::span<Real>, std::span<Real>);     \
    template void batch_norm_backward<Real>(const BatchNormCache<Real>&, std::span<const Real>, ConstMatRef<Real>,    \
                                            MatRef<Real>, std::span<Real>, std::span<Real>);                          \
    template void attention_pool_forward<Real>(ConstMatRef<Real>, std::span<const Real>, Real, std::span<Real>,       \
                                               std::span<Real>, MatRef<Real>);                                        \
    template void attention_pool_backward<Real>(ConstMatRef<Real>, std::span<const Real>, std::span<const Real>,      \
                                                ConstMatRef<Real>, std::span<const Real>, MatRef<Real>,               \
                                                std::span<Real>, Real&);                                              \
    template void max_pool_forward<Real>(ConstMatRef<Real>, std::span<Real>, std::span<std::uint32_t>);               \
    template void max_pool_backward<Real>(std::span<const std::uint32_t>, std::span<const Real>, MatRef<Real>);       \
    template void dense_forward<Real>(std::span<const Real>, ConstMatRef<Real>, std::span<const Real>, Activation,    \
                                      std::span<Real>);                                                               \
    template void dense_backward<Real>(std::span<const Real>, ConstMatRef<Real>, std::span<const Real>, Activation,   \
                                       std::span<const Real>, std::span<Real>, MatRef<Real>, std::span<Real>);        \
    template std::vector<Real> dropout_mask<Real>(std::size_t, double, Mode, std::uint64_t);                          \
    template void softmax<Real>(std::span<const Real>, std::span<Real>);                                              \
    template SoftmaxXent<Real> softmax_cross_entropy<Real>(std::span<const Real>, std::size_t);

QISLAB_INSTANTIATE_LAYERS(float)
QISLAB_INSTANTIATE_LAYERS(double)

}  // namespace qislab::nn
