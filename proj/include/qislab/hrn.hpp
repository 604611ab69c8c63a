#pragma once

// Hierarchical representation network over quantization-index windows:
//
//   3 embedding tables -> concat (T×3E)
//     -> block 1: conv(k1) -> BN -> ReLU ──> pool (path 1)
//     -> block 2: conv(k2) -> BN -> ReLU ──> pool (path 2)
//     -> block 3: conv(k3) -> BN -> ReLU ──> pool (path 3)
//   z = [r_p for enabled paths] -> fc1 + ReLU -> dropout -> fc2 -> softmax
//
// Pooling is attention (wᵀtanh(h_i) + b scores) or per-channel max.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qislab/nn/layers.hpp"
#include "qislab/nn/tensor.hpp"
#include "qislab/stego_sim.hpp"

namespace qislab {

enum class Pooling { attention, maxpool };
std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view s);

struct HrnConfig {
    std::array<std::size_t, kTracks> vocab_sizes{128, 32, 32};
    std::size_t embed_dim = 16;
    std::size_t block_filters = 32;
    std::vector<std::size_t> kernel_sizes{1, 3, 5};
    std::size_t fc_dim = 64;
    double dropout_rate = 0.6;
    std::size_t n_classes = 2;
    Pooling pooling = Pooling::attention;
    /// Bit p-1 set ⇔ path p enabled. The deepest path must stay enabled.
    std::uint32_t enabled_paths = 0b111;

    /// Filters 256 (other fields keep their defaults).
    static HrnConfig paper_scale();

    std::size_t n_blocks() const noexcept { return kernel_sizes.size(); }
    bool path_enabled(std::size_t path) const noexcept { return (enabled_paths >> (path - 1)) & 1u; }
    /// Enabled path numbers (1-based), ascending.
    std::vector<std::size_t> paths() const;
    std::uint32_t all_paths_mask() const noexcept { return (1u << n_blocks()) - 1u; }
    /// Shortest input for which every block has a positive output length.
    std::size_t min_frames() const;
    std::size_t z_dim() const { return paths().size() * block_filters; }
    std::size_t input_channels() const { return kTracks * embed_dim; }

    void validate() const;
    friend bool operator==(const HrnConfig&, const HrnConfig&) = default;
};

/// Ablation variants #0..#6.
enum class Variant { baseline = 0, no_path1, no_path2, no_paths12, maxpool, two_blocks, four_blocks };
inline constexpr std::size_t kVariantCount = 7;
std::string_view variant_description(Variant v);
HrnConfig make_variant(const HrnConfig& base, Variant v);

/// Closed-form trainable-parameter count (batch-norm running stats excluded).
std::size_t count_params(const HrnConfig& cfg);

template <typename Real>
struct ConvBlockParams {
    nn::Tensor<Real> kernel;  // F×k×C_in
    nn::Tensor<Real> bias;    // F
    nn::Tensor<Real> gamma, beta;
    nn::Tensor<Real> running_mean, running_var;  // not trainable
    friend bool operator==(const ConvBlockParams&, const ConvBlockParams&) = default;
};

template <typename Real>
struct AttentionParams {
    nn::Tensor<Real> w;  // F
    nn::Tensor<Real> b;  // 1
    friend bool operator==(const AttentionParams&, const AttentionParams&) = default;
};

template <typename Real>
struct HrnParams {
    std::array<nn::Tensor<Real>, kTracks> embed;  // V_j×E
    std::vector<ConvBlockParams<Real>> blocks;
    std::vector<AttentionParams<Real>> heads;  // one per enabled path, attention pooling only
    nn::Tensor<Real> fc1_w, fc1_b;              // fc×|z|, fc
    nn::Tensor<Real> fc2_w, fc2_b;              // C×fc, C

    /// Zero-filled tensors with the shapes cfg dictates (running_var = 1).
    static HrnParams zeros(const HrnConfig& cfg);

    /// Visits every tensor in declared (serialization) order.
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn&& fn) {
        for (std::size_t j = 0; j < kTracks; ++j) fn("embed" + std::to_string(j), self.embed[j], true);
        for (std::size_t i = 0; i < self.blocks.size(); ++i) {
            auto& b = self.blocks[i];
            const std::string p = "block" + std::to_string(i + 1) + ".";
            fn(p + "kernel", b.kernel, true);
            fn(p + "bias", b.bias, true);
            fn(p + "gamma", b.gamma, true);
            fn(p + "beta", b.beta, true);
            fn(p + "running_mean", b.running_mean, false);
            fn(p + "running_var", b.running_var, false);
        }
        for (std::size_t i = 0; i < self.heads.size(); ++i) {
            const std::string p = "attention" + std::to_string(i + 1) + ".";
            fn(p + "w", self.heads[i].w, true);
            fn(p + "b", self.heads[i].b, true);
        }
        fn("fc1.w", self.fc1_w, true);
        fn("fc1.b", self.fc1_b, true);
        fn("fc2.w", self.fc2_w, true);
        fn("fc2.b", self.fc2_b, true);
    }
    template <typename Fn>
    void for_each(Fn&& fn) { visit(*this, fn); }
    template <typename Fn>
    void for_each(Fn&& fn) const { visit(*this, fn); }

    std::vector<std::span<Real>> trainable_spans();
    std::vector<std::span<const Real>> trainable_spans() const;
    std::size_t trainable_count() const;
    void zero();
    /// this += other, tensor by tensor (trainable and buffers).
    void add(const HrnParams& other);
    bool all_finite() const;

    template <typename To>
    HrnParams<To> cast() const;

    friend bool operator==(const HrnParams&, const HrnParams&) = default;
};

template <typename Real>
HrnParams<Real> init_params(const HrnConfig& cfg, std::uint64_t seed);

template <typename Real>
struct HrnOutput {
    std::array<Real, 2> logits{};
    std::array<Real, 2> probs{};
    /// Attention weights per enabled path (empty vectors under max pooling).
    std::vector<std::vector<Real>> alphas;
};

/// Batched forward/backward with cached activations.
///
/// Per-sample work is split into a fixed number of contiguous shards that
/// depend only on the batch size; per-shard parameter gradients are summed in
/// shard order and batch-norm reductions run serially in row order, so
/// results do not depend on how many threads execute the shards.
template <typename Real>
class HrnPass {
public:
    explicit HrnPass(const HrnConfig& cfg, std::size_t threads = 1);

    /// All inputs must share one length ≥ cfg.min_frames(). Train mode uses
    /// batch statistics and per-sample dropout masks derived from dropout_seed.
    void forward(const HrnParams<Real>& params, std::span<const QisMatrix* const> inputs, nn::Mode mode,
                 std::uint64_t dropout_seed);

    /// Backward of the mean cross-entropy over the batch of the last forward.
    /// Accumulates into grads; returns the mean loss.
    Real backward(const HrnParams<Real>& params, std::span<const Label> labels, HrnParams<Real>& grads);

    /// Mean loss of the last forward without computing gradients.
    Real loss(std::span<const Label> labels) const;

    /// Momentum update of the running statistics from the last train-mode forward.
    void update_running_stats(HrnParams<Real>& params) const;

    /// Distance of the last forward from the nearest non-differentiable point:
    /// min over ReLU inputs of |x| and over max-pool channels of the top-two
    /// gap. Finite-difference checks are only meaningful when this is large
    /// relative to the probe step.
    double kink_margin(const HrnParams<Real>& params) const;

    std::size_t batch_size() const noexcept { return batch_; }
    HrnOutput<Real> output(std::size_t sample) const;
    std::size_t z_dim() const noexcept { return z_dim_; }

private:
    struct Shard {
        std::size_t begin, end;
    };

    HrnConfig cfg_;
    std::size_t threads_;
    std::vector<std::size_t> paths_;
    std::size_t z_dim_ = 0;

    std::size_t batch_ = 0;
    std::size_t frames_ = 0;
    nn::Mode mode_ = nn::Mode::infer;
    std::vector<std::vector<std::int32_t>> indices_;  // per sample: track-major T indices
    std::vector<Real> x0_;                            // B×T×3E
    std::vector<std::size_t> lengths_;                // per block
    std::vector<std::vector<Real>> pre_, act_;        // per block: B×L×F
    std::vector<nn::BatchNormCache<Real>> bn_;
    std::vector<std::vector<Real>> alpha_;            // per path: B×L
    std::vector<std::vector<Real>> tanh_;             // per path: B×L×F
    std::vector<std::vector<std::uint32_t>> argmax_;  // per path: B×F
    std::vector<Real> z_, h1_, mask_, d1_, logits_, probs_;
    std::vector<Shard> shards_;
    std::vector<HrnParams<Real>> shard_grads_;

    template <typename Fn>
    void for_each_shard(Fn&& fn);
};

/// Single-window inference (or train-mode forward of a batch of one).
template <typename Real>
HrnOutput<Real> forward(const HrnParams<Real>& params, const HrnConfig& cfg, const QisMatrix& qis,
                        nn::Mode mode = nn::Mode::infer, std::uint64_t seed = 0);

/// argmax of the class probabilities; exact ties go to cover.
template <typename Real>
Label predict(const HrnParams<Real>& params, const HrnConfig& cfg, const QisMatrix& qis);

template <typename Real>
Label label_from_probs(const std::array<Real, 2>& probs) {
    return probs[1] > probs[0] ? Label::stego : Label::cover;
}

// Parameter files -------------------------------------------------------------

class ParamFileError : public Error {
public:
    enum class Code { bad_magic, version_mismatch, truncated, shape_mismatch, bad_config };
    ParamFileError(Code code, const std::string& what) : Error(what), code_(code) {}
    Code code() const noexcept { return code_; }

private:
    Code code_;
};

inline constexpr std::uint8_t kParamFileVersion = 1;

/// Magic "HRN1", version byte, tagged config block, then every tensor in
/// declared order as a u32 element count followed by little-endian float32.
template <typename Real>
std::string params_to_bytes(const HrnParams<Real>& params, const HrnConfig& cfg);

template <typename Real>
std::pair<HrnParams<Real>, HrnConfig> params_from_bytes(std::string_view bytes);

template <typename Real>
void save_params(const HrnParams<Real>& params, const HrnConfig& cfg, const std::filesystem::path& path);

template <typename Real>
std::pair<HrnParams<Real>, HrnConfig> load_params(const std::filesystem::path& path);

}  // namespace qislab
