#include "qislab/hrn.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>

#include "qislab/parallel.hpp"

namespace qislab {

using nn::ConstMatRef;
using nn::MatRef;
using nn::Mode;
using nn::Tensor;

std::string_view to_string(Pooling p) { return p == Pooling::attention ? "attention" : "maxpool"; }

Pooling parse_pooling(std::string_view s) {
    if (s == "attention") return Pooling::attention;
    if (s == "maxpool" || s == "max") return Pooling::maxpool;
    throw InvalidArgument("unknown pooling '" + std::string(s) + "'");
}

HrnConfig HrnConfig::paper_scale() {
    HrnConfig c;
    c.block_filters = 256;
    return c;
}

std::vector<std::size_t> HrnConfig::paths() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 1; p <= n_blocks(); ++p)
        if (path_enabled(p)) out.push_back(p);
    return out;
}

std::size_t HrnConfig::min_frames() const {
    std::size_t t = 1;
    for (auto k : kernel_sizes) t += k - 1;
    return t;
}

void HrnConfig::validate() const {
    require(n_blocks() >= 2 && n_blocks() <= 4, "number of conv blocks must be 2, 3 or 4");
    for (auto k : kernel_sizes) require(k >= 1, "kernel sizes must be >= 1");
    for (auto v : vocab_sizes) require(v >= 1, "vocabulary sizes must be >= 1");
    require(embed_dim >= 1 && block_filters >= 1 && fc_dim >= 1, "layer widths must be >= 1");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout rate must lie in [0, 1)");
    require(n_classes == 2, "only binary cover/stego classification is supported");
    require((enabled_paths & ~all_paths_mask()) == 0, "enabled path outside the block range");
    require(path_enabled(n_blocks()), "the deepest block's path must stay enabled");
}

std::string_view variant_description(Variant v) {
    switch (v) {
        case Variant::baseline: return "Baseline (attention on all paths)";
        case Variant::no_path1: return "Remove path 1";
        case Variant::no_path2: return "Remove path 2";
        case Variant::no_paths12: return "Remove paths 1 and 2";
        case Variant::maxpool: return "Max pooling instead of attention";
        case Variant::two_blocks: return "2 convolution blocks";
        case Variant::four_blocks: return "4 convolution blocks";
    }
    return "?";
}

HrnConfig make_variant(const HrnConfig& base, Variant v) {
    HrnConfig c = base;
    switch (v) {
        case Variant::baseline: break;
        case Variant::no_path1: c.enabled_paths &= ~0b001u; break;
        case Variant::no_path2: c.enabled_paths &= ~0b010u; break;
        case Variant::no_paths12: c.enabled_paths &= ~0b011u; break;
        case Variant::maxpool: c.pooling = Pooling::maxpool; break;
        case Variant::two_blocks:
            c.kernel_sizes.resize(2);
            c.enabled_paths = c.all_paths_mask();
            break;
        case Variant::four_blocks:
            // Next odd width after the deepest kernel: (1,3,5) -> (1,3,5,7).
            c.kernel_sizes.push_back(c.kernel_sizes.back() + 2);
            c.enabled_paths = c.all_paths_mask();
            break;
    }
    c.validate();
    return c;
}

std::size_t count_params(const HrnConfig& cfg) {
    cfg.validate();
    const std::size_t E = cfg.embed_dim, F = cfg.block_filters, fc = cfg.fc_dim, C = cfg.n_classes;
    const std::size_t n_paths = cfg.paths().size();
    std::size_t total = 0;
    for (auto v : cfg.vocab_sizes) total += v * E;
    std::size_t c_in = cfg.input_channels();
    for (auto k : cfg.kernel_sizes) {
        total += k * c_in * F + F + 2 * F;
        c_in = F;
    }
    if (cfg.pooling == Pooling::attention) total += n_paths * (F + 1);
    total += n_paths * F * fc + fc;
    total += fc * C + C;
    return total;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename Real>
HrnParams<Real> HrnParams<Real>::zeros(const HrnConfig& cfg) {
    cfg.validate();
    HrnParams p;
    const std::size_t E = cfg.embed_dim, F = cfg.block_filters;
    for (std::size_t j = 0; j < kTracks; ++j) p.embed[j] = Tensor<Real>({cfg.vocab_sizes[j], E});
    std::size_t c_in = cfg.input_channels();
    for (auto k : cfg.kernel_sizes) {
        ConvBlockParams<Real> b;
        b.kernel = Tensor<Real>({F, k, c_in});
        b.bias = Tensor<Real>({F});
        b.gamma = Tensor<Real>({F});
        b.beta = Tensor<Real>({F});
        b.running_mean = Tensor<Real>({F});
        b.running_var = Tensor<Real>({F}, Real(1));
        p.blocks.push_back(std::move(b));
        c_in = F;
    }
    if (cfg.pooling == Pooling::attention)
        for (std::size_t i = 0; i < cfg.paths().size(); ++i) p.heads.push_back({Tensor<Real>({F}), Tensor<Real>({1})});
    p.fc1_w = Tensor<Real>({cfg.fc_dim, cfg.z_dim()});
    p.fc1_b = Tensor<Real>({cfg.fc_dim});
    p.fc2_w = Tensor<Real>({cfg.n_classes, cfg.fc_dim});
    p.fc2_b = Tensor<Real>({cfg.n_classes});
    return p;
}

template <typename Real>
std::vector<std::span<Real>> HrnParams<Real>::trainable_spans() {
    std::vector<std::span<Real>> out;
    for_each([&](const std::string&, Tensor<Real>& t, bool trainable) {
        if (trainable) out.push_back(t.values());
    });
    return out;
}

template <typename Real>
std::vector<std::span<const Real>> HrnParams<Real>::trainable_spans() const {
    std::vector<std::span<const Real>> out;
    for_each([&](const std::string&, const Tensor<Real>& t, bool trainable) {
        if (trainable) out.push_back(t.values());
    });
    return out;
}

template <typename Real>
std::size_t HrnParams<Real>::trainable_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<Real>& t, bool trainable) {
        if (trainable) n += t.size();
    });
    return n;
}

template <typename Real>
void HrnParams<Real>::zero() {
    for_each([](const std::string&, Tensor<Real>& t, bool) { t.fill(Real(0)); });
}

template <typename Real>
void HrnParams<Real>::add(const HrnParams& other) {
    std::vector<const Tensor<Real>*> src;
    other.for_each([&](const std::string&, const Tensor<Real>& t, bool) { src.push_back(&t); });
    std::size_t i = 0;
    for_each([&](const std::string&, Tensor<Real>& t, bool) {
        const auto& s = *src.at(i++);
        require(s.size() == t.size(), "HrnParams::add: shape mismatch");
        for (std::size_t k = 0; k < t.size(); ++k) t[k] += s[k];
    });
}

template <typename Real>
bool HrnParams<Real>::all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Tensor<Real>& t, bool) { ok = ok && t.all_finite(); });
    return ok;
}

template <typename Real>
template <typename To>
HrnParams<To> HrnParams<Real>::cast() const {
    HrnParams<To> out;
    std::vector<Tensor<To>> converted;
    for_each([&](const std::string&, const Tensor<Real>& t, bool) {
        std::vector<To> data(t.values().begin(), t.values().end());
        converted.emplace_back(t.shape(), std::move(data));
    });
    // Rebuild the structure, then fill in declared order.
    for (std::size_t b = 0; b < blocks.size(); ++b) out.blocks.emplace_back();
    for (std::size_t h = 0; h < heads.size(); ++h) out.heads.emplace_back();
    std::size_t i = 0;
    out.for_each([&](const std::string&, Tensor<To>& t, bool) { t = std::move(converted.at(i++)); });
    return out;
}

template <typename Real>
HrnParams<Real> init_params(const HrnConfig& cfg, std::uint64_t seed) {
    auto p = HrnParams<Real>::zeros(cfg);
    Rng rng(seed);
    auto fill_uniform = [&](Tensor<Real>& t, double limit) {
        for (auto& v : t.values()) v = static_cast<Real>(rng.uniform(-limit, limit));
    };
    // ±sqrt(6/fan_in) in front of ReLUs, ±sqrt(3/fan_in) elsewhere.
    for (auto& e : p.embed) fill_uniform(e, std::sqrt(3.0 / static_cast<double>(cfg.embed_dim)));
    for (auto& b : p.blocks) {
        const double fan_in = static_cast<double>(b.kernel.dim(1) * b.kernel.dim(2));
        fill_uniform(b.kernel, std::sqrt(6.0 / fan_in));
        b.gamma.fill(Real(1));
    }
    for (auto& h : p.heads) fill_uniform(h.w, std::sqrt(3.0 / static_cast<double>(cfg.block_filters)));
    fill_uniform(p.fc1_w, std::sqrt(6.0 / static_cast<double>(cfg.z_dim())));
    fill_uniform(p.fc2_w, std::sqrt(3.0 / static_cast<double>(cfg.fc_dim)));
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {
constexpr std::size_t kMaxShards = 8;
constexpr std::uint64_t kDropoutStream = 0xd50;
}  // namespace

template <typename Real>
HrnPass<Real>::HrnPass(const HrnConfig& cfg, std::size_t threads)
    : cfg_(cfg), threads_(std::max<std::size_t>(1, threads)) {
    cfg_.validate();
    paths_ = cfg_.paths();
    z_dim_ = cfg_.z_dim();
}

template <typename Real>
template <typename Fn>
void HrnPass<Real>::for_each_shard(Fn&& fn) {
    parallel_for(shards_.size(), [&](std::size_t s) { fn(s, shards_[s]); }, threads_);
}

template <typename Real>
void HrnPass<Real>::forward(const HrnParams<Real>& params, std::span<const QisMatrix* const> inputs, Mode mode,
                            std::uint64_t dropout_seed) {
    require(!inputs.empty(), "forward: empty batch");
    const std::size_t B = inputs.size();
    const std::size_t T = inputs[0]->length();
    if (T < cfg_.min_frames())
        throw InvalidArgument("input has " + std::to_string(T) + " frames; this configuration needs at least " +
                              std::to_string(cfg_.min_frames()));
    const std::size_t E = cfg_.embed_dim, F = cfg_.block_filters, C0 = cfg_.input_channels();
    batch_ = B;
    frames_ = T;
    mode_ = mode;

    indices_.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& q = *inputs[b];
        require(q.length() == T, "forward: all windows in a batch must have the same length");
        auto& idx = indices_[b];
        idx.resize(kTracks * T);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < kTracks; ++j) {
                const auto v = q.frames[t][j];
                if (v < 0 || static_cast<std::size_t>(v) >= cfg_.vocab_sizes[j])
                    throw InvalidArgument("frame " + std::to_string(t) + " track " + std::to_string(j) + ": index " +
                                          std::to_string(v) + " outside model vocabulary " +
                                          std::to_string(cfg_.vocab_sizes[j]));
                idx[j * T + t] = v;
            }
    }

    const std::size_t n_shards = std::min(kMaxShards, B);
    shards_.resize(n_shards);
    for (std::size_t s = 0; s < n_shards; ++s) shards_[s] = {B * s / n_shards, B * (s + 1) / n_shards};

    x0_.assign(B * T * C0, Real(0));
    for_each_shard([&](std::size_t, Shard sh) {
        for (std::size_t b = sh.begin; b < sh.end; ++b)
            for (std::size_t j = 0; j < kTracks; ++j)
                nn::embed_lookup<Real>(std::span<const std::int32_t>(indices_[b].data() + j * T, T),
                                       params.embed[j].view(), MatRef<Real>(x0_.data() + b * T * C0 + j * E, T, E, C0));
    });

    const std::size_t n_blocks = cfg_.n_blocks();
    lengths_.resize(n_blocks);
    pre_.resize(n_blocks);
    act_.resize(n_blocks);
    bn_.resize(n_blocks);
    const Real* in = x0_.data();
    std::size_t in_len = T, in_ch = C0;
    for (std::size_t i = 0; i < n_blocks; ++i) {
        const auto& blk = params.blocks[i];
        const std::size_t k = cfg_.kernel_sizes[i];
        const std::size_t L = in_len - k + 1;
        lengths_[i] = L;
        pre_[i].resize(B * L * F);
        act_[i].resize(B * L * F);
        const nn::ConvWeights<Real> w{blk.kernel.data(), blk.bias.data(), F, k, in_ch};
        for_each_shard([&](std::size_t, Shard sh) {
            for (std::size_t b = sh.begin; b < sh.end; ++b)
                nn::conv1d_forward<Real>(ConstMatRef<Real>(in + b * in_len * in_ch, in_len, in_ch), w,
                                         MatRef<Real>(pre_[i].data() + b * L * F, L, F));
        });
        nn::batch_norm_forward<Real>(ConstMatRef<Real>(pre_[i].data(), B * L, F), blk.gamma.values(),
                                     blk.beta.values(), blk.running_mean.values(), blk.running_var.values(), mode,
                                     MatRef<Real>(act_[i].data(), B * L, F), bn_[i]);
        nn::relu_forward<Real>(act_[i], act_[i]);
        in = act_[i].data();
        in_len = L;
        in_ch = F;
    }

    const std::size_t P = paths_.size();
    alpha_.resize(P);
    tanh_.resize(P);
    argmax_.resize(P);
    z_.assign(B * z_dim_, Real(0));
    for (std::size_t pi = 0; pi < P; ++pi) {
        const std::size_t blk = paths_[pi] - 1;
        const std::size_t L = lengths_[blk];
        if (cfg_.pooling == Pooling::attention) {
            alpha_[pi].resize(B * L);
            tanh_[pi].resize(B * L * F);
        } else {
            argmax_[pi].resize(B * F);
        }
    }
    const std::size_t fc = cfg_.fc_dim, C = cfg_.n_classes;
    h1_.resize(B * fc);
    mask_.resize(B * fc);
    d1_.resize(B * fc);
    logits_.resize(B * C);
    probs_.resize(B * C);
    for_each_shard([&](std::size_t, Shard sh) {
        for (std::size_t b = sh.begin; b < sh.end; ++b) {
            for (std::size_t pi = 0; pi < P; ++pi) {
                const std::size_t blk = paths_[pi] - 1;
                const std::size_t L = lengths_[blk];
                ConstMatRef<Real> h(act_[blk].data() + b * L * F, L, F);
                std::span<Real> r(z_.data() + b * z_dim_ + pi * F, F);
                if (cfg_.pooling == Pooling::attention) {
                    const auto& head = params.heads[pi];
                    nn::attention_pool_forward<Real>(h, head.w.values(), head.b[0],
                                                     r, std::span<Real>(alpha_[pi].data() + b * L, L),
                                                     MatRef<Real>(tanh_[pi].data() + b * L * F, L, F));
                } else {
                    nn::max_pool_forward<Real>(h, r, std::span<std::uint32_t>(argmax_[pi].data() + b * F, F));
                }
            }
            std::span<const Real> z(z_.data() + b * z_dim_, z_dim_);
            std::span<Real> h1(h1_.data() + b * fc, fc);
            nn::dense_forward<Real>(z, params.fc1_w.view(), params.fc1_b.values(), nn::Activation::relu, h1);
            const auto mask =
                nn::dropout_mask<Real>(fc, cfg_.dropout_rate, mode, derive_seed(dropout_seed, kDropoutStream, b));
            std::copy(mask.begin(), mask.end(), mask_.begin() + static_cast<std::ptrdiff_t>(b * fc));
            for (std::size_t u = 0; u < fc; ++u) d1_[b * fc + u] = h1[u] * mask[u];
            std::span<Real> logits(logits_.data() + b * C, C);
            nn::dense_forward<Real>(std::span<const Real>(d1_.data() + b * fc, fc), params.fc2_w.view(),
                                    params.fc2_b.values(), nn::Activation::none, logits);
            nn::softmax<Real>(logits, std::span<Real>(probs_.data() + b * C, C));
        }
    });
}

template <typename Real>
Real HrnPass<Real>::loss(std::span<const Label> labels) const {
    require(labels.size() == batch_, "loss: one label per sample is required");
    const std::size_t C = cfg_.n_classes;
    double total = 0.0;
    for (std::size_t b = 0; b < batch_; ++b)
        total += nn::softmax_cross_entropy<Real>(std::span<const Real>(logits_.data() + b * C, C),
                                                 static_cast<std::size_t>(labels[b]))
                     .loss;
    return static_cast<Real>(total / static_cast<double>(batch_));
}

template <typename Real>
Real HrnPass<Real>::backward(const HrnParams<Real>& params, std::span<const Label> labels, HrnParams<Real>& grads) {
    require(labels.size() == batch_, "backward: one label per sample is required");
    const std::size_t B = batch_, T = frames_;
    const std::size_t E = cfg_.embed_dim, F = cfg_.block_filters, C0 = cfg_.input_channels();
    const std::size_t fc = cfg_.fc_dim, C = cfg_.n_classes, P = paths_.size();
    const std::size_t n_blocks = cfg_.n_blocks();

    if (shard_grads_.size() != shards_.size()) {
        shard_grads_.clear();
        for (std::size_t s = 0; s < shards_.size(); ++s) shard_grads_.push_back(HrnParams<Real>::zeros(cfg_));
    }
    for (auto& g : shard_grads_) g.zero();

    std::vector<double> losses(B);
    std::vector<Real> dz(B * z_dim_, Real(0));
    std::vector<std::vector<Real>> dact(n_blocks);
    for (std::size_t i = 0; i < n_blocks; ++i) dact[i].assign(B * lengths_[i] * F, Real(0));
    std::vector<Real> dx0(B * T * C0, Real(0));
    const Real inv_b = Real(1) / static_cast<Real>(B);

    for_each_shard([&](std::size_t s, Shard sh) {
        auto& g = shard_grads_[s];
        std::vector<Real> dd1(fc), dh1(fc);
        for (std::size_t b = sh.begin; b < sh.end; ++b) {
            const auto xent = nn::softmax_cross_entropy<Real>(std::span<const Real>(logits_.data() + b * C, C),
                                                              static_cast<std::size_t>(labels[b]));
            losses[b] = xent.loss;
            std::vector<Real> dlogits(xent.grad_logits);
            for (auto& v : dlogits) v *= inv_b;

            std::fill(dd1.begin(), dd1.end(), Real(0));
            nn::dense_backward<Real>(std::span<const Real>(d1_.data() + b * fc, fc), params.fc2_w.view(),
                                     std::span<const Real>(logits_.data() + b * C, C), nn::Activation::none, dlogits,
                                     dd1, g.fc2_w.view(), g.fc2_b.values());
            for (std::size_t u = 0; u < fc; ++u) dh1[u] = dd1[u] * mask_[b * fc + u];
            nn::dense_backward<Real>(std::span<const Real>(z_.data() + b * z_dim_, z_dim_), params.fc1_w.view(),
                                     std::span<const Real>(h1_.data() + b * fc, fc), nn::Activation::relu, dh1,
                                     std::span<Real>(dz.data() + b * z_dim_, z_dim_), g.fc1_w.view(),
                                     g.fc1_b.values());

            for (std::size_t pi = 0; pi < P; ++pi) {
                const std::size_t blk = paths_[pi] - 1;
                const std::size_t L = lengths_[blk];
                std::span<const Real> dr(dz.data() + b * z_dim_ + pi * F, F);
                MatRef<Real> dh(dact[blk].data() + b * L * F, L, F);
                if (cfg_.pooling == Pooling::attention) {
                    nn::attention_pool_backward<Real>(
                        ConstMatRef<Real>(act_[blk].data() + b * L * F, L, F), params.heads[pi].w.values(),
                        std::span<const Real>(alpha_[pi].data() + b * L, L),
                        ConstMatRef<Real>(tanh_[pi].data() + b * L * F, L, F), dr, dh, g.heads[pi].w.values(),
                        g.heads[pi].b[0]);
                } else {
                    nn::max_pool_backward<Real>(std::span<const std::uint32_t>(argmax_[pi].data() + b * F, F), dr, dh);
                }
            }
        }
    });

    std::vector<Real> dbn, dpre;
    for (std::size_t ii = n_blocks; ii-- > 0;) {
        const auto& blk = params.blocks[ii];
        const std::size_t L = lengths_[ii];
        const std::size_t k = cfg_.kernel_sizes[ii];
        dbn.assign(B * L * F, Real(0));
        nn::relu_backward<Real>(act_[ii], dact[ii], dbn);
        dpre.assign(B * L * F, Real(0));
        nn::batch_norm_backward<Real>(bn_[ii], blk.gamma.values(), ConstMatRef<Real>(dbn.data(), B * L, F),
                                      MatRef<Real>(dpre.data(), B * L, F), grads.blocks[ii].gamma.values(),
                                      grads.blocks[ii].beta.values());
        const std::size_t in_len = ii == 0 ? T : lengths_[ii - 1];
        const std::size_t in_ch = ii == 0 ? C0 : F;
        const Real* in = ii == 0 ? x0_.data() : act_[ii - 1].data();
        Real* din = ii == 0 ? dx0.data() : dact[ii - 1].data();
        const nn::ConvWeights<Real> w{blk.kernel.data(), blk.bias.data(), F, k, in_ch};
        for_each_shard([&](std::size_t s, Shard sh) {
            auto& g = shard_grads_[s];
            const nn::ConvGrads<Real> cg{g.blocks[ii].kernel.data(), g.blocks[ii].bias.data()};
            for (std::size_t b = sh.begin; b < sh.end; ++b)
                nn::conv1d_backward<Real>(ConstMatRef<Real>(in + b * in_len * in_ch, in_len, in_ch), w,
                                          ConstMatRef<Real>(dpre.data() + b * L * F, L, F),
                                          MatRef<Real>(din + b * in_len * in_ch, in_len, in_ch), cg);
        });
    }

    for_each_shard([&](std::size_t s, Shard sh) {
        auto& g = shard_grads_[s];
        for (std::size_t b = sh.begin; b < sh.end; ++b)
            for (std::size_t j = 0; j < kTracks; ++j)
                nn::embed_lookup_backward<Real>(std::span<const std::int32_t>(indices_[b].data() + j * T, T),
                                                ConstMatRef<Real>(dx0.data() + b * T * C0 + j * E, T, E, C0),
                                                g.embed[j].view());
    });

    for (const auto& g : shard_grads_) grads.add(g);

    double total = 0.0;
    for (double l : losses) total += l;
    return static_cast<Real>(total / static_cast<double>(B));
}

template <typename Real>
void HrnPass<Real>::update_running_stats(HrnParams<Real>& params) const {
    require(mode_ == Mode::train, "running stats can only be updated after a train-mode forward");
    for (std::size_t i = 0; i < bn_.size(); ++i)
        nn::batch_norm_update_running<Real>(bn_[i], params.blocks[i].running_mean.values(),
                                            params.blocks[i].running_var.values());
}

template <typename Real>
double HrnPass<Real>::kink_margin(const HrnParams<Real>& params) const {
    double margin = std::numeric_limits<double>::infinity();
    const std::size_t F = cfg_.block_filters, fc = cfg_.fc_dim;
    for (std::size_t i = 0; i < bn_.size(); ++i) {
        const auto& xhat = bn_[i].xhat;
        for (std::size_t r = 0; r < xhat.size(); ++r) {
            const std::size_t c = r % F;
            const double y = static_cast<double>(params.blocks[i].gamma[c]) * xhat[r] + params.blocks[i].beta[c];
            margin = std::min(margin, std::abs(y));
        }
    }
    if (cfg_.pooling == Pooling::maxpool) {
        for (std::size_t pi = 0; pi < paths_.size(); ++pi) {
            const std::size_t blk = paths_[pi] - 1, L = lengths_[blk];
            for (std::size_t b = 0; b < batch_; ++b)
                for (std::size_t c = 0; c < F; ++c) {
                    double top = -std::numeric_limits<double>::infinity(), second = top;
                    for (std::size_t l = 0; l < L; ++l) {
                        const double v = act_[blk][(b * L + l) * F + c];
                        if (v > top) {
                            second = top;
                            top = v;
                        } else if (v > second) {
                            second = v;
                        }
                    }
                    // All-zero ties sit behind ReLUs that are already accounted for.
                    if (L > 1 && top > 0.0) margin = std::min(margin, top - second);
                }
        }
    }
    for (std::size_t b = 0; b < batch_; ++b)
        for (std::size_t u = 0; u < fc; ++u) {
            double pre = params.fc1_b[u];
            for (std::size_t k = 0; k < z_dim_; ++k)
                pre += static_cast<double>(params.fc1_w[u * z_dim_ + k]) * z_[b * z_dim_ + k];
            margin = std::min(margin, std::abs(pre));
        }
    return margin;
}

template <typename Real>
HrnOutput<Real> HrnPass<Real>::output(std::size_t sample) const {
    require(sample < batch_, "output: sample index out of range");
    HrnOutput<Real> out;
    const std::size_t C = cfg_.n_classes;
    for (std::size_t c = 0; c < 2; ++c) {
        out.logits[c] = logits_[sample * C + c];
        out.probs[c] = probs_[sample * C + c];
    }
    out.alphas.resize(paths_.size());
    if (cfg_.pooling == Pooling::attention) {
        for (std::size_t pi = 0; pi < paths_.size(); ++pi) {
            const std::size_t L = lengths_[paths_[pi] - 1];
            out.alphas[pi].assign(alpha_[pi].begin() + static_cast<std::ptrdiff_t>(sample * L),
                                  alpha_[pi].begin() + static_cast<std::ptrdiff_t>((sample + 1) * L));
        }
    }
    return out;
}

template <typename Real>
HrnOutput<Real> forward(const HrnParams<Real>& params, const HrnConfig& cfg, const QisMatrix& qis, Mode mode,
                        std::uint64_t seed) {
    HrnPass<Real> pass(cfg);
    const QisMatrix* in[1] = {&qis};
    pass.forward(params, in, mode, seed);
    return pass.output(0);
}

template <typename Real>
Label predict(const HrnParams<Real>& params, const HrnConfig& cfg, const QisMatrix& qis) {
    return label_from_probs(forward(params, cfg, qis, Mode::infer, 0).probs);
}

// ---------------------------------------------------------------------------
// Parameter files
// ---------------------------------------------------------------------------

namespace {

enum ConfigTag : std::uint8_t {
    kTagVocab0 = 1,
    kTagVocab1 = 2,
    kTagVocab2 = 3,
    kTagEmbedDim = 4,
    kTagFilters = 5,
    kTagFcDim = 6,
    kTagClasses = 7,
    kTagPooling = 8,
    kTagPaths = 9,
    kTagDropoutPpm = 10,
    kTagBlocks = 11,
    kTagKernel0 = 16,
};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view b) : bytes_(b) {}
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw ParamFileError(ParamFileError::Code::truncated, "parameter file truncated at byte " +
                                                                      std::to_string(pos_));
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

template <typename Real>
std::string params_to_bytes(const HrnParams<Real>& params, const HrnConfig& cfg) {
    cfg.validate();
    std::string out = "HRN1";
    out.push_back(static_cast<char>(kParamFileVersion));
    std::vector<std::pair<std::uint8_t, std::uint32_t>> entries{
        {kTagVocab0, static_cast<std::uint32_t>(cfg.vocab_sizes[0])},
        {kTagVocab1, static_cast<std::uint32_t>(cfg.vocab_sizes[1])},
        {kTagVocab2, static_cast<std::uint32_t>(cfg.vocab_sizes[2])},
        {kTagEmbedDim, static_cast<std::uint32_t>(cfg.embed_dim)},
        {kTagFilters, static_cast<std::uint32_t>(cfg.block_filters)},
        {kTagFcDim, static_cast<std::uint32_t>(cfg.fc_dim)},
        {kTagClasses, static_cast<std::uint32_t>(cfg.n_classes)},
        {kTagPooling, cfg.pooling == Pooling::attention ? 0u : 1u},
        {kTagPaths, cfg.enabled_paths},
        {kTagDropoutPpm, static_cast<std::uint32_t>(std::lround(cfg.dropout_rate * 1e6))},
        {kTagBlocks, static_cast<std::uint32_t>(cfg.n_blocks())},
    };
    for (std::size_t i = 0; i < cfg.n_blocks(); ++i)
        entries.emplace_back(static_cast<std::uint8_t>(kTagKernel0 + i), static_cast<std::uint32_t>(cfg.kernel_sizes[i]));
    out.push_back(static_cast<char>(entries.size()));
    for (auto [tag, value] : entries) {
        out.push_back(static_cast<char>(tag));
        put_u32(out, value);
    }
    std::vector<const Tensor<Real>*> tensors;
    params.for_each([&](const std::string&, const Tensor<Real>& t, bool) { tensors.push_back(&t); });
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto* t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t->size()));
        for (Real v : t->values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return out;
}

template <typename Real>
std::pair<HrnParams<Real>, HrnConfig> params_from_bytes(std::string_view bytes) {
    using Code = ParamFileError::Code;
    if (bytes.size() < 4 || bytes.substr(0, 4) != "HRN1") throw ParamFileError(Code::bad_magic, "not an HRN1 file");
    Reader r(bytes.substr(4));
    const auto version = r.u8();
    if (version != kParamFileVersion)
        throw ParamFileError(Code::version_mismatch, "unsupported parameter file version " + std::to_string(version));
    HrnConfig cfg;
    cfg.kernel_sizes.clear();
    const std::size_t n_entries = r.u8();
    std::size_t n_blocks = 0;
    std::vector<std::pair<std::size_t, std::size_t>> kernels;
    for (std::size_t e = 0; e < n_entries; ++e) {
        const auto tag = r.u8();
        const auto v = r.u32();
        switch (tag) {
            case kTagVocab0: cfg.vocab_sizes[0] = v; break;
            case kTagVocab1: cfg.vocab_sizes[1] = v; break;
            case kTagVocab2: cfg.vocab_sizes[2] = v; break;
            case kTagEmbedDim: cfg.embed_dim = v; break;
            case kTagFilters: cfg.block_filters = v; break;
            case kTagFcDim: cfg.fc_dim = v; break;
            case kTagClasses: cfg.n_classes = v; break;
            case kTagPooling: cfg.pooling = v == 0 ? Pooling::attention : Pooling::maxpool; break;
            case kTagPaths: cfg.enabled_paths = v; break;
            case kTagDropoutPpm: cfg.dropout_rate = static_cast<double>(v) / 1e6; break;
            case kTagBlocks: n_blocks = v; break;
            default:
                if (tag >= kTagKernel0 && tag < kTagKernel0 + 8) {
                    kernels.emplace_back(tag - kTagKernel0, v);
                    break;
                }
                throw ParamFileError(Code::bad_config, "unknown config tag " + std::to_string(tag));
        }
    }
    std::sort(kernels.begin(), kernels.end());
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        if (kernels[i].first != i) throw ParamFileError(Code::bad_config, "kernel size list has a gap");
        cfg.kernel_sizes.push_back(kernels[i].second);
    }
    if (cfg.kernel_sizes.size() != n_blocks)
        throw ParamFileError(Code::bad_config, "block count does not match the kernel list");
    try {
        cfg.validate();
    } catch (const InvalidArgument& e) {
        throw ParamFileError(Code::bad_config, e.what());
    }

    auto params = HrnParams<Real>::zeros(cfg);
    std::vector<Tensor<Real>*> tensors;
    params.for_each([&](const std::string&, Tensor<Real>& t, bool) { tensors.push_back(&t); });
    const auto count = r.u32();
    if (count != tensors.size())
        throw ParamFileError(Code::shape_mismatch, "file holds " + std::to_string(count) + " tensors, config implies " +
                                                       std::to_string(tensors.size()));
    for (auto* t : tensors) {
        const auto len = r.u32();
        if (len != t->size())
            throw ParamFileError(Code::shape_mismatch,
                                 "tensor length " + std::to_string(len) + " != expected " + std::to_string(t->size()));
        for (auto& v : t->values()) v = static_cast<Real>(std::bit_cast<float>(r.u32()));
    }
    if (!r.done()) throw ParamFileError(Code::shape_mismatch, "trailing bytes after the last tensor");
    return {std::move(params), cfg};
}

template <typename Real>
void save_params(const HrnParams<Real>& params, const HrnConfig& cfg, const std::filesystem::path& path) {
    write_text_file(path, params_to_bytes(params, cfg));
}

template <typename Real>
std::pair<HrnParams<Real>, HrnConfig> load_params(const std::filesystem::path& path) {
    return params_from_bytes<Real>(read_text_file(path));
}

// ---------------------------------------------------------------------------

#define QISLAB_INSTANTIATE_HRN(Real)                                                                                  \
    template struct HrnParams<Real>;                                                                                  \
    template class HrnPass<Real>;                                                                                     \
    template HrnParams<Real> init_params<Real>(const HrnConfig&, std::uint64_t);                                       \
    template HrnOutput<Real> forward<Real>(const HrnParams<Real>&, const HrnConfig&, const QisMatrix&, Mode,           \
                                           std::uint64_t);                                                            \
    template Label predict<Real>(const HrnParams<Real>&, const HrnConfig&, const QisMatrix&);                         \
    template std::string params_to_bytes<Real>(const HrnParams<Real>&, const HrnConfig&);                             \
    template std::pair<HrnParams<Real>, HrnConfig> params_from_bytes<Real>(std::string_view);                         \
    template void save_params<Real>(const HrnParams<Real>&, const HrnConfig&, const std::filesystem::path&);          \
    template std::pair<HrnParams<Real>, HrnConfig> load_params<Real>(const std::filesystem::path&);

QISLAB_INSTANTIATE_HRN(float)
QISLAB_INSTANTIATE_HRN(double)

template HrnParams<double> HrnParams<float>::cast<double>() const;
template HrnParams<float> HrnParams<double>::cast<float>() const;
template HrnParams<float> HrnParams<float>::cast<float>() const;
template HrnParams<double> HrnParams<double>::cast<double>() const;

}  // namespace qislab
