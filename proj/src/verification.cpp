#include "qislab/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

#include "qislab/nn/layers.hpp"

namespace qislab {

using nn::ConstMatRef;
using nn::GradCheckTarget;
using nn::MatRef;
using Vec = std::vector<double>;

namespace {

Vec random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    Vec v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

/// Uniform in ±[lo, hi]: keeps values off a kink at zero.
Vec away_from_zero(Rng& rng, std::size_t n, double lo, double hi) {
    Vec v(n);
    for (auto& x : v) x = (rng.bit() ? 1.0 : -1.0) * rng.uniform(lo, hi);
    return v;
}

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

class Recorder {
public:
    Recorder(std::string name, double tol) { lc_.layer = std::move(name), tol_ = tol; }
    void add(std::vector<GradCheckTarget> targets, const std::function<double()>& loss) {
        const auto rep = nn::grad_check(targets, loss, tol_);
        ++lc_.configs;
        for (const auto& e : rep.entries) lc_.checked += e.checked;
        lc_.max_rel_err = std::max(lc_.max_rel_err, rep.max_rel_err());
        lc_.pass = lc_.pass && rep.pass();
    }
    void redrawn() { ++lc_.redrawn; }
    LayerCheck done() const { return lc_; }

private:
    LayerCheck lc_;
    double tol_;
};

// Each check draws a random shape, computes analytic gradients of a random
// linear functional of the output (or of the loss itself), then lets
// grad_check probe every input.

void check_embedding(Recorder& rec, Rng& rng) {
    const std::size_t V = between(rng, 2, 6), E = between(rng, 1, 4), T = between(rng, 1, 8);
    std::vector<std::int32_t> idx(T);
    for (auto& i : idx) i = static_cast<std::int32_t>(rng.index(V));
    Vec table = random_vec(rng, V * E), c = random_vec(rng, T * E), out(T * E), dtable(V * E, 0.0);
    nn::embed_lookup_backward<double>(idx, ConstMatRef<double>(c.data(), T, E), MatRef<double>(dtable.data(), V, E));
    rec.add({{"table", table, dtable}}, [&] {
        nn::embed_lookup<double>(idx, ConstMatRef<double>(table.data(), V, E), MatRef<double>(out.data(), T, E));
        return dot(out, c);
    });
}

void check_conv(Recorder& rec, Rng& rng) {
    const std::size_t T = between(rng, 1, 9), C = between(rng, 1, 4), F = between(rng, 1, 4);
    const std::size_t k = between(rng, 1, std::min<std::size_t>(T, 5));
    const std::size_t L = T - k + 1;
    Vec x = random_vec(rng, T * C), kern = random_vec(rng, F * k * C), bias = random_vec(rng, F);
    Vec c = random_vec(rng, L * F), out(L * F);
    Vec dx(T * C, 0.0), dk(F * k * C, 0.0), db(F, 0.0);
    auto run = [&] {
        nn::conv1d_forward<double>(ConstMatRef<double>(x.data(), T, C), {kern.data(), bias.data(), F, k, C},
                                   MatRef<double>(out.data(), L, F));
        return dot(out, c);
    };
    nn::conv1d_backward<double>(ConstMatRef<double>(x.data(), T, C), {kern.data(), bias.data(), F, k, C},
                                ConstMatRef<double>(c.data(), L, F), MatRef<double>(dx.data(), T, C),
                                {dk.data(), db.data()});
    rec.add({{"x", x, dx}, {"kernel", kern, dk}, {"bias", bias, db}}, run);
}

void check_relu(Recorder& rec, Rng& rng) {
    const std::size_t n = between(rng, 1, 24);
    Vec x = away_from_zero(rng, n, 1e-2, 1.0), c = random_vec(rng, n), y(n), dx(n, 0.0);
    nn::relu_forward<double>(x, y);
    nn::relu_backward<double>(y, c, dx);
    rec.add({{"x", x, dx}}, [&] {
        nn::relu_forward<double>(x, y);
        return dot(y, c);
    });
}

void check_batch_norm(Recorder& rec, Rng& rng, nn::Mode mode) {
    const std::size_t N = between(rng, 2, 8), D = between(rng, 1, 4);
    Vec x = random_vec(rng, N * D, -2.0, 2.0), gamma = random_vec(rng, D, 0.5, 1.5), beta = random_vec(rng, D);
    Vec rm = random_vec(rng, D), rv = random_vec(rng, D, 0.5, 2.0), c = random_vec(rng, N * D), y(N * D);
    Vec dx(N * D, 0.0), dg(D, 0.0), db(D, 0.0);
    nn::BatchNormCache<double> cache;
    auto run = [&] {
        nn::batch_norm_forward<double>(ConstMatRef<double>(x.data(), N, D), gamma, beta, rm, rv, mode,
                                       MatRef<double>(y.data(), N, D), cache);
        return dot(y, c);
    };
    run();
    nn::batch_norm_backward<double>(cache, gamma, ConstMatRef<double>(c.data(), N, D), MatRef<double>(dx.data(), N, D),
                                    dg, db);
    rec.add({{"x", x, dx}, {"gamma", gamma, dg}, {"beta", beta, db}}, run);
}

void check_attention(Recorder& rec, Rng& rng) {
    const std::size_t n = between(rng, 1, 8), D = between(rng, 1, 5);
    Vec h = random_vec(rng, n * D, -2.0, 2.0), w = random_vec(rng, D), b = random_vec(rng, 1);
    Vec c = random_vec(rng, D), r(D), alpha(n), th(n * D);
    Vec dh(n * D, 0.0), dw(D, 0.0), db(1, 0.0);
    auto run = [&] {
        nn::attention_pool_forward<double>(ConstMatRef<double>(h.data(), n, D), w, b[0], r, alpha,
                                           MatRef<double>(th.data(), n, D));
        return dot(r, c);
    };
    run();
    nn::attention_pool_backward<double>(ConstMatRef<double>(h.data(), n, D), w, alpha,
                                        ConstMatRef<double>(th.data(), n, D), c, MatRef<double>(dh.data(), n, D), dw,
                                        db[0]);
    rec.add({{"h", h, dh}, {"w", w, dw}, {"b", b, db}}, run);
}

void check_max_pool(Recorder& rec, Rng& rng) {
    const std::size_t n = between(rng, 1, 8), D = between(rng, 1, 5);
    // Distinct values 0.01 apart so no probe changes an argmax.
    std::vector<std::size_t> perm(n * D);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    Vec h(n * D), c = random_vec(rng, D), r(D), dh(n * D, 0.0);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = 0.01 * static_cast<double>(perm[i]);
    std::vector<std::uint32_t> arg(D);
    auto run = [&] {
        nn::max_pool_forward<double>(ConstMatRef<double>(h.data(), n, D), r, arg);
        return dot(r, c);
    };
    run();
    nn::max_pool_backward<double>(arg, c, MatRef<double>(dh.data(), n, D));
    rec.add({{"h", h, dh}}, run);
}

void check_dense(Recorder& rec, Rng& rng, nn::Activation act) {
    const std::size_t Din = between(rng, 1, 6), Dout = between(rng, 1, 5);
    Vec x = random_vec(rng, Din), W = random_vec(rng, Dout * Din), b(Dout);
    // Bias chosen so every pre-activation sits at least 0.05 from the kink.
    for (std::size_t o = 0; o < Dout; ++o) {
        double z = 0.0;
        for (std::size_t i = 0; i < Din; ++i) z += W[o * Din + i] * x[i];
        b[o] = (rng.bit() ? 1.0 : -1.0) * rng.uniform(0.05, 1.0) - z;
    }
    Vec c = random_vec(rng, Dout), y(Dout), dx(Din, 0.0), dW(Dout * Din, 0.0), db(Dout, 0.0);
    auto run = [&] {
        nn::dense_forward<double>(x, ConstMatRef<double>(W.data(), Dout, Din), b, act, y);
        return dot(y, c);
    };
    run();
    nn::dense_backward<double>(x, ConstMatRef<double>(W.data(), Dout, Din), y, act, c, dx,
                               MatRef<double>(dW.data(), Dout, Din), db);
    rec.add({{"x", x, dx}, {"W", W, dW}, {"b", b, db}}, run);
}

void check_dropout(Recorder& rec, Rng& rng) {
    const std::size_t n = between(rng, 1, 16);
    const double rate = rng.uniform(0.0, 0.9);
    const auto mask = nn::dropout_mask<double>(n, rate, nn::Mode::train, rng.next_u64());
    Vec x = random_vec(rng, n), c = random_vec(rng, n), dx(n);
    for (std::size_t i = 0; i < n; ++i) dx[i] = c[i] * mask[i];
    rec.add({{"x", x, dx}}, [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i] * mask[i] * c[i];
        return s;
    });
}

void check_xent(Recorder& rec, Rng& rng) {
    const std::size_t C = between(rng, 2, 5);
    const std::size_t label = rng.index(C);
    Vec logits = random_vec(rng, C, -3.0, 3.0);
    const auto g = nn::softmax_cross_entropy<double>(logits, label).grad_logits;
    rec.add({{"logits", logits, g}}, [&] { return nn::softmax_cross_entropy<double>(logits, label).loss; });
}

HrnConfig random_hrn_config(Rng& rng) {
    HrnConfig cfg;
    for (auto& v : cfg.vocab_sizes) v = between(rng, 2, 8);
    cfg.embed_dim = between(rng, 1, 3);
    cfg.block_filters = between(rng, 2, 4);
    cfg.fc_dim = between(rng, 2, 5);
    cfg.kernel_sizes.resize(between(rng, 2, 4));
    for (auto& k : cfg.kernel_sizes) k = between(rng, 1, 3);
    cfg.pooling = rng.bit() ? Pooling::attention : Pooling::maxpool;
    cfg.enabled_paths = (1u << (cfg.n_blocks() - 1)) | static_cast<std::uint32_t>(rng.index(1u << (cfg.n_blocks() - 1)));
    cfg.dropout_rate = rng.bit() ? 0.0 : 0.5;
    return cfg;
}

struct HrnProblem {
    HrnConfig cfg;
    std::vector<QisMatrix> inputs;
    std::vector<Label> labels;
    HrnParams<double> params;
    std::uint64_t dropout_seed = 0;
};

HrnProblem random_hrn_problem(Rng& rng) {
    HrnProblem p;
    p.cfg = random_hrn_config(rng);
    const std::size_t B = between(rng, 2, 4), T = p.cfg.min_frames() + between(rng, 0, 4);
    p.inputs.resize(B);
    p.labels.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        p.inputs[b].vocab = p.cfg.vocab_sizes;
        p.inputs[b].frames.resize(T);
        for (auto& f : p.inputs[b].frames)
            for (std::size_t j = 0; j < kTracks; ++j) f[j] = static_cast<std::int32_t>(rng.index(p.cfg.vocab_sizes[j]));
        p.labels[b] = rng.bit() ? Label::stego : Label::cover;
    }
    p.params = init_params<double>(p.cfg, rng.next_u64());
    // Zero-initialized biases would put ReLU inputs exactly on the kink
    // whenever a pooled feature is exactly zero.
    for (auto& blk : p.params.blocks) {
        for (auto& b : blk.bias.values()) b = rng.uniform(-0.5, 0.5);
        for (auto& g : blk.gamma.values()) g = rng.uniform(0.5, 1.5);
        for (auto& b : blk.beta.values()) b = rng.uniform(-0.5, 0.5);
    }
    for (auto& h : p.params.heads) h.b[0] = rng.uniform(-0.5, 0.5);
    for (auto& b : p.params.fc1_b.values()) b = rng.uniform(-0.5, 0.5);
    for (auto& b : p.params.fc2_b.values()) b = rng.uniform(-0.5, 0.5);
    p.dropout_seed = rng.next_u64();
    return p;
}

constexpr double kKinkMargin = 1e-3;
constexpr std::size_t kMaxRedraws = 1000;

void check_hrn(Recorder& rec, Rng& rng) {
    HrnProblem p;
    std::vector<const QisMatrix*> ptrs;
    std::unique_ptr<HrnPass<double>> pass;
    for (std::size_t attempt = 0;; ++attempt) {
        require(attempt < kMaxRedraws, "no kink-free composite configuration found");
        p = random_hrn_problem(rng);
        ptrs.clear();
        for (const auto& q : p.inputs) ptrs.push_back(&q);
        pass = std::make_unique<HrnPass<double>>(p.cfg);
        pass->forward(p.params, ptrs, nn::Mode::train, p.dropout_seed);
        if (pass->kink_margin(p.params) >= kKinkMargin) break;
        rec.redrawn();
    }
    auto grads = HrnParams<double>::zeros(p.cfg);
    pass->backward(p.params, p.labels, grads);

    std::vector<GradCheckTarget> targets;
    std::vector<std::string> names;
    p.params.for_each([&](const std::string& name, const nn::Tensor<double>&, bool trainable) {
        if (trainable) names.push_back(name);
    });
    auto values = p.params.trainable_spans();
    auto analytic = std::as_const(grads).trainable_spans();
    for (std::size_t i = 0; i < values.size(); ++i) targets.push_back({names[i], values[i], analytic[i]});
    rec.add(std::move(targets), [&] {
        pass->forward(p.params, ptrs, nn::Mode::train, p.dropout_seed);
        return static_cast<double>(pass->loss(p.labels));
    });
}

}  // namespace

bool GradCheckSuite::pass() const {
    return !layers.empty() && std::all_of(layers.begin(), layers.end(), [](const auto& l) { return l.pass; });
}

GradCheckSuite run_gradcheck_suite(std::size_t configs_per_layer, std::uint64_t seed, double tolerance) {
    GradCheckSuite suite;
    suite.tolerance = tolerance;
    struct Entry {
        const char* name;
        std::function<void(Recorder&, Rng&)> fn;
    };
    const std::vector<Entry> entries{
        {"embedding", check_embedding},
        {"conv1d", check_conv},
        {"relu", check_relu},
        {"batch_norm_train", [](Recorder& r, Rng& g) { check_batch_norm(r, g, nn::Mode::train); }},
        {"batch_norm_infer", [](Recorder& r, Rng& g) { check_batch_norm(r, g, nn::Mode::infer); }},
        {"attention_pool", check_attention},
        {"max_pool", check_max_pool},
        {"dense", [](Recorder& r, Rng& g) { check_dense(r, g, nn::Activation::none); }},
        {"dense_relu", [](Recorder& r, Rng& g) { check_dense(r, g, nn::Activation::relu); }},
        {"dropout", check_dropout},
        {"softmax_xent", check_xent},
        {"hrn", check_hrn},
    };
    for (std::size_t e = 0; e < entries.size(); ++e) {
        Recorder rec(entries[e].name, tolerance);
        for (std::size_t c = 0; c < configs_per_layer; ++c) {
            Rng rng(derive_seed(seed, e, c));
            entries[e].fn(rec, rng);
        }
        suite.layers.push_back(rec.done());
    }
    return suite;
}

ReportTable gradcheck_table(const GradCheckSuite& suite) {
    ReportTable t;
    t.header = {"layer", "configs", "redrawn", "checked", "max_rel_err", "result"};
    for (const auto& l : suite.layers) {
        char err[32];
        std::snprintf(err, sizeof err, "%.3e", l.max_rel_err);
        t.rows.push_back({l.layer, std::to_string(l.configs), std::to_string(l.redrawn), std::to_string(l.checked), err, l.pass ? "pass" : "FAIL"});
    }
    return t;
}

}  // namespace qislab
