#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "qislab/nn/gradcheck.hpp"
#include "qislab/nn/layers.hpp"
#include "qislab/nn/optim.hpp"
#include "qislab/nn/tensor.hpp"

using namespace qislab;
using namespace qislab::nn;
using oracle::Vec;

namespace {

Vec random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    Vec v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

ConstMatRef<double> cref(const Vec& v, std::size_t r, std::size_t c) { return {v.data(), r, c}; }
MatRef<double> mref(Vec& v, std::size_t r, std::size_t c) { return {v.data(), r, c}; }

}  // namespace

TEST_SUITE("nn") {
    TEST_CASE("tensor: shape, views and validation") {
        Tensor<double> t({2, 3}, 1.5);
        CHECK(t.size() == 6);
        CHECK(t.view().rows == 2);
        CHECK(t.view().cols == 3);
        CHECK(t.all_finite());
        t[4] = NAN;
        CHECK_FALSE(t.all_finite());
        Tensor<float> v({4});
        CHECK(v.view().rows == 1);
        CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>(3)), InvalidArgument);
    }

    TEST_CASE("embedding: lookup rows and scatter-add gradient") {
        const Vec table{0, 1, 10, 11, 20, 21};
        const std::vector<std::int32_t> idx{2, 0, 2};
        Vec out(6);
        embed_lookup<double>(idx, cref(table, 3, 2), mref(out, 3, 2));
        CHECK(out == Vec{20, 21, 0, 1, 20, 21});

        Vec dtable(6, 0.0);
        embed_lookup_backward<double>(idx, cref(Vec{1, 2, 3, 4, 5, 6}, 3, 2), mref(dtable, 3, 2));
        CHECK(dtable == Vec{3, 4, 0, 0, 6, 8});

        // Strided output: a column block inside a wider matrix.
        Vec wide(3 * 5, -1.0);
        embed_lookup<double>(idx, cref(table, 3, 2), MatRef<double>(wide.data() + 1, 3, 2, 5));
        CHECK(wide[1] == 20);
        CHECK(wide[2] == 21);
        CHECK(wide[0] == -1);
        CHECK(wide[3] == -1);
    }

    TEST_CASE("conv1d: hand example") {
        const Vec x{1, 2, 3, 4};
        const Vec kernel{1, 1, 1}, bias{0};
        Vec out(2);
        conv1d_forward<double>(cref(x, 4, 1), {kernel.data(), bias.data(), 1, 3, 1}, mref(out, 2, 1));
        CHECK(out == Vec{6, 9});
        CHECK(conv_output_length(4, 3) == 2);
        CHECK(conv_output_length(2, 3) == 0);
    }

    TEST_CASE("conv1d: forward and backward against the naive oracle") {
        Rng rng(21);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t C = 1 + rng.index(4), F = 1 + rng.index(4), k = 1 + rng.index(4);
            const std::size_t T = k + rng.index(6), L = T - k + 1;
            Vec x = random_vec(rng, T * C), kernel = random_vec(rng, F * k * C), bias = random_vec(rng, F);
            Vec out(L * F);
            conv1d_forward<double>(cref(x, T, C), {kernel.data(), bias.data(), F, k, C}, mref(out, L, F));
            const Vec want = oracle::conv1d(x, T, C, kernel, bias, F, k);
            for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == doctest::Approx(want[i]).epsilon(1e-12));

            // Loss = <u, conv(x)>; backward with dout = u.
            const Vec u = random_vec(rng, L * F);
            Vec dx(T * C, 0.0), dk(kernel.size(), 0.0), db(F, 0.0);
            conv1d_backward<double>(cref(x, T, C), {kernel.data(), bias.data(), F, k, C}, cref(u, L, F),
                                    mref(dx, T, C), {dk.data(), db.data()});
            auto loss = [&] { return dot(u, oracle::conv1d(x, T, C, kernel, bias, F, k)); };
            for (std::size_t i = 0; i < x.size(); ++i)
                REQUIRE(dx[i] == doctest::Approx(oracle::central_diff(x, i, loss)).epsilon(1e-6));
            for (std::size_t i = 0; i < kernel.size(); ++i)
                REQUIRE(dk[i] == doctest::Approx(oracle::central_diff(kernel, i, loss)).epsilon(1e-6));
            for (std::size_t i = 0; i < F; ++i)
                REQUIRE(db[i] == doctest::Approx(oracle::central_diff(bias, i, loss)).epsilon(1e-6));
        }
    }

    TEST_CASE("backward kernels accumulate") {
        const Vec x{1, 2, 3, 4}, kernel{1, -1}, bias{0.5}, dout{1, 1, 1};
        Vec dx(4, 0.0), dk(2, 0.0), db(1, 0.0);
        for (int rep = 0; rep < 2; ++rep)
            conv1d_backward<double>(cref(x, 4, 1), {kernel.data(), bias.data(), 1, 2, 1}, cref(dout, 3, 1),
                                    mref(dx, 4, 1), {dk.data(), db.data()});
        CHECK(db[0] == 6.0);
        CHECK(dk == Vec{12, 18});
        CHECK(dx == Vec{2, 0, 0, -2});
    }

    TEST_CASE("relu: forward, and zero subgradient at the kink") {
        const Vec x{-1, 0, 2};
        Vec y(3), dx(3, 0.0);
        relu_forward<double>(x, y);
        CHECK(y == Vec{0, 0, 2});
        relu_backward<double>(y, Vec{5, 5, 5}, dx);
        CHECK(dx == Vec{0, 0, 5});
    }

    TEST_CASE("batch norm: train and infer against the oracle") {
        Rng rng(22);
        const std::size_t N = 7, D = 3;
        const Vec x = random_vec(rng, N * D, -2, 3), gamma = random_vec(rng, D, 0.5, 2), beta = random_vec(rng, D);
        Vec rmean{0.1, -0.2, 0.3}, rvar{1.5, 0.7, 2.0};
        Vec y(N * D);
        BatchNormCache<double> cache;
        batch_norm_forward<double>(cref(x, N, D), gamma, beta, rmean, rvar, Mode::train, mref(y, N, D), cache);
        Vec bm, bv;
        const Vec want = oracle::batch_norm_train(x, N, D, gamma, beta, &bm, &bv);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(want[i]).epsilon(1e-12));

        // Normalized output has zero mean and (almost) unit variance per channel.
        for (std::size_t d = 0; d < D; ++d) {
            double m = 0.0, v = 0.0;
            for (std::size_t i = 0; i < N; ++i) m += cache.xhat[i * D + d];
            m /= N;
            for (std::size_t i = 0; i < N; ++i) v += (cache.xhat[i * D + d] - m) * (cache.xhat[i * D + d] - m);
            CHECK(std::abs(m) < 1e-12);
            CHECK(v / N == doctest::Approx(bv[d] / (bv[d] + 1e-5)).epsilon(1e-10));
        }

        batch_norm_update_running<double>(cache, rmean, rvar);
        CHECK(rmean[0] == doctest::Approx(0.9 * 0.1 + 0.1 * bm[0]));
        CHECK(rvar[2] == doctest::Approx(0.9 * 2.0 + 0.1 * bv[2]));

        batch_norm_forward<double>(cref(x, N, D), gamma, beta, rmean, rvar, Mode::infer, mref(y, N, D), cache);
        const Vec want_inf = oracle::batch_norm_infer(x, N, D, gamma, beta, rmean, rvar);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(want_inf[i]).epsilon(1e-12));
    }

    TEST_CASE("batch norm: train-mode backward against finite differences of the oracle") {
        Rng rng(23);
        const std::size_t N = 5, D = 2;
        Vec x = random_vec(rng, N * D), gamma = random_vec(rng, D, 0.5, 2), beta = random_vec(rng, D);
        const Vec u = random_vec(rng, N * D), zeros(D, 0.0), ones(D, 1.0);
        Vec y(N * D), dx(N * D, 0.0), dg(D, 0.0), db(D, 0.0);
        BatchNormCache<double> cache;
        batch_norm_forward<double>(cref(x, N, D), gamma, beta, zeros, ones, Mode::train, mref(y, N, D), cache);
        batch_norm_backward<double>(cache, gamma, cref(u, N, D), mref(dx, N, D), dg, db);
        auto loss = [&] { return dot(u, oracle::batch_norm_train(x, N, D, gamma, beta)); };
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(dx[i] == doctest::Approx(oracle::central_diff(x, i, loss)).epsilon(1e-5));
        for (std::size_t d = 0; d < D; ++d) {
            CHECK(dg[d] == doctest::Approx(oracle::central_diff(gamma, d, loss)).epsilon(1e-6));
            CHECK(db[d] == doctest::Approx(oracle::central_diff(beta, d, loss)).epsilon(1e-6));
        }
    }

    TEST_CASE("attention pooling: forward and backward against the oracle") {
        Rng rng(24);
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t n = 1 + rng.index(6), D = 1 + rng.index(4);
            Vec h = random_vec(rng, n * D), w = random_vec(rng, D);
            Vec bv{rng.uniform(-1, 1)};
            Vec r(D), alpha(n), th(n * D);
            attention_pool_forward<double>(cref(h, n, D), w, bv[0], r, alpha, mref(th, n, D));
            const auto want = oracle::attention_pool(h, n, D, w, bv[0]);
            double asum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(alpha[i] == doctest::Approx(want.alpha[i]).epsilon(1e-12));
                asum += alpha[i];
            }
            CHECK(asum == doctest::Approx(1.0));
            for (std::size_t d = 0; d < D; ++d) CHECK(r[d] == doctest::Approx(want.r[d]).epsilon(1e-12));

            const Vec u = random_vec(rng, D);
            Vec dh(n * D, 0.0), dw(D, 0.0);
            double db = 0.0;
            attention_pool_backward<double>(cref(h, n, D), w, alpha, cref(th, n, D), u, mref(dh, n, D), dw, db);
            auto loss = [&] { return dot(u, oracle::attention_pool(h, n, D, w, bv[0]).r); };
            for (std::size_t i = 0; i < h.size(); ++i)
                CHECK(dh[i] == doctest::Approx(oracle::central_diff(h, i, loss)).epsilon(1e-6).scale(1e-6));
            for (std::size_t d = 0; d < D; ++d)
                CHECK(dw[d] == doctest::Approx(oracle::central_diff(w, d, loss)).epsilon(1e-6).scale(1e-6));
            // A shared score offset cancels in the softmax.
            CHECK(std::abs(db) < 1e-12);
        }
    }

    TEST_CASE("max pooling: first maximum wins and receives the gradient") {
        const Vec h{1, 5, 3, 5, 3, -1};  // 3×2
        Vec r(2), dh(6, 0.0);
        std::vector<std::uint32_t> arg(2);
        max_pool_forward<double>(cref(h, 3, 2), r, arg);
        CHECK(r == Vec{3, 5});
        CHECK(arg == std::vector<std::uint32_t>{1, 0});
        max_pool_backward<double>(arg, Vec{2, 7}, mref(dh, 3, 2));
        CHECK(dh == Vec{0, 7, 2, 0, 0, 0});
    }

    TEST_CASE("dense: forward and backward against the oracle") {
        Rng rng(25);
        for (auto act : {Activation::none, Activation::relu}) {
            const std::size_t in = 5, out = 4;
            Vec x = random_vec(rng, in), W = random_vec(rng, out * in), b = random_vec(rng, out);
            Vec y(out);
            dense_forward<double>(x, cref(W, out, in), b, act, y);
            const Vec want = oracle::dense(x, W, b, act == Activation::relu);
            for (std::size_t o = 0; o < out; ++o) CHECK(y[o] == doctest::Approx(want[o]).epsilon(1e-12));

            const Vec u = random_vec(rng, out);
            Vec dx(in, 0.0), dW(W.size(), 0.0), db(out, 0.0);
            dense_backward<double>(x, cref(W, out, in), y, act, u, dx, mref(dW, out, in), db);
            auto loss = [&] { return dot(u, oracle::dense(x, W, b, act == Activation::relu)); };
            for (std::size_t i = 0; i < in; ++i)
                CHECK(dx[i] == doctest::Approx(oracle::central_diff(x, i, loss)).epsilon(1e-6));
            for (std::size_t i = 0; i < W.size(); ++i)
                CHECK(dW[i] == doctest::Approx(oracle::central_diff(W, i, loss)).epsilon(1e-6).scale(1e-6));
        }
    }

    TEST_CASE("dropout: keep fraction, inverted scaling, determinism and infer mode") {
        const auto mask = dropout_mask<double>(100000, 0.6, Mode::train, 5);
        std::size_t kept = 0;
        for (double m : mask) {
            REQUIRE((m == 0.0 || m == doctest::Approx(2.5)));
            kept += m != 0.0;
        }
        CHECK(kept / 100000.0 == doctest::Approx(0.4).epsilon(0.025));
        CHECK(mask == dropout_mask<double>(100000, 0.6, Mode::train, 5));
        CHECK(mask != dropout_mask<double>(100000, 0.6, Mode::train, 6));
        for (double m : dropout_mask<double>(10, 0.6, Mode::infer, 5)) CHECK(m == 1.0);
        for (double m : dropout_mask<double>(10, 0.0, Mode::train, 5)) CHECK(m == 1.0);
        CHECK_THROWS_AS(dropout_mask<double>(10, 1.0, Mode::train, 5), InvalidArgument);
    }

    TEST_CASE("softmax cross-entropy: values, gradient and stability") {
        const Vec zero{0.0, 0.0};
        auto r = softmax_cross_entropy<double>(zero, 1);
        CHECK(r.loss == doctest::Approx(std::log(2.0)));
        CHECK(r.probs[0] == doctest::Approx(0.5));
        CHECK(r.grad_logits == Vec{0.5, -0.5});

        const Vec big{1000.0, -1000.0};
        r = softmax_cross_entropy<double>(big, 0);
        CHECK(std::isfinite(r.loss));
        CHECK(r.loss == doctest::Approx(0.0));
        r = softmax_cross_entropy<double>(big, 1);
        CHECK(r.loss == doctest::Approx(2000.0));

        const std::vector<float> fbig{100.0f, 0.0f};
        const auto rf = softmax_cross_entropy<float>(fbig, 1);
        CHECK(std::isfinite(rf.loss));

        Vec logits{0.3, -1.2, 2.0};
        const auto g = softmax_cross_entropy<double>(logits, 2).grad_logits;
        auto loss = [&] { return softmax_cross_entropy<double>(logits, 2).loss; };
        for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(oracle::central_diff(logits, i, loss)));
        CHECK_THROWS_AS(softmax_cross_entropy<double>(logits, 3), InvalidArgument);
    }

    TEST_CASE("adam: first step moves each weight by about lr against its gradient") {
        Vec p{1.0, -2.0, 0.5};
        const Vec g{0.3, -5.0, 1e-3};
        AdamState st;
        AdamConfig cfg;
        adam_step<double>({std::span<double>(p)}, {std::span<const double>(g)}, st, cfg);
        CHECK(st.t == 1);
        CHECK(p[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
        CHECK(p[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
        CHECK(p[2] == doctest::Approx(0.5 - 1e-3).epsilon(1e-4));

        // Second step against the bias-corrected reference recursion.
        const Vec g2{-0.1, 1.0, 2.0};
        const Vec before = p;
        adam_step<double>({std::span<double>(p)}, {std::span<const double>(g2)}, st, cfg);
        for (std::size_t i = 0; i < 3; ++i) {
            const double m = 0.9 * (0.1 * g[i]) + 0.1 * g2[i];
            const double v = 0.999 * (0.001 * g[i] * g[i]) + 0.001 * g2[i] * g2[i];
            const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
            CHECK(p[i] == doctest::Approx(before[i] - 1e-3 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-12));
        }

        Vec q{1.0};
        CHECK_THROWS_AS(adam_step<double>({std::span<double>(q)}, {std::span<const double>(g)}, st, cfg),
                        InvalidArgument);
    }

    TEST_CASE("grad_check: accepts a correct gradient and rejects a wrong one") {
        Vec x{0.3, -1.1, 2.0};
        Vec good{0.6, -2.2, 4.0};
        Vec bad{0.6, -2.2, 4.1};
        auto loss = [&] { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; };
        const GradCheckTarget ok{"x", x, good};
        auto rep = grad_check(std::span(&ok, 1), loss, 1e-4);
        CHECK(rep.pass());
        CHECK(rep.entries[0].checked == 3);
        CHECK(x == Vec{0.3, -1.1, 2.0});

        const GradCheckTarget wrong{"x", x, bad};
        rep = grad_check(std::span(&wrong, 1), loss, 1e-4);
        CHECK_FALSE(rep.pass());
        CHECK(rep.entries[0].worst_index == 2);
        CHECK(rep.max_rel_err() == doctest::Approx(0.1 / 4.1).epsilon(1e-4));

        CHECK(relative_error(0.0, 0.0) == 0.0);
        CHECK(relative_error(0.0, 1e-10) == doctest::Approx(1e-5));
        CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
    }
}
