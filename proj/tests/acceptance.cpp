// Acceptance run: one PASS/FAIL line per criterion 1-11. Pass criterion
// numbers as arguments to run a subset. Exit status is nonzero if any
// selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "qislab/cli.hpp"
#include "qislab/experiment.hpp"
#include "qislab/stream.hpp"
#include "qislab/verification.hpp"

using namespace qislab;
namespace fs = std::filesystem;
using oracle::Vec;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// 1 ----------------------------------------------------------------------------

Outcome partitions() {
    const auto t0 = Clock::now();
    std::size_t checked = 0, failed = 0;
    for (std::size_t K : {2, 32, 128}) {
        const auto cb = build_synthetic_codebook(0, K == 128 ? 10 : 5, K, K);
        for (std::uint64_t s = 0; s < 1000; ++s)
            for (auto mode : {PartitionMode::balanced_random, PartitionMode::neighbor_aware}) {
                const auto rep = verify_partition(cnv_partition(cb, mode, s), cb, true);
                ++checked;
                failed += !(rep.pass && rep.disjoint && rep.covering && rep.counts[0] == rep.counts[1]);
            }
    }
    const double secs = seconds_since(t0);
    return {failed == 0 && secs < 1.0,
            std::to_string(checked) + " partitions (K in {2,32,128}, both modes), " + std::to_string(failed) +
                " failures, " + fmt("%.3f s", secs)};
}

// 2 ----------------------------------------------------------------------------

Outcome qim_round_trip() {
    const auto m = build_split_vq(SplitVqConfig{});
    Rng rng(2);
    std::size_t ok = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = rng.index(kTracks);
        Vec x(m.codebooks[j].dim());
        for (auto& v : x) v = rng.uniform(-0.25, 1.25);
        const int bit = rng.bit();
        ok += qim_extract_bit(qim_embed_index(x, m.codebooks[j], m.partitions[j], bit), m.partitions[j]) == bit;
    }
    return {ok == n, std::to_string(ok) + "/" + std::to_string(n) + " bits recovered"};
}

// 3 ----------------------------------------------------------------------------

Outcome quantizer_oracle() {
    const auto m = build_split_vq(SplitVqConfig{});
    Rng rng(3);
    std::size_t full_ok = 0, sub_ok = 0;
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = rng.index(kTracks);
        const auto& cb = m.codebooks[j];
        Vec x(cb.dim());
        for (auto& v : x) v = rng.uniform(-0.25, 1.25);
        const int bit = rng.bit();
        full_ok += quantize_full(x, cb) == oracle::argmin_scan(x, cb.data(), cb.dim());
        sub_ok += quantize_sub(x, cb, m.partitions[j], bit) ==
                  oracle::argmin_scan(x, cb.data(), cb.dim(), &m.partitions[j].membership, bit);
    }
    return {full_ok == n && sub_ok == n, "full " + std::to_string(full_ok) + "/" + std::to_string(n) + ", sub " +
                                             std::to_string(sub_ok) + "/" + std::to_string(n) + " exact"};
}

// 4 ----------------------------------------------------------------------------

Outcome gradients() {
    const auto suite = run_gradcheck_suite(20, 1, kGradCheckTolerance);
    double worst = 0.0;
    std::size_t min_configs = SIZE_MAX;
    std::string failing;
    for (const auto& l : suite.layers) {
        worst = std::max(worst, l.max_rel_err);
        min_configs = std::min(min_configs, l.configs);
        if (!l.pass) failing += " " + l.layer;
    }
    std::string d = std::to_string(suite.layers.size()) + " checks x " + std::to_string(min_configs) +
                    " configs, max rel err " + fmt("%.2e", worst);
    if (!failing.empty()) d += ", failing:" + failing;
    return {suite.pass() && min_configs >= 20, d};
}

// 5 ----------------------------------------------------------------------------

Outcome forward_oracles() {
    Rng rng(5);
    double worst = 0.0;
    auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
    auto rv = [&](std::size_t n, double lo, double hi) {
        Vec v(n);
        for (auto& x : v) x = rng.uniform(lo, hi);
        return v;
    };
    using nn::ConstMatRef;
    using nn::MatRef;
    for (int trial = 0; trial < 200; ++trial) {
        {
            const std::size_t C = 1 + rng.index(16), F = 1 + rng.index(16), k = 1 + rng.index(7);
            const std::size_t T = k + rng.index(40), L = T - k + 1;
            const Vec x = rv(T * C, -2, 2), w = rv(F * k * C, -1, 1), b = rv(F, -1, 1);
            Vec out(L * F);
            nn::conv1d_forward<double>(ConstMatRef<double>(x.data(), T, C), {w.data(), b.data(), F, k, C},
                                       MatRef<double>(out.data(), L, F));
            const Vec want = oracle::conv1d(x, T, C, w, b, F, k);
            for (std::size_t i = 0; i < out.size(); ++i) track(out[i], want[i]);
        }
        {
            const std::size_t n = 1 + rng.index(50), D = 1 + rng.index(16);
            const Vec h = rv(n * D, -3, 3), w = rv(D, -2, 2);
            const double b = rng.uniform(-1, 1);
            Vec r(D), alpha(n), th(n * D);
            nn::attention_pool_forward<double>(ConstMatRef<double>(h.data(), n, D), w, b, r, alpha,
                                               MatRef<double>(th.data(), n, D));
            const auto want = oracle::attention_pool(h, n, D, w, b);
            for (std::size_t d = 0; d < D; ++d) track(r[d], want.r[d]);
            for (std::size_t i = 0; i < n; ++i) track(alpha[i], want.alpha[i]);
        }
        {
            const std::size_t N = 2 + rng.index(60), D = 1 + rng.index(16);
            const Vec x = rv(N * D, -5, 5), g = rv(D, 0.1, 3), be = rv(D, -1, 1), rm = rv(D, -1, 1),
                      rvar = rv(D, 0.1, 4);
            Vec y(N * D);
            nn::BatchNormCache<double> cache;
            for (auto mode : {nn::Mode::train, nn::Mode::infer}) {
                nn::batch_norm_forward<double>(ConstMatRef<double>(x.data(), N, D), g, be, rm, rvar, mode,
                                               MatRef<double>(y.data(), N, D), cache);
                const Vec want = mode == nn::Mode::train ? oracle::batch_norm_train(x, N, D, g, be)
                                                         : oracle::batch_norm_infer(x, N, D, g, be, rm, rvar);
                for (std::size_t i = 0; i < y.size(); ++i) track(y[i], want[i]);
            }
        }
    }
    return {worst <= 1e-9, "200 random shapes per op, max abs deviation " + fmt("%.2e", worst)};
}

// 6 ----------------------------------------------------------------------------

DatasetSpec spec(std::size_t n, std::size_t n_val, std::size_t n_test, std::size_t frames, double rate,
                 std::uint64_t seed) {
    DatasetSpec d;
    d.n_per_class = n;
    d.n_val = n_val;
    d.n_test = n_test;
    d.frames = frames;
    d.rate = rate;
    d.seed = seed;
    return d;
}

Outcome learnability() {
    const auto t0 = Clock::now();
    // 8k train / 1k val / 2k test per class.
    const auto ds = spec(11000, 1000, 2000, 100, 1.0, 1);
    const auto data = make_dataset(build_split_vq(ds.vq), ds);
    const HrnConfig cfg;  // F = 32
    TrainConfig tc;       // <= 20 epochs
    tc.threads = worker_threads();
    const auto res = train(cfg, tc, data.train, data.val, [&](const EpochStats& e) {
        std::cerr << "  [6] epoch " << e.epoch << " loss " << fmt("%.4f", e.train_loss) << " val "
                  << format_percent(e.val_accuracy) << " (" << fmt("%.0f s", seconds_since(t0)) << ")\n";
    });
    const double acc = evaluate(res.params, cfg, data.test, tc.threads).accuracy();
    const double secs = seconds_since(t0);
    return {acc >= 0.95 && res.history.size() <= 20 && secs <= 600.0,
            "test accuracy " + format_percent(acc) + "% on " + std::to_string(data.test.size()) + " samples, best epoch " +
                std::to_string(res.best_epoch) + "/" + std::to_string(res.history.size()) + ", " +
                fmt("%.0f s", secs) + " total"};
}

// 7 ----------------------------------------------------------------------------

GridConfig trend_grid(double rate) {
    GridConfig gc;
    gc.data = spec(2500, 250, 500, 100, rate, 1);
    gc.train.max_epochs = 8;
    gc.train.early_stop_patience = 3;
    gc.seeds = {1, 2, 3};
    gc.threads = worker_threads();
    return gc;
}

bool non_decreasing(const std::vector<double>& v, double tol) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] < v[i - 1] - tol) return false;
    return true;
}

std::string medians(const ExperimentGrid& g) {
    std::string s;
    for (const auto& c : g.cells) s += (s.empty() ? "" : "/") + format_percent(c.median);
    return s;
}

Outcome trends() {
    const double rates[] = {0.1, 0.5, 1.0};
    const auto rg = run_rate_grid(trend_grid(1.0), rates, 100);
    const std::size_t durs[] = {10, 50, 100};
    const auto lg = run_length_grid(trend_grid(0.3), durs, 0.3);
    std::vector<double> by_rate, by_len;
    for (const auto& c : rg.cells) by_rate.push_back(c.median);
    for (const auto& c : lg.cells) by_len.push_back(c.median);
    const bool ok = non_decreasing(by_rate, 0.02) && non_decreasing(by_len, 0.02);
    return {ok, "rate 0.1/0.5/1.0 @100 frames: " + medians(rg) + "; frames 10/50/100 @rate 0.3: " + medians(lg) +
                    " (median of 3 seeds)"};
}

// 8 ----------------------------------------------------------------------------

Outcome ablation() {
    const auto ds = spec(2000, 200, 400, 100, 0.3, 8);
    const auto data = make_dataset(build_split_vq(ds.vq), ds);
    TrainConfig tc;
    tc.max_epochs = 8;
    tc.early_stop_patience = 3;
    const std::uint64_t seeds[] = {1, 2, 3};
    const auto rows = run_ablation(HrnConfig{}, tc, data, seeds, worker_threads());
    std::string d;
    for (const auto& r : rows) d += (d.empty() ? "" : " ") + ("#" + std::to_string(static_cast<int>(r.variant))) + "=" + format_percent(r.median);
    const bool ok = rows.size() == 7 && rows[0].median >= rows[4].median &&
                    std::all_of(rows.begin(), rows.end(), [](const AblationRow& r) { return r.accuracies.size() == 3; });
    return {ok, d + " (median of 3 seeds, rate 0.3)"};
}

// 9 ----------------------------------------------------------------------------

Outcome streaming() {
    const HrnConfig cfg;
    const auto params = init_params<float>(cfg, 9);
    const auto vq = build_split_vq(SplitVqConfig{});
    Rng rng(9);
    std::size_t schedules_ok = 0, windows = 0;
    for (int s = 0; s < 100; ++s) {
        std::vector<StreamSegment> sched(1 + rng.index(4));
        for (auto& seg : sched) {
            seg.frames = rng.index(120);
            seg.rate = rng.bit() ? 0.0 : rng.uniform();
        }
        const WindowSpec spec{cfg.min_frames() + rng.index(60), rng.bit() ? 0 : 1 + rng.index(40)};
        const auto sim = simulate_frame_stream(vq, LatentSourceConfig{}, sched, rng.next_u64());
        VectorFrameSource src(sim.qis.frames, 1 + rng.index(16));
        const auto ds = detect_stream(params, cfg, spec, src);
        bool ok = ds.size() == window_count(sim.qis.length(), spec);
        for (std::size_t i = 0; ok && i < ds.size(); ++i) {
            const std::size_t start = i * spec.stride();
            QisMatrix w;
            w.vocab = cfg.vocab_sizes;
            w.frames.assign(sim.qis.frames.begin() + static_cast<std::ptrdiff_t>(start),
                            sim.qis.frames.begin() + static_cast<std::ptrdiff_t>(start + spec.window_frames));
            const auto out = forward(params, cfg, w);
            ok = ds[i].window_start == start && ds[i].prob_stego == out.probs[1] &&
                 ds[i].label == predict(params, cfg, w);
        }
        schedules_ok += ok;
        windows += ds.size();
    }
    return {schedules_ok == 100, std::to_string(schedules_ok) + "/100 schedules exact, " + std::to_string(windows) +
                                     " windows compared"};
}

// 10 ---------------------------------------------------------------------------

Outcome latency() {
    const HrnConfig cfg;
    const auto params = init_params<float>(cfg, 10);
    const std::vector<std::size_t> durs{10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 200};
    const auto rep = bench_latency(params, cfg, durs, 2000, 10, 50);
    const auto table = latency_time_table(rep);
    bool ok = rep.rows.size() == durs.size() && table.rows.size() == 2 && table.rows[0][0] == "Mean (ms)" &&
              table.rows[1][0] == "Std";
    std::string means;
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
        const auto& r = rep.rows[i];
        ok = ok && r.mean_ms > 0.0 && r.std_ms >= 0.0 && r.n_trials >= kMinLatencyTrials;
        if (i > 0) ok = ok && r.mean_ms >= rep.rows[i - 1].mean_ms;
        means += (means.empty() ? "" : " ") + fmt("%.3f", r.mean_ms);
    }
    return {ok, "mean ms over " + std::to_string(durs.size()) + " durations: " + means};
}

// 11 ---------------------------------------------------------------------------

std::string slurp_dir(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + read_text_file(f);
    return all;
}

Outcome determinism() {
    const auto root = fs::temp_directory_path() / "qislab_acceptance_det";
    fs::remove_all(root);
    std::vector<std::string> digests;
    bool all_ok = true;
    for (int run = 0; run < 2; ++run) {
        const auto d = root / ("run" + std::to_string(run));
        fs::create_directories(d);
        const std::string data = (d / "data").string(), params = (d / "model.bin").string();
        const std::vector<std::string> model{"--embed-dim", "8", "--filters", "16", "--fc-dim", "32", "--epochs", "3"};
        std::vector<std::vector<std::string>> steps{
            {"gen-data", "--n", "200", "--frames", "50", "--rate", "0.5", "--seed", "11", "--out", data},
            {"train", "--data", data, "--out", params, "--seed", "11"},
            {"eval", "--data", data, "--params", params, "--out", (d / "eval.csv").string()},
            {"rate-grid", "--rates", "0.5,1.0", "--frames", "30", "--n", "60", "--repeats", "2", "--seed", "11", "--out",
             (d / "grid.csv").string()},
            {"ablate", "--data", data, "--repeats", "1", "--seed", "11", "--out", (d / "ablation.csv").string()},
            {"stream", "--params", params, "--simulate", "80:0,80:1", "--window", "40", "--seed", "11", "--out",
             (d / "stream.csv").string()}};
        for (auto& s : steps) {
            if (s[0] == "train" || s[0] == "rate-grid" || s[0] == "ablate") s.insert(s.end(), model.begin(), model.end());
            std::ostringstream out, err;
            std::istringstream in;
            if (run_cli(s, out, err, in) != kExitOk) {
                std::cerr << "  [11] " << s[0] << " failed: " << err.str();
                all_ok = false;
            }
        }
        Fnv1a h;
        h.update(slurp_dir(d));
        digests.push_back(h.hex());
    }
    fs::remove_all(root);
    return {all_ok && digests[0] == digests[1],
            "two CLI pipeline runs (gen-data, train, eval, rate-grid, ablate, stream), digests " + digests[0] + " / " +
                digests[1]};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"partition invariants", partitions},     {"QIM round trip", qim_round_trip},
        {"quantizer oracle equivalence", quantizer_oracle},
        {"gradient verification", gradients},     {"forward oracles", forward_oracles},
        {"desk-scale learnability", learnability}, {"trend reproduction", trends},
        {"ablation suite", ablation},             {"streaming equivalence", streaming},
        {"latency report", latency},              {"determinism", determinism}};
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

    std::cout << "machine: " << machine_descriptor() << "\n" << std::flush;
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": " << o.detail << " ["
                  << fmt("%.1f s", seconds_since(t0)) << "]\n"
                  << std::flush;
    }
    return failures == 0 ? 0 : 1;
}
