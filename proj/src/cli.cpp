#include "qislab/cli.hpp"

#include <CLI11.hpp>

#include <istream>
#include <optional>
#include <ostream>

#include "qislab/experiment.hpp"
#include "qislab/stream.hpp"
#include "qislab/verification.hpp"

namespace qislab {

namespace {

// Flags shared by every subcommand that builds or trains a model.
struct ModelFlags {
    bool paper_scale = false;
    std::optional<std::size_t> embed_dim, filters, fc_dim;
    std::vector<std::size_t> kernels;
    std::optional<double> dropout;
    std::string pooling;
    std::optional<std::size_t> batch_size, epochs, patience;
    std::optional<double> lr;

    void add(CLI::App* app) {
        app->add_flag("--paper-scale", paper_scale, "full-scale setup: 256 filters, batch 256, 200 epochs");
        app->add_option("--embed-dim", embed_dim, "embedding width E (default 16)")->check(CLI::PositiveNumber);
        app->add_option("--filters", filters, "filters per conv block (default 32)")->check(CLI::PositiveNumber);
        app->add_option("--kernels", kernels, "kernel sizes, one per block (default 1,3,5)")->delimiter(',');
        app->add_option("--fc-dim", fc_dim, "hidden units of the first dense layer (default 64)")
            ->check(CLI::PositiveNumber);
        app->add_option("--dropout", dropout, "dropout rate (default 0.6)")->check(CLI::Range(0.0, 0.999));
        app->add_option("--pooling", pooling, "attention or maxpool")
            ->check(CLI::IsMember({"attention", "maxpool"}));
        app->add_option("--batch-size", batch_size, "mini-batch size (default 64)")->check(CLI::Range(2, 1 << 20));
        app->add_option("--epochs", epochs, "maximum epochs (default 20)")->check(CLI::PositiveNumber);
        app->add_option("--patience", patience, "early-stop patience in epochs (default 5)")->check(CLI::PositiveNumber);
        app->add_option("--lr", lr, "Adam learning rate (default 1e-3)")->check(CLI::PositiveNumber);
    }

    HrnConfig model() const {
        HrnConfig c = paper_scale ? HrnConfig::paper_scale() : HrnConfig{};
        if (embed_dim) c.embed_dim = *embed_dim;
        if (filters) c.block_filters = *filters;
        if (fc_dim) c.fc_dim = *fc_dim;
        if (!kernels.empty()) {
            c.kernel_sizes = kernels;
            c.enabled_paths = c.all_paths_mask();
        }
        if (dropout) c.dropout_rate = *dropout;
        if (!pooling.empty()) c.pooling = parse_pooling(pooling);
        c.validate();
        return c;
    }

    TrainConfig training(std::uint64_t seed) const {
        TrainConfig t = paper_scale ? TrainConfig::paper_scale() : TrainConfig{};
        if (batch_size) t.batch_size = *batch_size;
        if (epochs) t.max_epochs = *epochs;
        if (patience) t.early_stop_patience = *patience;
        if (lr) t.lr = *lr;
        t.seed = seed;
        t.threads = worker_threads();
        t.validate();
        return t;
    }
};

// Flags describing a synthetic dataset.
struct DataFlags {
    std::size_t n = 100;
    std::optional<std::size_t> n_val, n_test;
    std::size_t frames = 100;
    double rate = 1.0;
    std::optional<double> rho, sigma;
    std::string partition = "neighbor-aware";
    std::uint64_t codebook_seed = SplitVqConfig{}.seed;

    void add(CLI::App* app, bool with_rate = true, bool with_frames = true) {
        app->add_option("--n", n, "samples per class")->check(CLI::Range(1, 1 << 24));
        app->add_option("--n-val", n_val, "validation samples per class (default 10%)");
        app->add_option("--n-test", n_test, "test samples per class (default 10%)");
        if (with_frames) app->add_option("--frames", frames, "frames per sample")->check(CLI::Range(1, 1 << 20));
        if (with_rate) app->add_option("--rate", rate, "embedding rate in [0, 1]")->check(CLI::Range(0.0, 1.0));
        app->add_option("--rho", rho, "latent AR(1) coefficient for every track")->check(CLI::Range(0.0, 0.999999));
        app->add_option("--sigma", sigma, "latent innovation scale")->check(CLI::NonNegativeNumber);
        app->add_option("--partition", partition, "neighbor-aware or balanced-random")
            ->check(CLI::IsMember({"neighbor-aware", "balanced-random"}));
        app->add_option("--codebook-seed", codebook_seed, "seed of the synthetic codebooks");
    }

    DatasetSpec spec(std::uint64_t seed) const {
        DatasetSpec s;
        s.vq.mode = parse_partition_mode(partition);
        s.vq.seed = codebook_seed;
        s.n_per_class = n;
        s.n_val = n_val;
        s.n_test = n_test;
        s.frames = frames;
        s.rate = rate;
        if (rho) s.latent.rho = {*rho, *rho, *rho};
        if (sigma) s.latent.sigma = *sigma;
        s.seed = seed;
        s.validate();
        return s;
    }
};

struct ReportFlags {
    std::string out;
    std::string format = "csv";
    void add(CLI::App* app, bool out_required) {
        auto* o = app->add_option("--out", out, "report path (default: print only)");
        if (out_required) o->required();
        app->add_option("--format", format, "csv or markdown")->check(CLI::IsMember({"csv", "markdown"}));
    }
    void emit(const ReportTable& t, std::ostream& os) const {
        const auto f = parse_report_format(format);
        os << render(t, f);
        if (!out.empty()) emit_report(t, f, out);
    }
};

std::vector<std::uint64_t> repeat_seeds(std::uint64_t seed, std::size_t repeats) {
    std::vector<std::uint64_t> s(repeats);
    for (std::size_t i = 0; i < repeats; ++i) s[i] = seed + i;
    return s;
}

void print_epoch(std::ostream& os, const EpochStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  loss %.4f  train_acc %s  val_loss %.4f  val_acc %s\n", s.epoch,
                  s.train_loss, format_percent(s.train_accuracy).c_str(), s.val_loss,
                  format_percent(s.val_accuracy).c_str());
    os << buf << std::flush;
}

ReportTable eval_table(const EvalReport& r) {
    ReportTable t;
    t.header = {"accuracy", "n_correct", "n_total", "true_cover_pred_cover", "true_cover_pred_stego",
                "true_stego_pred_cover", "true_stego_pred_stego"};
    t.rows.push_back({format_percent(r.accuracy()), std::to_string(r.n_correct), std::to_string(r.n_total),
                      std::to_string(r.confusion[0][0]), std::to_string(r.confusion[0][1]),
                      std::to_string(r.confusion[1][0]), std::to_string(r.confusion[1][1])});
    return t;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, std::istream& in) {
    CLI::App app{"Steganalysis lab for QIM-embedded quantization-index streams", "qislab"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");

    std::uint64_t seed = 1;
    auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "master seed (default 1)"); };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write a labeled cover/stego QIS dataset and manifest");
    DataFlags gen_data;
    std::string gen_out;
    gen_data.add(gen);
    add_seed(gen);
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
    ModelFlags tr_model;
    std::string tr_data, tr_out;
    tr_model.add(tr);
    add_seed(tr);
    tr->add_option("--data", tr_data, "dataset directory from gen-data")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--out", tr_out, "parameter file to write")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a parameter file on a dataset split");
    std::string ev_data, ev_params, ev_split = "test";
    ReportFlags ev_report;
    ev->add_option("--data", ev_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--params", ev_params, "parameter file")->required()->check(CLI::ExistingFile);
    ev->add_option("--split", ev_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ev_report.add(ev, false);

    // rate-grid / length-grid
    auto* rg = app.add_subcommand("rate-grid", "accuracy versus embedding rate at a fixed duration");
    auto* lg = app.add_subcommand("length-grid", "accuracy versus duration at a fixed embedding rate");
    ModelFlags grid_model;
    DataFlags grid_data;
    ReportFlags grid_report;
    std::vector<double> rates;
    std::vector<std::size_t> durations;
    std::size_t repeats = 3;
    for (auto* sub : {rg, lg}) {
        grid_model.add(sub);
        grid_report.add(sub, false);
        add_seed(sub);
        sub->add_option("--repeats", repeats, "repetitions with seeds seed..seed+R-1 (median reported)")
            ->check(CLI::PositiveNumber);
    }
    grid_data.add(rg, false, true);
    grid_data.add(lg, true, false);
    rg->add_option("--rates", rates, "embedding rates, e.g. 0.1,0.5,1.0")->delimiter(',')->required();
    lg->add_option("--durations", durations, "durations in frames, e.g. 10,50,100")->delimiter(',')->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "train variants #0-#6 on identical data");
    ModelFlags ab_model;
    DataFlags ab_data;
    ReportFlags ab_report;
    std::string ab_dir;
    ab_model.add(ab);
    ab_data.add(ab);
    ab_report.add(ab, false);
    add_seed(ab);
    ab->add_option("--data", ab_dir, "dataset directory (default: generate from the data flags and --seed)")
        ->check(CLI::ExistingDirectory);
    ab->add_option("--repeats", repeats, "training repetitions with seeds seed..seed+R-1 (median reported)")
        ->check(CLI::PositiveNumber);

    // stream
    auto* st = app.add_subcommand("stream", "sliding-window detection over a frame stream");
    std::string st_params, st_input, st_schedule, st_out;
    std::size_t st_window = 100, st_stride = 0, st_tick = 1;
    st->add_option("--params", st_params, "parameter file")->required()->check(CLI::ExistingFile);
    st->add_option("--input", st_input, "QIS file to replay, or - for c1,c2,c3 lines on stdin");
    st->add_option("--simulate", st_schedule, "simulated schedule frames:rate,... (uses --seed)");
    st->add_option("--window", st_window, "window length N in frames")->check(CLI::PositiveNumber);
    st->add_option("--stride", st_stride, "stride in frames (default N/2)");
    st->add_option("--frames-per-tick", st_tick, "frames delivered per read when replaying a file")
        ->check(CLI::PositiveNumber);
    st->add_option("--out", st_out, "decision CSV path (default: stdout)");
    add_seed(st);

    // bench
    auto* bn = app.add_subcommand("bench", "single-window inference latency per duration");
    ModelFlags bn_model;
    ReportFlags bn_report;
    std::string bn_params, bn_layout = "long";
    std::vector<std::size_t> bn_durations{10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 200};
    std::size_t bn_trials = 200;
    bn_model.add(bn);
    bn_report.add(bn, false);
    add_seed(bn);
    bn->add_option("--params", bn_params, "parameter file (default: freshly initialized from --seed)")
        ->check(CLI::ExistingFile);
    bn->add_option("--durations", bn_durations, "durations in frames")->delimiter(',');
    bn->add_option("--trials", bn_trials, "timed trials per duration (>= 30)")
        ->check(CLI::Range(kMinLatencyTrials, std::size_t{1} << 30));
    bn->add_option("--layout", bn_layout, "long (one row per duration) or time (one column per duration)")
        ->check(CLI::IsMember({"long", "time"}));

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer and the full network");
    std::size_t gc_configs = 20;
    double gc_tol = kGradCheckTolerance;
    ReportFlags gc_report;
    add_seed(gc);
    gc->add_option("--configs", gc_configs, "random configurations per layer")->check(CLI::PositiveNumber);
    gc->add_option("--tolerance", gc_tol, "relative error bound")->check(CLI::PositiveNumber);
    gc_report.add(gc, false);

    // verify-partition
    auto* vp = app.add_subcommand("verify-partition", "audit codebook partitions");
    std::string vp_codebook, vp_partition, vp_mode = "neighbor-aware";
    bool vp_balanced = false;
    vp->add_option("--codebook", vp_codebook, "codebook file (#cbk)")->check(CLI::ExistingFile);
    vp->add_option("--partition", vp_partition, "partition file (#cnv)")->check(CLI::ExistingFile);
    vp->add_option("--mode", vp_mode, "mode for the synthetic codebooks when no files are given")
        ->check(CLI::IsMember({"neighbor-aware", "balanced-random"}));
    vp->add_flag("--balanced", vp_balanced, "also require |L1| = |L2|");
    add_seed(vp);

    std::vector<std::string> argv_store{"qislab"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (vp->parsed() && (vp_codebook.empty() != vp_partition.empty())) {
        err << "usage error: --codebook and --partition must be given together\n";
        return kExitUsage;
    }
    if (st->parsed() && (st_input.empty() == st_schedule.empty())) {
        err << "usage error: give exactly one of --input and --simulate\n";
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            const auto spec = gen_data.spec(seed);
            const auto m = gen_dataset(spec, gen_out);
            out << "wrote " << m.files.size() << " samples + manifest.json to " << gen_out << "\n";
        } else if (tr->parsed()) {
            const auto cfg = tr_model.model();
            const auto tc = tr_model.training(seed);
            const auto data = load_dataset(tr_data);
            const auto res = train(cfg, tc, data.train, data.val, [&](const EpochStats& s) { print_epoch(out, s); });
            save_params(res.params, cfg, tr_out);
            out << "best epoch " << res.best_epoch << "  val_acc " << format_percent(res.best_val_accuracy)
                << "  params " << count_params(cfg) << " -> " << tr_out << "\n";
        } else if (ev->parsed()) {
            const auto [params, cfg] = load_params<float>(ev_params);
            const auto data = load_dataset(ev_data);
            const auto split = parse_split(ev_split);
            const auto& set = split == Split::train ? data.train : split == Split::val ? data.val : data.test;
            require(!set.empty(), "split '" + ev_split + "' is empty");
            ev_report.emit(eval_table(evaluate(params, cfg, set, worker_threads())), out);
        } else if (rg->parsed() || lg->parsed()) {
            GridConfig gcfg;
            gcfg.model = grid_model.model();
            gcfg.train = grid_model.training(1);
            gcfg.data = grid_data.spec(1);
            gcfg.seeds = repeat_seeds(seed, repeats);
            gcfg.threads = worker_threads();
            const auto grid = rg->parsed() ? run_rate_grid(gcfg, rates, grid_data.frames)
                                           : run_length_grid(gcfg, durations, grid_data.rate);
            grid_report.emit(grid_table(grid), out);
        } else if (ab->parsed()) {
            const auto cfg = ab_model.model();
            const auto tc = ab_model.training(seed);
            DatasetSplits data;
            if (!ab_dir.empty()) {
                data = load_dataset(ab_dir);
            } else {
                const auto spec = ab_data.spec(seed);
                data = make_dataset(build_split_vq(spec.vq), spec);
            }
            const auto rows = run_ablation(cfg, tc, data, repeat_seeds(seed, repeats), worker_threads());
            ab_report.emit(ablation_table(rows), out);
        } else if (st->parsed()) {
            const auto [params, cfg] = load_params<float>(st_params);
            const WindowSpec spec{st_window, st_stride};
            std::unique_ptr<FrameSource> source;
            if (!st_schedule.empty()) {
                const auto schedule = parse_schedule(st_schedule);
                const auto sim = simulate_frame_stream(build_split_vq(SplitVqConfig{}), LatentSourceConfig{}, schedule,
                                                       seed);
                source = std::make_unique<VectorFrameSource>(sim.qis.frames, st_tick);
            } else if (st_input == "-") {
                source = std::make_unique<LineFrameSource>(in);
            } else {
                source = std::make_unique<QisReplaySource>(st_input, st_tick);
            }
            spec.validate(cfg);
            std::string csv = decisions_csv_header() + "\n";
            const bool to_stdout = st_out.empty();
            if (to_stdout) out << csv;
            detect_stream(params, cfg, spec, *source, [&](const Decision& d) {
                const auto line = decision_csv_line(d) + "\n";
                if (to_stdout)
                    out << line << std::flush;
                else
                    csv += line;
            });
            if (!to_stdout) write_text_file(st_out, csv);
        } else if (bn->parsed()) {
            HrnConfig cfg;
            HrnParams<float> params;
            if (!bn_params.empty()) {
                std::tie(params, cfg) = load_params<float>(bn_params);
            } else {
                cfg = bn_model.model();
                params = init_params<float>(cfg, seed);
            }
            const auto rep = bench_latency(params, cfg, bn_durations, bn_trials, seed);
            err << "machine: " << rep.machine << "\n";
            bn_report.emit(bn_layout == "long" ? latency_table(rep) : latency_time_table(rep), out);
        } else if (gc->parsed()) {
            const auto suite = run_gradcheck_suite(gc_configs, seed, gc_tol);
            gc_report.emit(gradcheck_table(suite), out);
            if (!suite.pass()) {
                err << "gradcheck failed: at least one layer exceeds relative error " << gc_tol << "\n";
                return kExitDomainError;
            }
        } else if (vp->parsed()) {
            std::vector<std::pair<CnvPartition, Codebook>> items;
            if (!vp_codebook.empty()) {
                const auto cb = read_codebook(vp_codebook);
                items.emplace_back(read_partition(vp_partition, cb.track()), cb);
            } else {
                SplitVqConfig vc;
                vc.mode = parse_partition_mode(vp_mode);
                vc.seed = seed;
                const auto m = build_split_vq(vc);
                for (std::size_t j = 0; j < kTracks; ++j) items.emplace_back(m.partitions[j], m.codebooks[j]);
            }
            bool all_ok = true;
            out << "track,size,L1,L2,disjoint,covering,result\n";
            for (const auto& [part, cb] : items) {
                const auto rep = verify_partition(part, cb, vp_balanced);
                std::string result = rep.pass ? "ok" : "";
                for (auto c : rep.failures) result += (result.empty() ? "" : ";") + std::string(PartitionReport::code_name(c));
                out << part.codebook_id << "," << cb.size() << "," << rep.counts[0] << "," << rep.counts[1] << ","
                    << (rep.disjoint ? "yes" : "no") << "," << (rep.covering ? "yes" : "no") << "," << result << "\n";
                all_ok = all_ok && rep.pass;
            }
            if (!all_ok) {
                err << "partition check failed\n";
                return kExitDomainError;
            }
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomainError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomainError;
    }
    return kExitOk;
}

}  // namespace qislab
