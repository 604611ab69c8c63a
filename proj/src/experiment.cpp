#include "qislab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <utility>

#include "qislab/nn/optim.hpp"
#include "qislab/parallel.hpp"

namespace qislab {

namespace {

constexpr std::size_t kEvalBatch = 128;

enum SeedStream : std::uint64_t {
    kInitStream = 0x1417,
    kShuffleStream = 0x5f1e,
    kDropoutStream = 0xd0,
    kCellData = 0xda7a,
    kCellTrain = 0x7a1e,
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TrainConfig TrainConfig::paper_scale() {
    TrainConfig tc;
    tc.batch_size = 256;
    tc.max_epochs = 200;
    return tc;
}

void TrainConfig::validate() const {
    require(batch_size >= 2, "batch size must be >= 2 (batch normalization needs two samples)");
    require(max_epochs >= 1, "epochs must be >= 1");
    require(lr > 0.0, "learning rate must be positive");
    require(early_stop_patience >= 1, "early-stop patience must be >= 1");
}

EvalReport evaluate(const HrnParams<float>& params, const HrnConfig& cfg, std::span<const LabeledQis> test_set,
                    std::size_t threads) {
    EvalReport rep;
    rep.n_total = test_set.size();
    rep.predictions.reserve(test_set.size());
    rep.prob_stego.reserve(test_set.size());
    HrnPass<float> pass(cfg, threads);
    std::vector<const QisMatrix*> ptrs;
    std::vector<Label> labels;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < test_set.size(); begin += kEvalBatch) {
        const std::size_t end = std::min(test_set.size(), begin + kEvalBatch);
        ptrs.clear();
        labels.clear();
        for (std::size_t i = begin; i < end; ++i) {
            ptrs.push_back(&test_set[i].qis);
            labels.push_back(test_set[i].label);
        }
        pass.forward(params, ptrs, nn::Mode::infer, 0);
        loss_sum += static_cast<double>(pass.loss(labels)) * static_cast<double>(end - begin);
        for (std::size_t i = 0; i < end - begin; ++i) {
            const auto out = pass.output(i);
            const Label pred = label_from_probs(out.probs);
            rep.predictions.push_back(pred);
            rep.prob_stego.push_back(out.probs[1]);
            rep.confusion[static_cast<int>(labels[i])][static_cast<int>(pred)]++;
            if (pred == labels[i]) ++rep.n_correct;
        }
    }
    rep.loss = test_set.empty() ? 0.0 : loss_sum / static_cast<double>(test_set.size());
    return rep;
}

TrainResult train(const HrnConfig& cfg, const TrainConfig& tc, std::span<const LabeledQis> train_set,
                  std::span<const LabeledQis> val_set, const EpochCallback& on_epoch) {
    cfg.validate();
    tc.validate();
    require(train_set.size() >= 2, "training set must hold at least two samples");

    TrainResult result;
    auto params = init_params<float>(cfg, derive_seed(tc.seed, kInitStream));
    auto grads = HrnParams<float>::zeros(cfg);
    nn::AdamState adam;
    const nn::AdamConfig adam_cfg{.lr = tc.lr};
    HrnPass<float> pass(cfg, tc.threads);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(tc.seed, kShuffleStream));

    std::vector<const QisMatrix*> ptrs;
    std::vector<Label> labels;
    std::uint64_t step = 0;
    std::size_t since_best = 0;
    bool have_best = false;

    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t seen = 0, correct = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
            const std::size_t end = std::min(order.size(), begin + tc.batch_size);
            if (end - begin < 2) break;  // a lone trailing sample cannot be batch-normalized
            ptrs.clear();
            labels.clear();
            for (std::size_t i = begin; i < end; ++i) {
                ptrs.push_back(&train_set[order[i]].qis);
                labels.push_back(train_set[order[i]].label);
            }
            pass.forward(params, ptrs, nn::Mode::train, derive_seed(tc.seed, kDropoutStream, step++));
            grads.zero();
            const float loss = pass.backward(params, labels, grads);
            pass.update_running_stats(params);
            nn::adam_step<float>(params.trainable_spans(), std::as_const(grads).trainable_spans(), adam, adam_cfg);
            loss_sum += static_cast<double>(loss) * static_cast<double>(end - begin);
            seen += end - begin;
            for (std::size_t i = 0; i < end - begin; ++i)
                if (label_from_probs(pass.output(i).probs) == labels[i]) ++correct;
        }
        require(params.all_finite(), "training diverged (non-finite parameters)");

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / static_cast<double>(seen);
        st.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        if (!val_set.empty()) {
            const auto ev = evaluate(params, cfg, val_set, tc.threads);
            st.val_loss = ev.loss;
            st.val_accuracy = ev.accuracy();
        }
        result.history.push_back(st);
        result.epoch_seconds.push_back(seconds_since(t0));
        if (on_epoch) on_epoch(st);

        if (val_set.empty() || !have_best || st.val_accuracy > result.best_val_accuracy) {
            have_best = true;
            result.best_val_accuracy = st.val_accuracy;
            result.best_epoch = epoch;
            result.params = params;
            since_best = 0;
        } else if (++since_best >= tc.early_stop_patience) {
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

double median(std::vector<double> v) {
    require(!v.empty(), "median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::uint64_t cell_data_seed(std::uint64_t seed) { return derive_seed(seed, kCellData); }
std::uint64_t cell_train_seed(std::uint64_t seed) { return derive_seed(seed, kCellTrain); }

ExperimentGrid run_grid(const GridConfig& gc, ExperimentGrid::Axis axis, std::span<const double> rates,
                        std::span<const std::size_t> durations) {
    require(!rates.empty() && !durations.empty(), "grid axes must be non-empty");
    require(!gc.seeds.empty(), "grid needs at least one seed");
    ExperimentGrid grid;
    grid.axis = axis;
    grid.rates.assign(rates.begin(), rates.end());
    grid.durations.assign(durations.begin(), durations.end());
    grid.seeds = gc.seeds;
    for (double r : rates) require(r >= 0.0 && r <= 1.0, "embedding rates must lie in [0, 1]");
    for (auto d : durations)
        require(d >= gc.model.min_frames(), "duration " + std::to_string(d) + " is shorter than the model minimum " +
                                                std::to_string(gc.model.min_frames()));

    const std::size_t n_cells = rates.size() * durations.size();
    const std::size_t n_seeds = gc.seeds.size();
    grid.cells.resize(n_cells);
    std::vector<double> acc(n_cells * n_seeds), secs(n_cells * n_seeds);

    const SplitVqModel vq = build_split_vq(gc.data.vq);
    parallel_for(
        n_cells * n_seeds,
        [&](std::size_t job) {
            const std::size_t c = job / n_seeds, s = job % n_seeds;
            const auto t0 = std::chrono::steady_clock::now();
            DatasetSpec spec = gc.data;
            spec.rate = rates[c / durations.size()];
            spec.frames = durations[c % durations.size()];
            spec.seed = cell_data_seed(gc.seeds[s]);
            const auto data = make_dataset(vq, spec);
            TrainConfig tc = gc.train;
            tc.seed = cell_train_seed(gc.seeds[s]);
            tc.threads = gc.threads > 1 ? 1 : tc.threads;
            const auto res = train(gc.model, tc, data.train, data.val);
            acc[job] = evaluate(res.params, gc.model, data.test, tc.threads).accuracy();
            secs[job] = seconds_since(t0);
        },
        gc.threads);

    for (std::size_t c = 0; c < n_cells; ++c) {
        auto& cell = grid.cells[c];
        cell.rate = rates[c / durations.size()];
        cell.frames = durations[c % durations.size()];
        cell.accuracies.assign(acc.begin() + static_cast<std::ptrdiff_t>(c * n_seeds),
                               acc.begin() + static_cast<std::ptrdiff_t>((c + 1) * n_seeds));
        cell.median = median(cell.accuracies);
        for (std::size_t s = 0; s < n_seeds; ++s) cell.seconds += secs[c * n_seeds + s];
    }
    return grid;
}

ExperimentGrid run_rate_grid(const GridConfig& gc, std::span<const double> rates, std::size_t duration_frames) {
    const std::size_t d[1] = {duration_frames};
    return run_grid(gc, ExperimentGrid::Axis::rate, rates, d);
}

ExperimentGrid run_length_grid(const GridConfig& gc, std::span<const std::size_t> durations, double rate) {
    const double r[1] = {rate};
    return run_grid(gc, ExperimentGrid::Axis::duration, r, durations);
}

std::vector<AblationRow> run_ablation(const HrnConfig& base, const TrainConfig& tc, const DatasetSplits& data,
                                      std::span<const std::uint64_t> seeds, std::size_t threads) {
    require(!seeds.empty(), "ablation needs at least one seed");
    const std::size_t n_seeds = seeds.size();
    std::vector<AblationRow> rows(kVariantCount);
    std::vector<double> acc(kVariantCount * n_seeds);
    for (std::size_t v = 0; v < kVariantCount; ++v) {
        auto& row = rows[v];
        row.variant = static_cast<Variant>(v);
        row.description = std::string(variant_description(row.variant));
        const auto cfg = make_variant(base, row.variant);
        row.z_dim = cfg.z_dim();
        row.n_params = count_params(cfg);
        require(data.train.empty() || data.train[0].qis.length() >= cfg.min_frames(),
                "samples are too short for variant #" + std::to_string(v));
    }
    parallel_for(
        kVariantCount * n_seeds,
        [&](std::size_t job) {
            const std::size_t v = job / n_seeds, s = job % n_seeds;
            const auto cfg = make_variant(base, static_cast<Variant>(v));
            TrainConfig t = tc;
            t.seed = cell_train_seed(seeds[s]);
            t.threads = threads > 1 ? 1 : t.threads;
            const auto res = train(cfg, t, data.train, data.val);
            acc[job] = evaluate(res.params, cfg, data.test, t.threads).accuracy();
        },
        threads);
    for (std::size_t v = 0; v < kVariantCount; ++v) {
        rows[v].accuracies.assign(acc.begin() + static_cast<std::ptrdiff_t>(v * n_seeds),
                                  acc.begin() + static_cast<std::ptrdiff_t>((v + 1) * n_seeds));
        rows[v].median = median(rows[v].accuracies);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string_view to_string(ReportFormat f) { return f == ReportFormat::csv ? "csv" : "markdown"; }

ReportFormat parse_report_format(std::string_view s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    throw InvalidArgument("unknown report format '" + std::string(s) + "' (expected csv or markdown)");
}

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
    return buf;
}

ReportTable grid_table(const ExperimentGrid& grid) {
    ReportTable t;
    if (grid.axis == ExperimentGrid::Axis::rate) {
        t.header.push_back("frames");
        for (double r : grid.rates) t.header.push_back(format_double(r));
        for (std::size_t d = 0; d < grid.durations.size(); ++d) {
            std::vector<std::string> row{std::to_string(grid.durations[d])};
            for (std::size_t r = 0; r < grid.rates.size(); ++r) row.push_back(format_percent(grid.cell(r, d).median));
            t.rows.push_back(std::move(row));
        }
    } else {
        t.header.push_back("rate");
        for (auto d : grid.durations) t.header.push_back(std::to_string(d));
        for (std::size_t r = 0; r < grid.rates.size(); ++r) {
            std::vector<std::string> row{format_double(grid.rates[r])};
            for (std::size_t d = 0; d < grid.durations.size(); ++d) row.push_back(format_percent(grid.cell(r, d).median));
            t.rows.push_back(std::move(row));
        }
    }
    return t;
}

ReportTable ablation_table(const std::vector<AblationRow>& rows) {
    ReportTable t;
    t.header = {"variant", "description", "z_dim", "params", "accuracy"};
    for (const auto& r : rows)
        t.rows.push_back({"#" + std::to_string(static_cast<int>(r.variant)), r.description, std::to_string(r.z_dim),
                          std::to_string(r.n_params), format_percent(r.median)});
    return t;
}

namespace {

std::string join(const std::vector<std::string>& cells, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += sep;
        out += cells[i];
    }
    return out;
}

void check_cell(const std::string& c, char forbidden) {
    require(c.find(forbidden) == std::string::npos && c.find('\n') == std::string::npos,
            "report cell '" + c + "' contains a separator");
}

}  // namespace

std::string to_csv(const ReportTable& t) {
    for (const auto& c : t.header) check_cell(c, ',');
    std::string out = join(t.header, ",") + "\n";
    for (const auto& row : t.rows) {
        for (const auto& c : row) check_cell(c, ',');
        out += join(row, ",") + "\n";
    }
    return out;
}

std::string to_markdown(const ReportTable& t) {
    for (const auto& c : t.header) check_cell(c, '|');
    std::string out = "| " + join(t.header, " | ") + " |\n|";
    for (std::size_t i = 0; i < t.header.size(); ++i) out += "---|";
    out += "\n";
    for (const auto& row : t.rows) {
        for (const auto& c : row) check_cell(c, '|');
        out += "| " + join(row, " | ") + " |\n";
    }
    return out;
}

ReportTable parse_csv_table(std::string_view text) {
    ReportTable t;
    std::size_t line_no = 0;
    for (const auto& line : split(text, '\n')) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cells = split(line, ',');
        if (t.header.empty()) {
            t.header = std::move(cells);
        } else {
            if (cells.size() != t.header.size()) throw FormatError(line_no, "row width differs from the header");
            t.rows.push_back(std::move(cells));
        }
    }
    return t;
}

ReportTable parse_markdown_table(std::string_view text) {
    ReportTable t;
    std::size_t line_no = 0;
    bool separator_seen = false;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (line.front() != '|' || line.back() != '|') throw FormatError(line_no, "table rows must start and end with '|'");
        std::vector<std::string> cells;
        for (const auto& c : split(std::string_view(line).substr(1, line.size() - 2), '|')) cells.push_back(trim(c));
        if (t.header.empty()) {
            t.header = std::move(cells);
        } else if (!separator_seen) {
            for (const auto& c : cells)
                if (c.empty() || c.find_first_not_of("-:") != std::string::npos)
                    throw FormatError(line_no, "expected a header separator row");
            separator_seen = true;
        } else {
            if (cells.size() != t.header.size()) throw FormatError(line_no, "row width differs from the header");
            t.rows.push_back(std::move(cells));
        }
    }
    return t;
}

std::string render(const ReportTable& t, ReportFormat f) { return f == ReportFormat::csv ? to_csv(t) : to_markdown(t); }

void emit_report(const ReportTable& t, ReportFormat f, const std::filesystem::path& path) {
    write_text_file(path, render(t, f));
}

}  // namespace qislab
