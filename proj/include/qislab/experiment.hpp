#pragma once

// Training, evaluation, embedding-rate / duration sweeps, the ablation suite
// and report tables.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qislab/hrn.hpp"
#include "qislab/stego_sim.hpp"

namespace qislab {

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t max_epochs = 20;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    std::size_t early_stop_patience = 5;
    /// Workers for the sharded forward/backward. Results do not depend on it.
    std::size_t threads = 1;

    /// Batch 256, 200 epochs.
    static TrainConfig paper_scale();
    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainResult {
    HrnParams<float> params;  // best validation epoch
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_val_accuracy = 0.0;
    std::vector<double> epoch_seconds;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch Adam on the mean cross-entropy; the sample order is reshuffled
/// every epoch from tc.seed. Stops after `early_stop_patience` epochs without
/// a validation-accuracy improvement. An empty validation set selects the
/// last epoch.
TrainResult train(const HrnConfig& cfg, const TrainConfig& tc, std::span<const LabeledQis> train_set,
                  std::span<const LabeledQis> val_set, const EpochCallback& on_epoch = {});

struct EvalReport {
    std::size_t n_correct = 0;
    std::size_t n_total = 0;
    /// confusion[true][predicted], indexed by Label.
    std::array<std::array<std::size_t, 2>, 2> confusion{};
    double loss = 0.0;
    std::vector<Label> predictions;
    std::vector<float> prob_stego;

    double accuracy() const { return n_total == 0 ? 0.0 : static_cast<double>(n_correct) / static_cast<double>(n_total); }
};

EvalReport evaluate(const HrnParams<float>& params, const HrnConfig& cfg, std::span<const LabeledQis> test_set,
                    std::size_t threads = 1);

// Sweeps ----------------------------------------------------------------------

struct GridConfig {
    DatasetSpec data;  // rate / frames are overridden per cell, seed per repetition
    HrnConfig model;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    /// Cells × seeds run on this many workers (each single-threaded inside).
    std::size_t threads = 1;
};

struct GridCell {
    double rate = 0.0;
    std::size_t frames = 0;
    std::vector<double> accuracies;  // one per seed
    double median = 0.0;
    double seconds = 0.0;
};

struct ExperimentGrid {
    enum class Axis { rate, duration };
    Axis axis = Axis::rate;
    std::vector<double> rates;
    std::vector<std::size_t> durations;
    std::vector<std::uint64_t> seeds;
    std::vector<GridCell> cells;  // rate-major

    const GridCell& cell(std::size_t rate_i, std::size_t dur_i) const { return cells.at(rate_i * durations.size() + dur_i); }
};

double median(std::vector<double> v);

/// Seeds for repetition `seed` of any cell: the dataset seed and the training
/// seed depend only on `seed`, so two cells with the same seed share latent
/// sources and payload draws (paired comparison) and cell values do not depend
/// on execution order.
std::uint64_t cell_data_seed(std::uint64_t seed);
std::uint64_t cell_train_seed(std::uint64_t seed);

/// Trains one model per (rate, duration, seed) on a fresh dataset.
ExperimentGrid run_grid(const GridConfig& gc, ExperimentGrid::Axis axis, std::span<const double> rates,
                        std::span<const std::size_t> durations);
ExperimentGrid run_rate_grid(const GridConfig& gc, std::span<const double> rates, std::size_t duration_frames);
ExperimentGrid run_length_grid(const GridConfig& gc, std::span<const std::size_t> durations, double rate = 1.0);

struct AblationRow {
    Variant variant = Variant::baseline;
    std::string description;
    std::size_t z_dim = 0;
    std::size_t n_params = 0;
    std::vector<double> accuracies;  // one per seed
    double median = 0.0;
};

/// Trains every variant #0..#6 on the same splits with the same seeds.
std::vector<AblationRow> run_ablation(const HrnConfig& base, const TrainConfig& tc, const DatasetSplits& data,
                                      std::span<const std::uint64_t> seeds, std::size_t threads = 1);

// Reports ---------------------------------------------------------------------

enum class ReportFormat { csv, markdown };
std::string_view to_string(ReportFormat f);
ReportFormat parse_report_format(std::string_view s);

struct ReportTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    friend bool operator==(const ReportTable&, const ReportTable&) = default;
};

/// 0.8683 -> "86.83".
std::string format_percent(double fraction);

/// Rate grid: header `frames,<rate%>...`, one row per duration.
/// Length grid: header `rate,<frames>...`, one row per rate.
ReportTable grid_table(const ExperimentGrid& grid);
ReportTable ablation_table(const std::vector<AblationRow>& rows);

std::string to_csv(const ReportTable& t);
std::string to_markdown(const ReportTable& t);
ReportTable parse_csv_table(std::string_view text);
ReportTable parse_markdown_table(std::string_view text);
std::string render(const ReportTable& t, ReportFormat f);
void emit_report(const ReportTable& t, ReportFormat f, const std::filesystem::path& path);

}  // namespace qislab
