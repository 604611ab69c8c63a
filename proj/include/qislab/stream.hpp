#pragma once

// Sliding-window detection over a live frame stream, simulated mixed
// cover/stego streams, and single-window inference latency.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qislab/experiment.hpp"
#include "qislab/hrn.hpp"

namespace qislab {

struct WindowSpec {
    std::size_t window_frames = 100;
    /// 0 selects the default stride window_frames / 2 (at least 1).
    std::size_t stride_frames = 0;

    std::size_t stride() const { return stride_frames ? stride_frames : std::max<std::size_t>(1, window_frames / 2); }
    void validate(const HrnConfig& cfg) const;
};

/// floor((M − N)/s) + 1 for M ≥ N, else 0.
std::size_t window_count(std::size_t stream_frames, const WindowSpec& spec);

struct Decision {
    std::uint64_t window_start = 0;
    float prob_stego = 0.0f;
    Label label = Label::cover;
    friend bool operator==(const Decision&, const Decision&) = default;
};

/// Pull-based frame source. read() fills up to buf.size() frames and returns
/// how many it wrote; 0 means end of stream.
class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual std::size_t read(std::span<Frame> buf) = 0;
};

class VectorFrameSource : public FrameSource {
public:
    explicit VectorFrameSource(std::vector<Frame> frames, std::size_t chunk = 1);
    std::size_t read(std::span<Frame> buf) override;

private:
    std::vector<Frame> frames_;
    std::size_t chunk_;
    std::size_t pos_ = 0;
};

/// Replays a QIS file, delivering at most frames_per_tick frames per read.
class QisReplaySource : public FrameSource {
public:
    QisReplaySource(const std::filesystem::path& path, std::size_t frames_per_tick = 1);
    std::size_t read(std::span<Frame> buf) override;

private:
    VectorFrameSource inner_;
};

/// `c1,c2,c3` records, one per line; blank lines and '#' comments are skipped.
/// A line that is not three integers raises StreamError with its frame ordinal.
class LineFrameSource : public FrameSource {
public:
    explicit LineFrameSource(std::istream& in);
    std::size_t read(std::span<Frame> buf) override;

private:
    std::istream& in_;
    std::uint64_t ordinal_ = 0;
};

/// Ring buffer of the last N frames; one decision per stride once full.
/// Shares the parameters read-only.
class StreamDetector {
public:
    StreamDetector(const HrnParams<float>& params, const HrnConfig& cfg, const WindowSpec& spec);

    /// Feeds one frame; returns a decision when a window completes. Indices
    /// outside the model vocabulary raise StreamError.
    std::optional<Decision> push(const Frame& frame);

    std::uint64_t frames_seen() const noexcept { return seen_; }
    /// Current window, oldest frame first (requires a full buffer).
    QisMatrix window() const;

private:
    const HrnParams<float>& params_;
    HrnConfig cfg_;
    WindowSpec spec_;
    HrnPass<float> pass_;
    std::vector<Frame> ring_;
    std::uint64_t seen_ = 0;
};

using DecisionCallback = std::function<void(const Decision&)>;

std::vector<Decision> detect_stream(const HrnParams<float>& params, const HrnConfig& cfg, const WindowSpec& spec,
                                    FrameSource& source, const DecisionCallback& on_decision = {});

/// `window_start,prob_stego,label` header plus one line per decision.
std::string decisions_csv_header();
std::string decision_csv_line(const Decision& d);

// Simulated streams -------------------------------------------------------------

struct StreamSegment {
    std::size_t frames = 0;
    double rate = 0.0;
};

struct SimulatedStream {
    QisMatrix qis;
    std::vector<double> frame_rates;
    std::vector<EmbedSlot> slots;
};

/// One latent trajectory across the whole stream; segment i embeds at its own
/// rate. Deterministic per seed.
SimulatedStream simulate_frame_stream(const SplitVqModel& model, const LatentSourceConfig& latent,
                                      std::span<const StreamSegment> schedule, std::uint64_t seed);

/// "100:0,50:1" -> {(100, 0), (50, 1)}.
std::vector<StreamSegment> parse_schedule(std::string_view text);

// Latency ---------------------------------------------------------------------------

struct LatencyRow {
    std::size_t duration_frames = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;  // unbiased
    std::size_t n_trials = 0;
    std::vector<double> samples_ms;
};

struct LatencyReport {
    std::vector<LatencyRow> rows;
    std::string machine;
    int frame_rate = 100;
};

inline constexpr std::size_t kMinLatencyTrials = 30;

/// Times single-window forward passes. Durations are visited round-robin
/// within each trial so slow drift affects all of them alike; `warmup` rounds
/// are discarded.
LatencyReport bench_latency(const HrnParams<float>& params, const HrnConfig& cfg,
                            std::span<const std::size_t> durations, std::size_t n_trials, std::uint64_t seed,
                            std::size_t warmup = 10);

/// Unbiased sample standard deviation.
double sample_std(std::span<const double> v);

/// Long form: duration_frames, duration_s, mean_ms, std_ms, n_trials.
ReportTable latency_table(const LatencyReport& rep);
/// Time-table layout: one column per length in seconds, rows "Mean (ms)" and "Std".
ReportTable latency_time_table(const LatencyReport& rep);

std::string machine_descriptor();

}  // namespace qislab
