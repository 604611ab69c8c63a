#include "qislab/stream.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <istream>
#include <numeric>
#include <thread>

namespace qislab {

void WindowSpec::validate(const HrnConfig& cfg) const {
    require(window_frames >= cfg.min_frames(), "window of " + std::to_string(window_frames) +
                                                   " frames is shorter than the model minimum " +
                                                   std::to_string(cfg.min_frames()));
    require(stride() >= 1, "stride must be >= 1");
}

std::size_t window_count(std::size_t stream_frames, const WindowSpec& spec) {
    if (stream_frames < spec.window_frames) return 0;
    return (stream_frames - spec.window_frames) / spec.stride() + 1;
}

// ---------------------------------------------------------------------------

VectorFrameSource::VectorFrameSource(std::vector<Frame> frames, std::size_t chunk)
    : frames_(std::move(frames)), chunk_(std::max<std::size_t>(1, chunk)) {}

std::size_t VectorFrameSource::read(std::span<Frame> buf) {
    const std::size_t n = std::min({buf.size(), chunk_, frames_.size() - pos_});
    std::copy_n(frames_.begin() + static_cast<std::ptrdiff_t>(pos_), n, buf.begin());
    pos_ += n;
    return n;
}

QisReplaySource::QisReplaySource(const std::filesystem::path& path, std::size_t frames_per_tick)
    : inner_(parse_qis(path).frames, frames_per_tick) {
    require(frames_per_tick >= 1, "frames per tick must be >= 1");
}

std::size_t QisReplaySource::read(std::span<Frame> buf) { return inner_.read(buf); }

LineFrameSource::LineFrameSource(std::istream& in) : in_(in) {}

std::size_t LineFrameSource::read(std::span<Frame> buf) {
    std::size_t n = 0;
    std::string line;
    while (n < buf.size() && std::getline(in_, line)) {
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto parts = split(t, ',');
        Frame f{};
        bool ok = parts.size() == kTracks;
        for (std::size_t j = 0; ok && j < kTracks; ++j) {
            long long v = 0;
            ok = parse_int(trim(parts[j]), v) && v >= 0 && v <= INT32_MAX;
            f[j] = static_cast<std::int32_t>(v);
        }
        if (!ok) throw StreamError(ordinal_, "expected three non-negative integers, got '" + t + "'");
        buf[n++] = f;
        ++ordinal_;
    }
    return n;
}

// ---------------------------------------------------------------------------

StreamDetector::StreamDetector(const HrnParams<float>& params, const HrnConfig& cfg, const WindowSpec& spec)
    : params_(params), cfg_(cfg), spec_(spec), pass_(cfg), ring_(spec.window_frames) {
    spec_.validate(cfg_);
}

QisMatrix StreamDetector::window() const {
    const std::size_t N = spec_.window_frames;
    require(seen_ >= N, "window requested before the buffer is full");
    QisMatrix q;
    q.vocab = cfg_.vocab_sizes;
    q.frames.resize(N);
    const std::size_t head = static_cast<std::size_t>(seen_ % N);  // oldest frame
    for (std::size_t i = 0; i < N; ++i) q.frames[i] = ring_[(head + i) % N];
    return q;
}

std::optional<Decision> StreamDetector::push(const Frame& frame) {
    for (std::size_t j = 0; j < kTracks; ++j)
        if (frame[j] < 0 || static_cast<std::size_t>(frame[j]) >= cfg_.vocab_sizes[j])
            throw StreamError(seen_, "track " + std::to_string(j) + " index " + std::to_string(frame[j]) +
                                         " outside vocabulary " + std::to_string(cfg_.vocab_sizes[j]));
    const std::size_t N = spec_.window_frames;
    ring_[static_cast<std::size_t>(seen_ % N)] = frame;
    ++seen_;
    if (seen_ < N || (seen_ - N) % spec_.stride() != 0) return std::nullopt;

    const QisMatrix w = window();
    const QisMatrix* in[1] = {&w};
    pass_.forward(params_, in, nn::Mode::infer, 0);
    const auto out = pass_.output(0);
    return Decision{seen_ - N, out.probs[1], label_from_probs(out.probs)};
}

std::vector<Decision> detect_stream(const HrnParams<float>& params, const HrnConfig& cfg, const WindowSpec& spec,
                                    FrameSource& source, const DecisionCallback& on_decision) {
    StreamDetector det(params, cfg, spec);
    std::vector<Decision> out;
    std::vector<Frame> buf(256);
    while (const std::size_t n = source.read(buf)) {
        for (std::size_t i = 0; i < n; ++i) {
            if (auto d = det.push(buf[i])) {
                if (on_decision) on_decision(*d);
                out.push_back(*d);
            }
        }
    }
    return out;
}

std::string decisions_csv_header() { return "window_start,prob_stego,label"; }

std::string decision_csv_line(const Decision& d) {
    return std::to_string(d.window_start) + "," + format_double(static_cast<double>(d.prob_stego)) + "," +
           std::string(to_string(d.label));
}

// ---------------------------------------------------------------------------

SimulatedStream simulate_frame_stream(const SplitVqModel& model, const LatentSourceConfig& latent,
                                      std::span<const StreamSegment> schedule, std::uint64_t seed) {
    SimulatedStream s;
    for (const auto& seg : schedule) {
        require(seg.rate >= 0.0 && seg.rate <= 1.0, "segment rate must lie in [0, 1]");
        s.frame_rates.insert(s.frame_rates.end(), seg.frames, seg.rate);
    }
    LatentSourceConfig lc = latent;
    lc.seed = derive_seed(seed, 20);
    std::array<std::size_t, kTracks> dims{};
    for (std::size_t j = 0; j < kTracks; ++j) dims[j] = model.codebooks[j].dim();
    const auto traj = gen_latent_trajectory(lc, dims, s.frame_rates.size());
    auto sample = quantize_trajectory(model, traj, s.frame_rates, derive_seed(seed, 21), kAllTracks);
    s.qis = std::move(sample.qis);
    s.slots = std::move(sample.slots);
    return s;
}

std::vector<StreamSegment> parse_schedule(std::string_view text) {
    std::vector<StreamSegment> out;
    for (const auto& item : split(text, ',')) {
        const auto parts = split(trim(item), ':');
        long long frames = 0;
        double rate = 0.0;
        if (parts.size() != 2 || !parse_int(parts[0], frames) || frames < 0 || !parse_double(parts[1], rate) ||
            rate < 0.0 || rate > 1.0)
            throw InvalidArgument("bad schedule segment '" + item + "' (expected frames:rate with rate in [0, 1])");
        out.push_back({static_cast<std::size_t>(frames), rate});
    }
    require(!out.empty(), "empty schedule");
    return out;
}

// ---------------------------------------------------------------------------

double sample_std(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

LatencyReport bench_latency(const HrnParams<float>& params, const HrnConfig& cfg,
                            std::span<const std::size_t> durations, std::size_t n_trials, std::uint64_t seed,
                            std::size_t warmup) {
    require(!durations.empty(), "latency grid must be non-empty");
    require(n_trials >= kMinLatencyTrials, "at least " + std::to_string(kMinLatencyTrials) + " trials are required");
    for (auto d : durations)
        require(d >= cfg.min_frames(), "duration " + std::to_string(d) + " is shorter than the model minimum");

    const std::size_t longest = *std::max_element(durations.begin(), durations.end());
    const auto vq = build_split_vq(SplitVqConfig{});
    const StreamSegment seg[1] = {{longest, 0.0}};
    const auto stream = simulate_frame_stream(vq, LatentSourceConfig{}, seg, seed);

    std::vector<QisMatrix> windows;
    std::vector<HrnPass<float>> passes;
    for (auto d : durations) {
        QisMatrix w = stream.qis;
        w.frames.resize(d);
        windows.push_back(std::move(w));
        passes.emplace_back(cfg);
    }

    LatencyReport rep;
    rep.machine = machine_descriptor();
    rep.rows.resize(durations.size());
    for (std::size_t i = 0; i < durations.size(); ++i) {
        rep.rows[i].duration_frames = durations[i];
        rep.rows[i].samples_ms.reserve(n_trials);
    }
    using clock = std::chrono::steady_clock;
    for (std::size_t trial = 0; trial < warmup + n_trials; ++trial) {
        for (std::size_t i = 0; i < durations.size(); ++i) {
            const QisMatrix* in[1] = {&windows[i]};
            const auto t0 = clock::now();
            passes[i].forward(params, in, nn::Mode::infer, 0);
            const auto t1 = clock::now();
            if (trial >= warmup)
                rep.rows[i].samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
    }
    for (auto& row : rep.rows) {
        row.n_trials = row.samples_ms.size();
        row.mean_ms = std::accumulate(row.samples_ms.begin(), row.samples_ms.end(), 0.0) /
                      static_cast<double>(row.n_trials);
        row.std_ms = sample_std(row.samples_ms);
    }
    return rep;
}

namespace {
std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}
}  // namespace

ReportTable latency_table(const LatencyReport& rep) {
    ReportTable t;
    t.header = {"duration_frames", "duration_s", "mean_ms", "std_ms", "n_trials"};
    for (const auto& r : rep.rows)
        t.rows.push_back({std::to_string(r.duration_frames),
                          format_double(static_cast<double>(r.duration_frames) / rep.frame_rate), fixed4(r.mean_ms),
                          fixed4(r.std_ms), std::to_string(r.n_trials)});
    return t;
}

ReportTable latency_time_table(const LatencyReport& rep) {
    ReportTable t;
    t.header.push_back("metric");
    std::vector<std::string> mean{"Mean (ms)"}, sd{"Std"};
    for (const auto& r : rep.rows) {
        t.header.push_back(format_double(static_cast<double>(r.duration_frames) / rep.frame_rate));
        mean.push_back(fixed4(r.mean_ms));
        sd.push_back(fixed4(r.std_ms));
    }
    t.rows = {mean, sd};
    return t;
}

std::string machine_descriptor() {
    std::string cpu = "unknown cpu";
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line))
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) cpu = trim(line.substr(colon + 1));
            break;
        }
    return cpu + "; " + std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " hardware threads";
}

}  // namespace qislab
