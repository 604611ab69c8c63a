#pragma once

// Cover/stego quantization-index streams from a latent AR(1) source, QIS file
// I/O and on-disk labeled datasets.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qislab/codebook.hpp"

namespace qislab {

using Frame = std::array<std::int32_t, kTracks>;

/// T×3 codeword indices of one speech segment.
struct QisMatrix {
    std::vector<Frame> frames;
    std::array<std::size_t, kTracks> vocab{128, 32, 32};
    int frame_rate = 100;

    std::size_t length() const noexcept { return frames.size(); }
    /// Throws InvalidArgument if any index is outside its vocabulary.
    void validate() const;
    friend bool operator==(const QisMatrix&, const QisMatrix&) = default;
};

enum class Label : int { cover = 0, stego = 1 };
std::string_view to_string(Label l);

struct LatentSourceConfig {
    std::array<double, kTracks> rho{0.9, 0.9, 0.9};
    double sigma = 0.05;
    /// Per-track mean vectors; an empty entry means 0.5 in every coordinate.
    std::array<std::vector<double>, kTracks> mean;
    std::uint64_t seed = 1;

    void validate(const std::array<std::size_t, kTracks>& dims) const;
    std::string canonical() const;
};

/// Real-valued source vectors, one dims[j]-vector per frame and track.
struct LatentTrajectory {
    std::array<std::size_t, kTracks> dims{};
    std::size_t frames = 0;
    std::array<std::vector<double>, kTracks> values;

    std::span<const double> at(std::size_t t, std::size_t track) const {
        return {values[track].data() + t * dims[track], dims[track]};
    }
};

LatentTrajectory gen_latent_trajectory(const LatentSourceConfig& cfg, const std::array<std::size_t, kTracks>& dims,
                                       std::size_t frames);

using TrackMask = std::array<bool, kTracks>;
inline constexpr TrackMask kAllTracks{true, true, true};

struct EmbedSlot {
    std::uint32_t frame;
    std::uint8_t track;
    friend bool operator==(const EmbedSlot&, const EmbedSlot&) = default;
};

struct StegoSample {
    QisMatrix qis;
    Label label = Label::cover;
    double embedding_rate = 0.0;
    std::vector<std::uint8_t> payload;  // one bit per slot, in slot order
    std::vector<EmbedSlot> slots;
    std::uint64_t seed = 0;          // latent source seed
    std::uint64_t payload_seed = 0;
    std::size_t duration_frames = 0;
};

QisMatrix gen_cover(const SplitVqModel& model, const LatentSourceConfig& cfg, std::size_t frames);

StegoSample gen_stego(const SplitVqModel& model, const LatentSourceConfig& cfg, std::size_t frames, double rate,
                      std::uint64_t payload_seed, const TrackMask& tracks = kAllTracks);

/// Quantizes a trajectory, embedding in frame t with probability frame_rates[t].
/// Every frame consumes one selection draw and one payload bit per track from
/// the payload stream whether or not it is selected, so the embedded slot set
/// for a higher rate is a superset of the set for a lower one.
StegoSample quantize_trajectory(const SplitVqModel& model, const LatentTrajectory& latent,
                                std::span<const double> frame_rates, std::uint64_t payload_seed,
                                const TrackMask& tracks);

// QIS text files -------------------------------------------------------------

std::string qis_to_text(const QisMatrix& qis);
/// Errors: FormatError with the 1-based line of the first problem.
QisMatrix qis_from_text(std::string_view text);
void write_qis(const QisMatrix& qis, const std::filesystem::path& path);
QisMatrix parse_qis(const std::filesystem::path& path);

// Datasets -------------------------------------------------------------------

enum class Split { train, val, test };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct DatasetSpec {
    SplitVqConfig vq;
    LatentSourceConfig latent;  // seed field is replaced per sample
    std::size_t n_per_class = 100;
    /// Per-class validation / test counts; unset means 10% each (rounded down).
    std::optional<std::size_t> n_val, n_test;
    std::size_t frames = 100;
    double rate = 1.0;
    TrackMask tracks = kAllTracks;
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t val_count() const;
    std::size_t test_count() const;
    Split split_for_index(std::size_t i) const;
    std::string canonical() const;
    /// FNV-1a over canonical(); changes whenever any field changes.
    std::string digest() const;
};

struct LabeledQis {
    QisMatrix qis;
    Label label = Label::cover;
};

struct SampleRecord {
    std::string path;
    Label label = Label::cover;
    Split split = Split::train;
    std::uint64_t latent_seed = 0;
    std::uint64_t payload_seed = 0;
};

struct DatasetManifest {
    int version = 1;
    std::string codec_digest;
    std::string config_digest;
    std::size_t n_cover = 0;
    std::size_t n_stego = 0;
    std::size_t duration_frames = 0;
    double embedding_rate = 0.0;
    std::uint64_t master_seed = 0;
    std::uint64_t codebook_seed = 0;
    std::vector<SampleRecord> files;

    std::string to_json() const;
    static DatasetManifest from_json(std::string_view text);
};

/// Sample `i` of the given class, with seeds derived from spec.seed.
LabeledQis make_sample(const SplitVqModel& model, const DatasetSpec& spec, Label label, std::size_t i,
                       SampleRecord* record = nullptr);

struct DatasetSplits {
    std::vector<LabeledQis> train, val, test;
};

/// All 2·n_per_class samples in memory, split as gen_dataset would.
DatasetSplits make_dataset(const SplitVqModel& model, const DatasetSpec& spec);

/// Writes cover_NNNNN.qis / stego_NNNNN.qis plus manifest.json into out_dir.
DatasetManifest gen_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

/// Reads manifest.json and every listed QIS file.
DatasetSplits load_dataset(const std::filesystem::path& dir, DatasetManifest* manifest = nullptr);

}  // namespace qislab
