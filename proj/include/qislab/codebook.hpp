#pragma once

// Split-VQ codebooks, complementary sub-codebook partitions and single-index
// QIM embed/extract.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qislab/common.hpp"

namespace qislab {

inline constexpr std::size_t kTracks = 3;

/// K×dim vector-quantization codebook for one split track.
class Codebook {
public:
    Codebook() = default;
    /// Validates the invariants: K ≥ 2, dim ≥ 1, finite entries, distinct rows.
    Codebook(int track, std::size_t dim, std::vector<double> vectors);

    int track() const noexcept { return track_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return dim_ == 0 ? 0 : vectors_.size() / dim_; }
    std::span<const double> row(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }
    const std::vector<double>& data() const noexcept { return vectors_; }

    friend bool operator==(const Codebook&, const Codebook&) = default;

private:
    int track_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> vectors_;
};

enum class PartitionMode { balanced_random, neighbor_aware };

PartitionMode parse_partition_mode(std::string_view s);
std::string_view to_string(PartitionMode m);

/// Two-way division of a codebook. membership[i] == 0 puts entry i in L1,
/// 1 puts it in L2.
struct CnvPartition {
    int codebook_id = 0;
    std::vector<std::uint8_t> membership;

    std::size_t size() const noexcept { return membership.size(); }
    std::array<std::size_t, 2> class_counts() const;
    friend bool operator==(const CnvPartition&, const CnvPartition&) = default;
};

struct SplitVqConfig {
    std::array<std::size_t, kTracks> sizes{128, 32, 32};
    std::array<std::size_t, kTracks> dims{10, 5, 5};
    PartitionMode mode = PartitionMode::neighbor_aware;
    std::uint64_t seed = 20190101;

    /// Stable text form; feeds the dataset config digest.
    std::string canonical() const;
};

struct SplitVqModel {
    std::array<Codebook, kTracks> codebooks;
    std::array<CnvPartition, kTracks> partitions;

    std::array<std::size_t, kTracks> sizes() const;
    /// Digest over every codebook coordinate and membership bit.
    std::string digest() const;
};

SplitVqModel build_split_vq(const SplitVqConfig& cfg);

Codebook build_synthetic_codebook(int track, std::size_t dim, std::size_t size, std::uint64_t seed);

CnvPartition cnv_partition(const Codebook& cb, PartitionMode mode, std::uint64_t seed);

/// Nearest entry by Euclidean distance; ties go to the lowest index.
std::size_t quantize_full(std::span<const double> x, const Codebook& cb);

/// Nearest entry among those whose membership equals `bit`.
std::size_t quantize_sub(std::span<const double> x, const Codebook& cb, const CnvPartition& part, int bit);

/// QIM embed: the index chosen encodes `bit` through its sub-codebook.
inline std::size_t qim_embed_index(std::span<const double> x, const Codebook& cb,
                                   const CnvPartition& part, int bit) {
    return quantize_sub(x, cb, part, bit);
}

int qim_extract_bit(std::size_t index, const CnvPartition& part);

struct PartitionReport {
    enum class Code { ok, size_mismatch, invalid_value, empty_class, unbalanced };
    bool pass = false;
    bool disjoint = false;
    bool covering = false;
    std::array<std::size_t, 2> counts{0, 0};
    std::vector<Code> failures;

    static std::string_view code_name(Code c);
};

/// Structural audit of a partition against its codebook. Never throws.
/// `require_balanced` adds the |L1| = |L2| check for even K.
PartitionReport verify_partition(const CnvPartition& part, const Codebook& cb,
                                 bool require_balanced = false);

// Text serialization -------------------------------------------------------

std::string codebook_to_text(const Codebook& cb);
Codebook codebook_from_text(std::string_view text);
std::string partition_to_text(const CnvPartition& part);
CnvPartition partition_from_text(std::string_view text, int codebook_id = 0);

void write_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook read_codebook(const std::filesystem::path& path);
void write_partition(const CnvPartition& part, const std::filesystem::path& path);
CnvPartition read_partition(const std::filesystem::path& path, int codebook_id = 0);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace qislab
