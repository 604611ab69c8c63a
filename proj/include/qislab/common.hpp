#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qislab {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base of every domain error raised by the library. The CLI maps these to
/// exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed text file. `line()` is 1-based; 0 when the whole file is at fault.
class FormatError : public Error {
public:
    FormatError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Bad frame on a detector input. `frame_ordinal()` is 0-based.
class StreamError : public Error {
public:
    StreamError(std::uint64_t frame_ordinal, const std::string& what)
        : Error("frame " + std::to_string(frame_ordinal) + ": " + what),
          frame_ordinal_(frame_ordinal) {}
    std::uint64_t frame_ordinal() const noexcept { return frame_ordinal_; }

private:
    std::uint64_t frame_ordinal_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for (stream, index) under a master seed. Distinct (stream, index)
/// pairs give unrelated seeds.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ splitmix64(stream)) + index);
}

/// mt19937_64 with distribution code written out here: the std distributions
/// are implementation-defined, which would break byte-identical outputs across
/// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t index(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    int bit() { return static_cast<int>(engine_() >> 63); }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a, used for config and codebook digests.
class Fnv1a {
public:
    void update(std::string_view bytes) {
        for (unsigned char c : bytes) {
            hash_ ^= c;
            hash_ *= 0x100000001b3ULL;
        }
    }
    std::uint64_t value() const { return hash_; }
    std::string hex() const;

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Worker cap from QIS_LAB_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_threads();

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Parse a whole token as an integer / double; false on trailing garbage.
bool parse_int(std::string_view s, long long& out);
bool parse_double(std::string_view s, double& out);

std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);

}  // namespace qislab
