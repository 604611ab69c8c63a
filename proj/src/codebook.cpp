#include "qislab/codebook.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace qislab {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        const double diff = a[d] - b[d];
        acc += diff * diff;
    }
    return acc;
}

void check_query(std::span<const double> x, const Codebook& cb) {
    if (x.size() != cb.dim())
        throw InvalidArgument("query has dimension " + std::to_string(x.size()) +
                              ", codebook expects " + std::to_string(cb.dim()));
}

}  // namespace

Codebook::Codebook(int track, std::size_t dim, std::vector<double> vectors)
    : track_(track), dim_(dim), vectors_(std::move(vectors)) {
    require(dim_ >= 1, "codebook dim must be >= 1");
    require(vectors_.size() % dim_ == 0, "codebook data is not a whole number of rows");
    require(size() >= 2, "codebook needs at least 2 entries");
    for (double v : vectors_) require(std::isfinite(v), "codebook entries must be finite");
    std::set<std::vector<double>> seen;
    for (std::size_t i = 0; i < size(); ++i) {
        auto r = row(i);
        if (!seen.emplace(r.begin(), r.end()).second)
            throw InvalidArgument("codebook row " + std::to_string(i) + " duplicates an earlier row");
    }
}

PartitionMode parse_partition_mode(std::string_view s) {
    if (s == "balanced-random") return PartitionMode::balanced_random;
    if (s == "neighbor-aware") return PartitionMode::neighbor_aware;
    throw InvalidArgument("unknown partition mode '" + std::string(s) + "'");
}

std::string_view to_string(PartitionMode m) {
    return m == PartitionMode::balanced_random ? "balanced-random" : "neighbor-aware";
}

std::array<std::size_t, 2> CnvPartition::class_counts() const {
    std::array<std::size_t, 2> c{0, 0};
    for (auto m : membership)
        if (m <= 1) ++c[m];
    return c;
}

std::string SplitVqConfig::canonical() const {
    std::ostringstream os;
    os << "splitvq sizes=" << sizes[0] << ',' << sizes[1] << ',' << sizes[2]
       << " dims=" << dims[0] << ',' << dims[1] << ',' << dims[2]
       << " mode=" << to_string(mode) << " seed=" << seed;
    return os.str();
}

std::array<std::size_t, kTracks> SplitVqModel::sizes() const {
    return {codebooks[0].size(), codebooks[1].size(), codebooks[2].size()};
}

std::string SplitVqModel::digest() const {
    Fnv1a h;
    for (std::size_t j = 0; j < kTracks; ++j) {
        h.update(codebook_to_text(codebooks[j]));
        h.update(partition_to_text(partitions[j]));
    }
    return h.hex();
}

SplitVqModel build_split_vq(const SplitVqConfig& cfg) {
    SplitVqModel m;
    for (std::size_t j = 0; j < kTracks; ++j) {
        m.codebooks[j] = build_synthetic_codebook(static_cast<int>(j), cfg.dims[j], cfg.sizes[j],
                                                  derive_seed(cfg.seed, 1, j));
        m.partitions[j] = cnv_partition(m.codebooks[j], cfg.mode, derive_seed(cfg.seed, 2, j));
    }
    return m;
}

Codebook build_synthetic_codebook(int track, std::size_t dim, std::size_t size, std::uint64_t seed) {
    require(size >= 2, "codebook size must be >= 2");
    require(dim >= 1, "codebook dim must be >= 1");
    Rng rng(seed);
    std::set<std::vector<double>> seen;
    std::vector<double> data;
    data.reserve(dim * size);
    while (seen.size() < size) {
        std::vector<double> r(dim);
        for (auto& v : r) v = rng.uniform();
        if (seen.insert(r).second) data.insert(data.end(), r.begin(), r.end());
    }
    return Codebook(track, dim, std::move(data));
}

CnvPartition cnv_partition(const Codebook& cb, PartitionMode mode, std::uint64_t seed) {
    const std::size_t k = cb.size();
    require(k >= 2, "partition needs a codebook with at least 2 entries");
    CnvPartition part;
    part.codebook_id = cb.track();
    part.membership.assign(k, 0);
    Rng rng(seed);

    if (mode == PartitionMode::balanced_random) {
        if (k % 2 != 0)
            throw InvalidArgument("balanced partition needs an even codebook size, got " + std::to_string(k));
        std::vector<std::size_t> order(k);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (std::size_t i = k / 2; i < k; ++i) part.membership[order[i]] = 1;
        return part;
    }

    // Neighbor-aware: greedily match closest pairs, put the two members of each
    // pair on opposite sides, then flip pair orientations while that increases
    // the number of entries whose nearest neighbor sits in the other class.
    std::vector<double> dist(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) dist[i * k + j] = dist[j * k + i] = squared_distance(cb.row(i), cb.row(j));
    // Edge order is (d, lower index, higher index); the greedy matching takes
    // the smallest unmatched edge each step, found via per-vertex best edges.
    const auto closer = [&](std::size_t i, std::size_t a, std::size_t b) {
        const double da = dist[i * k + a], db = dist[i * k + b];
        if (da != db) return da < db;
        const auto ka = std::minmax(i, a), kb = std::minmax(i, b);
        return ka < kb;
    };
    constexpr std::size_t kUnmatched = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> mate(k, kUnmatched), best(k, kUnmatched);
    const auto refresh = [&](std::size_t i) {
        best[i] = kUnmatched;
        for (std::size_t j = 0; j < k; ++j)
            if (j != i && mate[j] == kUnmatched && (best[i] == kUnmatched || closer(i, j, best[i]))) best[i] = j;
    };
    for (std::size_t i = 0; i < k; ++i) refresh(i);
    std::vector<std::array<std::size_t, 2>> pairs;
    while (pairs.size() < k / 2) {
        std::size_t u = kUnmatched;
        for (std::size_t i = 0; i < k; ++i) {
            if (mate[i] != kUnmatched) continue;
            if (u == kUnmatched) {
                u = i;
                continue;
            }
            const double di = dist[i * k + best[i]], du = dist[u * k + best[u]];
            if (di < du || (di == du && std::minmax(i, best[i]) < std::minmax(u, best[u]))) u = i;
        }
        const auto [lo, hi] = std::minmax(u, best[u]);
        mate[lo] = hi;
        mate[hi] = lo;
        pairs.push_back({lo, hi});
        for (std::size_t i = 0; i < k; ++i)
            if (mate[i] == kUnmatched && (best[i] == lo || best[i] == hi)) refresh(i);
    }
    for (const auto& p : pairs) {
        const int b = rng.bit();
        part.membership[p[0]] = static_cast<std::uint8_t>(b);
        part.membership[p[1]] = static_cast<std::uint8_t>(1 - b);
    }

    std::vector<std::size_t> nn(k, 0);
    for (std::size_t i = 0; i < k; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j)
            if (j != i && dist[i * k + j] < best) {
                best = dist[i * k + j];
                nn[i] = j;
            }
    }
    std::vector<std::vector<std::size_t>> nn_of(k);  // reverse map: who has me as NN
    for (std::size_t i = 0; i < k; ++i) nn_of[nn[i]].push_back(i);

    const std::size_t odd = std::find(mate.begin(), mate.end(), kUnmatched) - mate.begin();
    if (odd < k) part.membership[odd] = static_cast<std::uint8_t>(1 - part.membership[nn[odd]]);

    auto satisfied = [&](std::size_t i) { return part.membership[i] != part.membership[nn[i]]; };
    // Entries whose satisfaction can change when a pair flips.
    std::vector<std::vector<std::size_t>> touched(pairs.size());
    for (std::size_t q = 0; q < pairs.size(); ++q) {
        auto& t = touched[q];
        t = {pairs[q][0], pairs[q][1]};
        for (auto m : pairs[q])
            for (auto i : nn_of[m]) t.push_back(i);
        std::sort(t.begin(), t.end());
        t.erase(std::unique(t.begin(), t.end()), t.end());
    }
    for (int pass = 0; pass < 64; ++pass) {
        bool improved = false;
        for (std::size_t q = 0; q < pairs.size(); ++q) {
            const auto& p = pairs[q];
            long before = 0;
            for (auto i : touched[q]) before += satisfied(i);
            for (auto m : p) part.membership[m] ^= 1;
            long after = 0;
            for (auto i : touched[q]) after += satisfied(i);
            if (after > before) {
                improved = true;
            } else {
                for (auto m : p) part.membership[m] ^= 1;
            }
        }
        if (!improved) break;
    }
    return part;
}

std::size_t quantize_full(std::span<const double> x, const Codebook& cb) {
    check_query(x, cb);
    std::size_t best_i = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cb.size(); ++i) {
        const double d = squared_distance(x, cb.row(i));
        if (d < best) {
            best = d;
            best_i = i;
        }
    }
    return best_i;
}

std::size_t quantize_sub(std::span<const double> x, const Codebook& cb, const CnvPartition& part, int bit) {
    check_query(x, cb);
    require(bit == 0 || bit == 1, "bit must be 0 or 1");
    require(part.size() == cb.size(), "partition size does not match codebook");
    std::size_t best_i = cb.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cb.size(); ++i) {
        if (part.membership[i] != bit) continue;
        const double d = squared_distance(x, cb.row(i));
        if (d < best) {
            best = d;
            best_i = i;
        }
    }
    require(best_i < cb.size(), "sub-codebook " + std::to_string(bit) + " is empty");
    return best_i;
}

int qim_extract_bit(std::size_t index, const CnvPartition& part) {
    if (index >= part.size())
        throw InvalidArgument("index " + std::to_string(index) + " out of range for partition of size " +
                              std::to_string(part.size()));
    return part.membership[index];
}

std::string_view PartitionReport::code_name(Code c) {
    switch (c) {
        case Code::ok: return "ok";
        case Code::size_mismatch: return "size-mismatch";
        case Code::invalid_value: return "invalid-value";
        case Code::empty_class: return "empty-class";
        case Code::unbalanced: return "unbalanced";
    }
    return "?";
}

PartitionReport verify_partition(const CnvPartition& part, const Codebook& cb, bool require_balanced) {
    PartitionReport r;
    // Disjointness is structural: one membership value per index.
    r.disjoint = true;
    bool values_ok = true;
    for (auto m : part.membership)
        if (m > 1) values_ok = false;
    r.covering = values_ok && part.size() == cb.size();
    r.counts = part.class_counts();
    if (part.size() != cb.size()) r.failures.push_back(PartitionReport::Code::size_mismatch);
    if (!values_ok) r.failures.push_back(PartitionReport::Code::invalid_value);
    if (r.counts[0] == 0 || r.counts[1] == 0) r.failures.push_back(PartitionReport::Code::empty_class);
    if (require_balanced && part.size() % 2 == 0 && r.counts[0] != r.counts[1])
        r.failures.push_back(PartitionReport::Code::unbalanced);
    r.pass = r.failures.empty();
    return r;
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

namespace {

struct Header {
    std::string kind;
    std::vector<std::pair<std::string, std::string>> fields;

    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : fields)
            if (k == key) return v;
        throw FormatError(1, "header is missing '" + key + "'");
    }
};

Header parse_header(const std::string& line, std::string_view expected_kind) {
    auto tokens = split(trim(line), ' ');
    if (tokens.size() < 2 || tokens[0] != expected_kind || tokens[1] != "v1")
        throw FormatError(1, "expected header '" + std::string(expected_kind) + " v1 ...'");
    Header h;
    h.kind = tokens[0];
    for (std::size_t i = 2; i < tokens.size(); ++i) {
        if (tokens[i].empty()) continue;
        auto eq = tokens[i].find('=');
        if (eq == std::string::npos) throw FormatError(1, "malformed header field '" + tokens[i] + "'");
        h.fields.emplace_back(tokens[i].substr(0, eq), tokens[i].substr(eq + 1));
    }
    return h;
}

long long header_int(const Header& h, const std::string& key) {
    long long v = 0;
    if (!parse_int(h.get(key), v) || v < 0) throw FormatError(1, "header field '" + key + "' is not a count");
    return v;
}

std::vector<std::string> body_lines(std::string_view text, std::string& header) {
    std::vector<std::string> lines;
    std::istringstream is{std::string(text)};
    std::string line;
    if (!std::getline(is, header)) throw FormatError(1, "empty file");
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    return lines;
}

}  // namespace

std::string codebook_to_text(const Codebook& cb) {
    std::string out = "#cbk v1 track=" + std::to_string(cb.track()) + " dim=" + std::to_string(cb.dim()) +
                      " size=" + std::to_string(cb.size()) + "\n";
    for (std::size_t i = 0; i < cb.size(); ++i) {
        auto r = cb.row(i);
        for (std::size_t d = 0; d < r.size(); ++d) {
            if (d) out += ' ';
            out += format_double(r[d]);
        }
        out += '\n';
    }
    return out;
}

Codebook codebook_from_text(std::string_view text) {
    std::string header;
    auto lines = body_lines(text, header);
    const Header h = parse_header(header, "#cbk");
    const auto track = header_int(h, "track");
    const auto dim = header_int(h, "dim");
    const auto size = header_int(h, "size");
    if (static_cast<long long>(lines.size()) != size)
        throw FormatError(lines.size() + 2, "expected " + std::to_string(size) + " rows, found " +
                                                std::to_string(lines.size()));
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(dim * size));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::istringstream ls(lines[i]);
        std::string tok;
        long long n = 0;
        while (ls >> tok) {
            double v = 0;
            if (!parse_double(tok, v)) throw FormatError(i + 2, "not a finite decimal: '" + tok + "'");
            data.push_back(v);
            ++n;
        }
        if (n != dim) throw FormatError(i + 2, "expected " + std::to_string(dim) + " values");
    }
    try {
        return Codebook(static_cast<int>(track), static_cast<std::size_t>(dim), std::move(data));
    } catch (const InvalidArgument& e) {
        throw FormatError(0, e.what());
    }
}

std::string partition_to_text(const CnvPartition& part) {
    std::string out = "#cnv v1 size=" + std::to_string(part.size()) + "\n";
    for (auto m : part.membership) {
        out += static_cast<char>('0' + m);
        out += '\n';
    }
    return out;
}

CnvPartition partition_from_text(std::string_view text, int codebook_id) {
    std::string header;
    auto lines = body_lines(text, header);
    const Header h = parse_header(header, "#cnv");
    const auto size = header_int(h, "size");
    if (static_cast<long long>(lines.size()) != size)
        throw FormatError(lines.size() + 2, "expected " + std::to_string(size) + " entries, found " +
                                                std::to_string(lines.size()));
    CnvPartition p;
    p.codebook_id = codebook_id;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto t = trim(lines[i]);
        if (t != "0" && t != "1") throw FormatError(i + 2, "membership must be 0 or 1");
        p.membership.push_back(static_cast<std::uint8_t>(t[0] - '0'));
    }
    return p;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void write_codebook(const Codebook& cb, const std::filesystem::path& path) {
    write_text_file(path, codebook_to_text(cb));
}

Codebook read_codebook(const std::filesystem::path& path) { return codebook_from_text(read_text_file(path)); }

void write_partition(const CnvPartition& part, const std::filesystem::path& path) {
    write_text_file(path, partition_to_text(part));
}

CnvPartition read_partition(const std::filesystem::path& path, int codebook_id) {
    return partition_from_text(read_text_file(path), codebook_id);
}

}  // namespace qislab
