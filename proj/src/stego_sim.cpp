#include "qislab/stego_sim.hpp"

#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "qislab/parallel.hpp"

namespace qislab {

void QisMatrix::validate() const {
    for (std::size_t t = 0; t < frames.size(); ++t)
        for (std::size_t j = 0; j < kTracks; ++j)
            if (frames[t][j] < 0 || static_cast<std::size_t>(frames[t][j]) >= vocab[j])
                throw InvalidArgument("frame " + std::to_string(t) + " track " + std::to_string(j) + ": index " +
                                      std::to_string(frames[t][j]) + " outside vocabulary of " +
                                      std::to_string(vocab[j]));
}

std::string_view to_string(Label l) { return l == Label::cover ? "cover" : "stego"; }

void LatentSourceConfig::validate(const std::array<std::size_t, kTracks>& dims) const {
    for (double r : rho) require(r >= 0.0 && r < 1.0, "rho must lie in [0, 1)");
    // sigma = 0 is allowed: it yields the constant trajectory x_t = mean.
    require(std::isfinite(sigma) && sigma >= 0.0, "sigma must be finite and >= 0");
    for (std::size_t j = 0; j < kTracks; ++j) {
        require(mean[j].empty() || mean[j].size() == dims[j],
                "mean vector for track " + std::to_string(j) + " has wrong length");
        for (double m : mean[j]) require(std::isfinite(m), "mean must be finite");
    }
}

std::string LatentSourceConfig::canonical() const {
    std::string s = "latent rho=";
    for (std::size_t j = 0; j < kTracks; ++j) s += (j ? "," : "") + format_double(rho[j]);
    s += " sigma=" + format_double(sigma) + " mean=";
    for (std::size_t j = 0; j < kTracks; ++j) {
        s += j ? "|" : "";
        if (mean[j].empty()) s += "default";
        for (std::size_t d = 0; d < mean[j].size(); ++d) s += (d ? "," : "") + format_double(mean[j][d]);
    }
    return s;
}

LatentTrajectory gen_latent_trajectory(const LatentSourceConfig& cfg, const std::array<std::size_t, kTracks>& dims,
                                       std::size_t frames) {
    cfg.validate(dims);
    LatentTrajectory out;
    out.dims = dims;
    out.frames = frames;
    Rng rng(cfg.seed);
    for (std::size_t j = 0; j < kTracks; ++j) {
        const std::size_t dim = dims[j];
        std::vector<double> mean = cfg.mean[j].empty() ? std::vector<double>(dim, 0.5) : cfg.mean[j];
        const double rho = cfg.rho[j];
        // Start in the stationary distribution so no burn-in is needed.
        const double stationary_sd = cfg.sigma / std::sqrt(1.0 - rho * rho);
        auto& v = out.values[j];
        v.resize(frames * dim);
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double eps = rng.normal();
                if (t == 0) {
                    v[d] = mean[d] + stationary_sd * eps;
                } else {
                    const double prev = v[(t - 1) * dim + d];
                    v[t * dim + d] = mean[d] + rho * (prev - mean[d]) + cfg.sigma * eps;
                }
            }
        }
    }
    return out;
}

StegoSample quantize_trajectory(const SplitVqModel& model, const LatentTrajectory& latent,
                                std::span<const double> frame_rates, std::uint64_t payload_seed,
                                const TrackMask& tracks) {
    require(frame_rates.size() == latent.frames, "one embedding rate per frame is required");
    for (std::size_t j = 0; j < kTracks; ++j)
        require(latent.dims[j] == model.codebooks[j].dim(), "latent dims do not match the codebooks");
    StegoSample s;
    s.qis.vocab = model.sizes();
    s.qis.frames.resize(latent.frames);
    s.duration_frames = latent.frames;
    s.payload_seed = payload_seed;
    Rng rng(payload_seed);
    for (std::size_t t = 0; t < latent.frames; ++t) {
        const double u = rng.uniform();
        std::array<int, kTracks> bits{};
        for (auto& b : bits) b = rng.bit();
        const bool selected = u < frame_rates[t];
        for (std::size_t j = 0; j < kTracks; ++j) {
            const auto& cb = model.codebooks[j];
            std::size_t idx;
            if (selected && tracks[j]) {
                idx = qim_embed_index(latent.at(t, j), cb, model.partitions[j], bits[j]);
                s.payload.push_back(static_cast<std::uint8_t>(bits[j]));
                s.slots.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint8_t>(j)});
            } else {
                idx = quantize_full(latent.at(t, j), cb);
            }
            s.qis.frames[t][j] = static_cast<std::int32_t>(idx);
        }
    }
    return s;
}

namespace {

std::array<std::size_t, kTracks> model_dims(const SplitVqModel& model) {
    return {model.codebooks[0].dim(), model.codebooks[1].dim(), model.codebooks[2].dim()};
}

}  // namespace

QisMatrix gen_cover(const SplitVqModel& model, const LatentSourceConfig& cfg, std::size_t frames) {
    const auto latent = gen_latent_trajectory(cfg, model_dims(model), frames);
    QisMatrix q;
    q.vocab = model.sizes();
    q.frames.resize(frames);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t j = 0; j < kTracks; ++j)
            q.frames[t][j] = static_cast<std::int32_t>(quantize_full(latent.at(t, j), model.codebooks[j]));
    return q;
}

StegoSample gen_stego(const SplitVqModel& model, const LatentSourceConfig& cfg, std::size_t frames, double rate,
                      std::uint64_t payload_seed, const TrackMask& tracks) {
    require(rate >= 0.0 && rate <= 1.0, "embedding rate must lie in [0, 1]");
    const auto latent = gen_latent_trajectory(cfg, model_dims(model), frames);
    const std::vector<double> rates(frames, rate);
    StegoSample s = quantize_trajectory(model, latent, rates, payload_seed, tracks);
    s.label = Label::stego;
    s.embedding_rate = rate;
    s.seed = cfg.seed;
    return s;
}

// ---------------------------------------------------------------------------
// QIS files
// ---------------------------------------------------------------------------

std::string qis_to_text(const QisMatrix& qis) {
    std::string out = "#qis v1 tracks=3 vocab=" + std::to_string(qis.vocab[0]) + "," + std::to_string(qis.vocab[1]) +
                      "," + std::to_string(qis.vocab[2]) + " frame_rate=" + std::to_string(qis.frame_rate) + "\n";
    out.reserve(out.size() + qis.frames.size() * 10);
    for (const auto& f : qis.frames) {
        out += std::to_string(f[0]);
        out += ',';
        out += std::to_string(f[1]);
        out += ',';
        out += std::to_string(f[2]);
        out += '\n';
    }
    return out;
}

QisMatrix qis_from_text(std::string_view text) {
    QisMatrix q;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool have_header = false;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!have_header) {
            auto tok = split(trim(line), ' ');
            if (tok.size() != 5 || tok[0] != "#qis" || tok[1] != "v1" || tok[2] != "tracks=3" ||
                tok[3].rfind("vocab=", 0) != 0 || tok[4].rfind("frame_rate=", 0) != 0)
                throw FormatError(line_no, "expected '#qis v1 tracks=3 vocab=a,b,c frame_rate=r'");
            auto vocab = split(std::string_view(tok[3]).substr(6), ',');
            if (vocab.size() != kTracks) throw FormatError(line_no, "vocab needs 3 sizes");
            for (std::size_t j = 0; j < kTracks; ++j) {
                long long v = 0;
                if (!parse_int(vocab[j], v) || v < 1) throw FormatError(line_no, "bad vocab size '" + vocab[j] + "'");
                q.vocab[j] = static_cast<std::size_t>(v);
            }
            long long fr = 0;
            if (!parse_int(std::string_view(tok[4]).substr(11), fr) || fr < 1)
                throw FormatError(line_no, "bad frame_rate");
            q.frame_rate = static_cast<int>(fr);
            have_header = true;
            continue;
        }
        if (trim(line).empty()) {
            // Only trailing blank lines are tolerated.
            if (trim(text.substr(std::min(pos, text.size()))).empty()) break;
            throw FormatError(line_no, "blank line inside frame data");
        }
        auto fields = split(line, ',');
        if (fields.size() != kTracks) throw FormatError(line_no, "expected 3 comma-separated indices");
        Frame f{};
        for (std::size_t j = 0; j < kTracks; ++j) {
            long long v = 0;
            if (!parse_int(trim(fields[j]), v)) throw FormatError(line_no, "not an integer: '" + fields[j] + "'");
            if (v < 0 || static_cast<unsigned long long>(v) >= q.vocab[j])
                throw FormatError(line_no, "index " + std::to_string(v) + " out of range for vocab " +
                                               std::to_string(q.vocab[j]));
            f[j] = static_cast<std::int32_t>(v);
        }
        q.frames.push_back(f);
    }
    if (!have_header) throw FormatError(1, "missing header");
    return q;
}

void write_qis(const QisMatrix& qis, const std::filesystem::path& path) { write_text_file(path, qis_to_text(qis)); }

QisMatrix parse_qis(const std::filesystem::path& path) { return qis_from_text(read_text_file(path)); }

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw FormatError(0, "unknown split '" + std::string(s) + "'");
}

void DatasetSpec::validate() const {
    require(n_per_class >= 1, "n_per_class must be >= 1");
    require(rate >= 0.0 && rate <= 1.0, "embedding rate must lie in [0, 1]");
    require(val_count() + test_count() <= n_per_class, "validation + test counts exceed n_per_class");
    latent.validate(vq.dims);
}

std::size_t DatasetSpec::val_count() const { return n_val.value_or(n_per_class / 10); }
std::size_t DatasetSpec::test_count() const { return n_test.value_or(n_per_class / 10); }

Split DatasetSpec::split_for_index(std::size_t i) const {
    const std::size_t n_train = n_per_class - val_count() - test_count();
    if (i < n_train) return Split::train;
    if (i < n_train + val_count()) return Split::val;
    return Split::test;
}

std::string DatasetSpec::canonical() const {
    std::ostringstream os;
    os << vq.canonical() << '\n'
       << latent.canonical() << '\n'
       << "n_per_class=" << n_per_class << " n_val=" << val_count() << " n_test=" << test_count()
       << " frames=" << frames << " rate=" << format_double(rate) << " tracks=" << tracks[0] << tracks[1]
       << tracks[2] << " seed=" << seed;
    return os.str();
}

std::string DatasetSpec::digest() const {
    Fnv1a h;
    h.update(canonical());
    return h.hex();
}

namespace {

constexpr std::uint64_t kCoverLatentStream = 10;
constexpr std::uint64_t kStegoLatentStream = 11;
constexpr std::uint64_t kPayloadStream = 12;

std::string sample_file_name(Label label, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05zu.qis", label == Label::cover ? "cover" : "stego", i);
    return buf;
}

}  // namespace

LabeledQis make_sample(const SplitVqModel& model, const DatasetSpec& spec, Label label, std::size_t i,
                       SampleRecord* record) {
    LatentSourceConfig cfg = spec.latent;
    LabeledQis out;
    out.label = label;
    std::uint64_t payload_seed = 0;
    if (label == Label::cover) {
        cfg.seed = derive_seed(spec.seed, kCoverLatentStream, i);
        out.qis = gen_cover(model, cfg, spec.frames);
    } else {
        cfg.seed = derive_seed(spec.seed, kStegoLatentStream, i);
        payload_seed = derive_seed(spec.seed, kPayloadStream, i);
        out.qis = gen_stego(model, cfg, spec.frames, spec.rate, payload_seed, spec.tracks).qis;
    }
    if (record) {
        record->path = sample_file_name(label, i);
        record->label = label;
        record->split = spec.split_for_index(i);
        record->latent_seed = cfg.seed;
        record->payload_seed = payload_seed;
    }
    return out;
}

DatasetSplits make_dataset(const SplitVqModel& model, const DatasetSpec& spec) {
    spec.validate();
    const std::size_t n = spec.n_per_class;
    std::vector<LabeledQis> all(2 * n);
    parallel_for(2 * n, [&](std::size_t k) {
        const Label label = k < n ? Label::cover : Label::stego;
        all[k] = make_sample(model, spec, label, k % n);
    });
    DatasetSplits out;
    // Interleave classes so every split stays balanced and ordered.
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 2; ++c) {
            auto& dst = spec.split_for_index(i) == Split::train ? out.train
                        : spec.split_for_index(i) == Split::val ? out.val
                                                                : out.test;
            dst.push_back(std::move(all[c * n + i]));
        }
    }
    return out;
}

std::string DatasetManifest::to_json() const {
    nlohmann::ordered_json j;
    j["version"] = version;
    j["codec_digest"] = codec_digest;
    j["config_digest"] = config_digest;
    j["n_cover"] = n_cover;
    j["n_stego"] = n_stego;
    j["duration_frames"] = duration_frames;
    j["embedding_rate"] = embedding_rate;
    j["seeds"] = {{"master", master_seed}, {"codebook", codebook_seed}};
    auto files_json = nlohmann::ordered_json::array();
    for (const auto& f : files) {
        files_json.push_back({{"path", f.path},
                              {"label", std::string(to_string(f.label))},
                              {"split", std::string(to_string(f.split))},
                              {"latent_seed", f.latent_seed},
                              {"payload_seed", f.payload_seed}});
    }
    j["files"] = std::move(files_json);
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(std::string_view text) {
    DatasetManifest m;
    try {
        const auto j = nlohmann::json::parse(text);
        m.version = j.at("version").get<int>();
        if (m.version != 1) throw FormatError(0, "unsupported manifest version " + std::to_string(m.version));
        m.codec_digest = j.at("codec_digest").get<std::string>();
        m.config_digest = j.at("config_digest").get<std::string>();
        m.n_cover = j.at("n_cover").get<std::size_t>();
        m.n_stego = j.at("n_stego").get<std::size_t>();
        m.duration_frames = j.at("duration_frames").get<std::size_t>();
        m.embedding_rate = j.at("embedding_rate").get<double>();
        m.master_seed = j.at("seeds").at("master").get<std::uint64_t>();
        m.codebook_seed = j.at("seeds").at("codebook").get<std::uint64_t>();
        for (const auto& f : j.at("files")) {
            SampleRecord r;
            r.path = f.at("path").get<std::string>();
            const auto label = f.at("label").get<std::string>();
            if (label != "cover" && label != "stego") throw FormatError(0, "bad label '" + label + "'");
            r.label = label == "cover" ? Label::cover : Label::stego;
            r.split = parse_split(f.at("split").get<std::string>());
            r.latent_seed = f.at("latent_seed").get<std::uint64_t>();
            r.payload_seed = f.at("payload_seed").get<std::uint64_t>();
            m.files.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, std::string("manifest: ") + e.what());
    }
    return m;
}

DatasetManifest gen_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const SplitVqModel model = build_split_vq(spec.vq);
    const std::size_t n = spec.n_per_class;
    std::vector<SampleRecord> records(2 * n);
    parallel_for(2 * n, [&](std::size_t k) {
        const Label label = k < n ? Label::cover : Label::stego;
        const auto s = make_sample(model, spec, label, k % n, &records[k]);
        write_qis(s.qis, out_dir / records[k].path);
    });

    DatasetManifest m;
    m.codec_digest = model.digest();
    m.config_digest = spec.digest();
    m.n_cover = n;
    m.n_stego = n;
    m.duration_frames = spec.frames;
    m.embedding_rate = spec.rate;
    m.master_seed = spec.seed;
    m.codebook_seed = spec.vq.seed;
    m.files = std::move(records);
    write_text_file(out_dir / "manifest.json", m.to_json());
    return m;
}

DatasetSplits load_dataset(const std::filesystem::path& dir, DatasetManifest* manifest) {
    const auto m = DatasetManifest::from_json(read_text_file(dir / "manifest.json"));
    std::vector<LabeledQis> all(m.files.size());
    parallel_for(m.files.size(), [&](std::size_t k) {
        all[k].qis = parse_qis(dir / m.files[k].path);
        all[k].label = m.files[k].label;
    });
    // Re-interleave: manifest lists covers then stegos; pair them by index.
    DatasetSplits out;
    std::vector<std::size_t> covers, stegos;
    for (std::size_t k = 0; k < m.files.size(); ++k) (m.files[k].label == Label::cover ? covers : stegos).push_back(k);
    const std::size_t pairs = std::max(covers.size(), stegos.size());
    auto place = [&](std::size_t k) {
        auto& dst = m.files[k].split == Split::train ? out.train : m.files[k].split == Split::val ? out.val : out.test;
        dst.push_back(std::move(all[k]));
    };
    for (std::size_t i = 0; i < pairs; ++i) {
        if (i < covers.size()) place(covers[i]);
        if (i < stegos.size()) place(stegos[i]);
    }
    if (manifest) *manifest = m;
    return out;
}

}  // namespace qislab
