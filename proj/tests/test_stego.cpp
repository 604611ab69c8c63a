#include <doctest.h>

#include <filesystem>
#include <set>

#include "qislab/stego_sim.hpp"

using namespace qislab;

namespace {

const SplitVqModel& model() {
    static const SplitVqModel m = build_split_vq(SplitVqConfig{});
    return m;
}

LatentSourceConfig latent(std::uint64_t seed) {
    LatentSourceConfig c;
    c.seed = seed;
    return c;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("qislab_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE("stego") {
    TEST_CASE("latent AR(1): lag-one correlation and stationary variance") {
        LatentSourceConfig c = latent(3);
        c.rho = {0.8, 0.5, 0.0};
        c.sigma = 0.1;
        const std::size_t T = 40000;
        const auto tr = gen_latent_trajectory(c, {1, 1, 1}, T);
        for (std::size_t j = 0; j < kTracks; ++j) {
            const auto& v = tr.values[j];
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= T;
            double var = 0.0, cov = 0.0;
            for (std::size_t t = 0; t < T; ++t) var += (v[t] - mean) * (v[t] - mean);
            for (std::size_t t = 1; t < T; ++t) cov += (v[t] - mean) * (v[t - 1] - mean);
            var /= T;
            cov /= T - 1;
            const double rho = c.rho[j];
            CHECK(mean == doctest::Approx(0.5).epsilon(0.02));
            CHECK(var == doctest::Approx(0.01 / (1 - rho * rho)).epsilon(0.06));
            CHECK(std::abs(cov / var - rho) < 0.03);
        }
    }

    TEST_CASE("latent: sigma zero gives the constant mean trajectory") {
        LatentSourceConfig c = latent(1);
        c.sigma = 0.0;
        c.mean[1] = {0.1, 0.2, 0.3, 0.4, 0.5};
        const auto tr = gen_latent_trajectory(c, {10, 5, 5}, 20);
        for (std::size_t t = 0; t < 20; ++t) {
            CHECK(tr.at(t, 0)[3] == 0.5);
            CHECK(tr.at(t, 1)[2] == 0.3);
        }
    }

    TEST_CASE("latent: invalid configuration") {
        LatentSourceConfig c = latent(1);
        c.rho[0] = 1.0;
        CHECK_THROWS_AS(gen_latent_trajectory(c, {10, 5, 5}, 5), InvalidArgument);
        c = latent(1);
        c.sigma = -1.0;
        CHECK_THROWS_AS(gen_latent_trajectory(c, {10, 5, 5}, 5), InvalidArgument);
        c = latent(1);
        c.mean[2] = {0.5};
        CHECK_THROWS_AS(gen_latent_trajectory(c, {10, 5, 5}, 5), InvalidArgument);
    }

    TEST_CASE("cover: deterministic, in vocabulary, equals rate-0 stego on the same latent") {
        const auto cover = gen_cover(model(), latent(7), 200);
        CHECK(cover.length() == 200);
        CHECK_NOTHROW(cover.validate());
        CHECK(cover == gen_cover(model(), latent(7), 200));
        CHECK_FALSE(cover == gen_cover(model(), latent(8), 200));

        const auto s0 = gen_stego(model(), latent(7), 200, 0.0, 99);
        CHECK(s0.qis == cover);
        CHECK(s0.slots.empty());
        CHECK(s0.label == Label::stego);
    }

    TEST_CASE("stego: payload is recoverable from every embedded slot") {
        for (double rate : {0.1, 0.5, 1.0}) {
            const auto s = gen_stego(model(), latent(5), 300, rate, 17);
            REQUIRE(s.payload.size() == s.slots.size());
            for (std::size_t k = 0; k < s.slots.size(); ++k) {
                const auto [t, j] = s.slots[k];
                const int bit = qim_extract_bit(static_cast<std::size_t>(s.qis.frames[t][j]), model().partitions[j]);
                REQUIRE(bit == s.payload[k]);
            }
            if (rate == 1.0) CHECK(s.slots.size() == 300 * kTracks);
        }
    }

    TEST_CASE("stego: realized embedding rate tracks the target") {
        const auto s = gen_stego(model(), latent(2), 20000, 0.3, 4);
        const double realized = static_cast<double>(s.slots.size()) / (20000.0 * kTracks);
        CHECK(realized == doctest::Approx(0.3).epsilon(0.05));
    }

    TEST_CASE("stego: slot sets are nested across rates") {
        const auto lo = gen_stego(model(), latent(9), 500, 0.2, 33);
        const auto hi = gen_stego(model(), latent(9), 500, 0.6, 33);
        const std::set<std::pair<std::uint32_t, int>> hi_set = [&] {
            std::set<std::pair<std::uint32_t, int>> s;
            for (auto e : hi.slots) s.insert({e.frame, e.track});
            return s;
        }();
        CHECK(lo.slots.size() < hi.slots.size());
        for (auto e : lo.slots) CHECK(hi_set.count({e.frame, e.track}) == 1);
    }

    TEST_CASE("stego: track mask limits embedding") {
        const auto s = gen_stego(model(), latent(4), 100, 1.0, 8, TrackMask{false, true, false});
        CHECK(s.slots.size() == 100);
        for (auto e : s.slots) CHECK(e.track == 1);
        const auto cover = gen_cover(model(), latent(4), 100);
        for (std::size_t t = 0; t < 100; ++t) {
            CHECK(s.qis.frames[t][0] == cover.frames[t][0]);
            CHECK(s.qis.frames[t][2] == cover.frames[t][2]);
        }
    }

    TEST_CASE("stego: invalid rate") {
        CHECK_THROWS_AS(gen_stego(model(), latent(1), 10, 1.5, 1), InvalidArgument);
        CHECK_THROWS_AS(gen_stego(model(), latent(1), 10, -0.1, 1), InvalidArgument);
    }

    TEST_CASE("QIS text round trip") {
        const auto q = gen_stego(model(), latent(6), 50, 0.5, 2).qis;
        const auto text = qis_to_text(q);
        CHECK(text.rfind("#qis v1 tracks=3 vocab=128,32,32 frame_rate=100\n", 0) == 0);
        CHECK(qis_from_text(text) == q);

        const auto dir = temp_dir("qis");
        write_qis(q, dir / "a.qis");
        CHECK(parse_qis(dir / "a.qis") == q);
        CHECK_THROWS_AS(parse_qis(dir / "none.qis"), IoError);
    }

    TEST_CASE("QIS parse errors carry the offending line") {
        const std::string header = "#qis v1 tracks=3 vocab=128,32,32 frame_rate=100\n";
        auto line_of = [](const std::string& text) -> std::size_t {
            try {
                qis_from_text(text);
            } catch (const FormatError& e) {
                return e.line();
            }
            return 0;
        };
        CHECK(line_of(header + "1,2,3\n4,5\n") == 3);
        CHECK(line_of(header + "1,2,3\n1,32,0\n") == 3);
        CHECK(line_of(header + "x,2,3\n") == 2);
        CHECK(line_of(header + "1,2,3\n-1,0,0\n") == 3);
        CHECK(line_of("1,2,3\n") == 1);
        CHECK(qis_from_text(header).length() == 0);
    }

    TEST_CASE("dataset spec: split sizes and digest sensitivity") {
        DatasetSpec spec;
        spec.n_per_class = 100;
        CHECK(spec.val_count() == 10);
        CHECK(spec.test_count() == 10);
        CHECK(spec.split_for_index(79) == Split::train);
        CHECK(spec.split_for_index(80) == Split::val);
        CHECK(spec.split_for_index(90) == Split::test);
        spec.n_val = 50;
        spec.n_test = 51;
        CHECK_THROWS_AS(spec.validate(), InvalidArgument);

        DatasetSpec a, b;
        CHECK(a.digest() == b.digest());
        b.rate = 0.5;
        CHECK(a.digest() != b.digest());
        b = a;
        b.latent.sigma = 0.06;
        CHECK(a.digest() != b.digest());
        b = a;
        b.vq.seed += 1;
        CHECK(a.digest() != b.digest());
    }

    TEST_CASE("dataset: generate, load and compare with the in-memory build") {
        DatasetSpec spec;
        spec.n_per_class = 10;
        spec.frames = 30;
        spec.rate = 0.5;
        spec.seed = 77;
        const auto dir = temp_dir("ds");
        const auto m = gen_dataset(spec, dir);
        CHECK(m.n_cover == 10);
        CHECK(m.n_stego == 10);
        CHECK(m.files.size() == 20);
        CHECK(std::filesystem::exists(dir / "cover_00000.qis"));
        CHECK(std::filesystem::exists(dir / "stego_00009.qis"));

        DatasetManifest loaded_m;
        const auto loaded = load_dataset(dir, &loaded_m);
        CHECK(loaded_m.config_digest == spec.digest());
        CHECK(loaded_m.codec_digest == build_split_vq(spec.vq).digest());
        CHECK(loaded_m.embedding_rate == 0.5);

        const auto mem = make_dataset(build_split_vq(spec.vq), spec);
        REQUIRE(loaded.train.size() == 16);
        REQUIRE(loaded.val.size() == 2);
        REQUIRE(loaded.test.size() == 2);
        REQUIRE(mem.train.size() == 16);
        for (std::size_t i = 0; i < 16; ++i) {
            CHECK(loaded.train[i].qis == mem.train[i].qis);
            CHECK(loaded.train[i].label == mem.train[i].label);
        }
        CHECK(loaded.train[0].label == Label::cover);
        CHECK(loaded.train[1].label == Label::stego);

        // Regeneration is byte-identical.
        const auto dir2 = temp_dir("ds2");
        gen_dataset(spec, dir2);
        for (const auto& f : m.files)
            CHECK(read_text_file(dir / f.path) == read_text_file(dir2 / f.path));
        CHECK(read_text_file(dir / "manifest.json") == read_text_file(dir2 / "manifest.json"));
    }

    TEST_CASE("manifest: JSON round trip and malformed input") {
        DatasetManifest m;
        m.codec_digest = "abc";
        m.config_digest = "def";
        m.n_cover = m.n_stego = 1;
        m.duration_frames = 100;
        m.embedding_rate = 0.25;
        m.master_seed = 1ULL << 63;
        m.codebook_seed = 5;
        m.files.push_back({"cover_00000.qis", Label::cover, Split::train, 11, 0});
        m.files.push_back({"stego_00000.qis", Label::stego, Split::test, 12, 13});
        const auto back = DatasetManifest::from_json(m.to_json());
        CHECK(back.master_seed == m.master_seed);
        CHECK(back.files.size() == 2);
        CHECK(back.files[1].split == Split::test);
        CHECK(back.files[1].payload_seed == 13);
        CHECK(back.to_json() == m.to_json());

        CHECK_THROWS_AS(DatasetManifest::from_json("{"), FormatError);
        CHECK_THROWS_AS(DatasetManifest::from_json(R"({"version": 2})"), FormatError);
    }
}
