#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "qislab/cli.hpp"
#include "qislab/experiment.hpp"
#include "qislab/hrn.hpp"

using namespace qislab;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args, const std::string& stdin_text = "") {
    std::ostringstream out, err;
    std::istringstream in(stdin_text);
    const int code = run_cli(args, out, err, in);
    return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("qislab_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const std::vector<std::string> kSmallModel{"--embed-dim", "4", "--filters", "8", "--fc-dim", "16", "--batch-size", "16"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("usage errors exit 2 with one diagnostic line") {
        for (const auto& args : std::vector<std::vector<std::string>>{
                 {},
                 {"frobnicate"},
                 {"gen-data", "--n", "10"},
                 {"gen-data", "--out", "x", "--bogus"},
                 {"gen-data", "--out", "x", "--rate", "1.5"},
                 {"bench", "--trials", "5"},
                 {"eval", "--data", "/nonexistent", "--params", "/nonexistent"},
                 {"gradcheck", "--format", "xml"}}) {
            const auto r = cli(args);
            INFO(args.size());
            CHECK(r.code == kExitUsage);
            CHECK(count_lines(r.err) == 1);
        }
        const auto h = cli({"--help"});
        CHECK(h.code == kExitOk);
        CHECK(h.out.find("gen-data") != std::string::npos);
    }

    TEST_CASE("gen-data writes 2n QIS files plus a manifest, byte-identical per seed") {
        const auto a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
        const std::vector<std::string> base{"gen-data", "--n", "10", "--frames", "100", "--rate", "1.0", "--seed", "7"};
        CHECK(cli(with(base, {"--out", a.string()})).code == kExitOk);
        CHECK(cli(with(base, {"--out", b.string()})).code == kExitOk);
        std::size_t qis = 0;
        for (const auto& e : fs::directory_iterator(a)) {
            qis += e.path().extension() == ".qis";
            CHECK(read_text_file(e.path()) == read_text_file(b / e.path().filename()));
        }
        CHECK(qis == 20);
        CHECK(fs::exists(a / "manifest.json"));
    }

    TEST_CASE("train, eval, stream and bench round trip") {
        const auto dir = fresh_dir("pipeline");
        const auto data = (dir / "data").string(), params = (dir / "model.bin").string();
        REQUIRE(cli({"gen-data", "--n", "40", "--frames", "30", "--seed", "3", "--out", data}).code == kExitOk);
        const auto tr = cli(with({"train", "--data", data, "--out", params, "--epochs", "2", "--seed", "3"}, kSmallModel));
        REQUIRE(tr.code == kExitOk);
        CHECK(tr.out.find("epoch") != std::string::npos);
        const auto [p, cfg] = load_params<float>(params);
        CHECK(cfg.block_filters == 8);

        const auto ev = cli({"eval", "--data", data, "--params", params, "--split", "test"});
        REQUIRE(ev.code == kExitOk);
        const auto t = parse_csv_table(ev.out);
        CHECK(t.header[0] == "accuracy");
        CHECK(t.rows[0][2] == "8");

        auto st = cli({"stream", "--params", params, "--simulate", "30:0,30:1", "--window", "20", "--stride", "10"});
        REQUIRE(st.code == kExitOk);
        CHECK(st.out.rfind("window_start,prob_stego,label\n", 0) == 0);
        CHECK(count_lines(st.out) == 1 + 5);

        std::string lines;
        for (int i = 0; i < 12; ++i) lines += "1,2,3\n";
        st = cli({"stream", "--params", params, "--input", "-", "--window", "10", "--stride", "1"}, lines);
        CHECK(st.code == kExitOk);
        CHECK(count_lines(st.out) == 1 + 3);

        st = cli({"stream", "--params", params, "--input", "-", "--window", "10"}, "1,2,3\n1,2\n");
        CHECK(st.code == kExitDomainError);
        CHECK(st.err.find("frame 1") != std::string::npos);
        CHECK(cli({"stream", "--params", params, "--window", "10"}).code == kExitUsage);

        const auto bn = cli({"bench", "--params", params, "--durations", "10,20", "--trials", "30"});
        REQUIRE(bn.code == kExitOk);
        CHECK(count_lines(bn.out) == 3);
        const auto bt = cli({"bench", "--params", params, "--durations", "10,20", "--trials", "30", "--layout", "time"});
        CHECK(bt.out.rfind("metric,0.1,0.2\nMean (ms),", 0) == 0);
    }

    TEST_CASE("missing files are domain errors") {
        const auto dir = fresh_dir("missing");
        write_text_file(dir / "junk.bin", "nope");
        fs::create_directories(dir / "empty");
        const auto r = cli({"eval", "--data", (dir / "empty").string(), "--params", (dir / "junk.bin").string()});
        CHECK(r.code == kExitDomainError);
        CHECK(r.err.rfind("error: ", 0) == 0);
    }

    TEST_CASE("rate-grid emits one accuracy column per rate") {
        const auto dir = fresh_dir("grid");
        const auto path = (dir / "r.csv").string();
        const auto r = cli(with({"rate-grid", "--rates", "0.1,0.5,1.0", "--frames", "20", "--n", "20", "--epochs", "1",
                                 "--repeats", "1", "--out", path},
                                kSmallModel));
        REQUIRE(r.code == kExitOk);
        const auto t = parse_csv_table(read_text_file(path));
        CHECK(t.header == std::vector<std::string>{"frames", "0.1", "0.5", "1"});
        CHECK(t.rows.size() == 1);
        const auto md = cli(with({"length-grid", "--durations", "10,20", "--n", "20", "--epochs", "1", "--repeats", "1",
                                  "--format", "markdown"},
                                 kSmallModel));
        REQUIRE(md.code == kExitOk);
        CHECK(parse_markdown_table(md.out).header == std::vector<std::string>{"rate", "10", "20"});
    }

    TEST_CASE("gradcheck and verify-partition") {
        const auto g = cli({"gradcheck", "--configs", "2"});
        CHECK(g.code == kExitOk);
        const auto t = parse_csv_table(g.out);
        CHECK(t.header.back() == "result");
        for (const auto& row : t.rows) CHECK(row.back() == "pass");

        const auto v = cli({"verify-partition", "--balanced", "--seed", "4"});
        CHECK(v.code == kExitOk);
        CHECK(count_lines(v.out) == 4);

        const auto dir = fresh_dir("vp");
        write_text_file(dir / "cb.txt", "#cbk v1 track=0 dim=1 size=2\n0.1\n0.9\n");
        write_text_file(dir / "p.txt", "#cnv v1 size=2\n1\n1\n");
        const auto bad = cli({"verify-partition", "--codebook", (dir / "cb.txt").string(), "--partition",
                              (dir / "p.txt").string()});
        CHECK(bad.code == kExitDomainError);
        CHECK(bad.out.find("empty-class") != std::string::npos);
        CHECK(cli({"verify-partition", "--codebook", (dir / "cb.txt").string()}).code == kExitUsage);
    }
}
