#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lambda_flows/cli.hpp"

using namespace lambda_flows;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult run(std::vector<std::string> args) {
    std::ostringstream out, err;
    CliResult r;
    r.code = cli::run_cli(std::move(args), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::filesystem::path temp_dir(const std::string& tag) {
    const auto p = std::filesystem::temp_directory_path() / ("lambda_flows_cli_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string write_config(const std::filesystem::path& dir, const std::string& name,
                         const std::string& text) {
    const auto p = dir / name;
    std::ofstream f(p);
    f << text;
    return p.string();
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::size_t count_sub(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t pos = hay.find(needle); pos != std::string::npos;
         pos = hay.find(needle, pos + needle.size()))
        ++n;
    return n;
}

std::vector<std::string> csv_rows(const std::string& text) {
    std::vector<std::string> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("rep,", 0) == 0) continue;
        rows.push_back(line);
    }
    return rows;
}

} // namespace

TEST_CASE("cli help and argument errors") {
    const CliResult help = run({"--help"});
    CHECK(help.code == 0);
    for (const char* name :
         {"classify", "coalescent", "lookdown", "fv", "eves", "validate", "speed"})
        CHECK(help.out.find(name) != std::string::npos);

    const CliResult sub_help = run({"validate", "--help"});
    CHECK(sub_help.code == 0);
    CHECK(sub_help.out.find("--config") != std::string::npos);
    CHECK(sub_help.out.find("--threads") != std::string::npos);

    CHECK(run({}).code == 1);
    CHECK(run({"no_such_command"}).code == 1);
    CHECK(run({"classify", "--bogus-flag"}).code == 1);
}

TEST_CASE("cli classify prints regimes and rejects bad specs") {
    const auto dir = temp_dir("classify");
    const auto beta = write_config(dir, "beta.json", R"json({"measure":"beta(0.5,1.5)"})json");
    const CliResult r1 = run({"classify", "--config", beta});
    REQUIRE(r1.code == 0);
    CHECK(r1.out.find("\"regime\":\"CDI\"") != std::string::npos);
    CHECK(r1.out.find("\"measure\":\"beta(0.5,1.5)\"") != std::string::npos);
    CHECK(r1.out.find("\"config\":\"") != std::string::npos);

    const auto leb = write_config(dir, "leb.json", R"json({"measure":"lebesgue"})json");
    CHECK(run({"classify", "--config", leb}).out.find("\"regime\":\"INTENSIVE_INF\"") !=
          std::string::npos);

    const auto obj =
        write_config(dir, "obj.json", R"json({"measure":{"family":"dirac","x":0.5,"mass":2.0}})json");
    const CliResult r2 = run({"classify", "--config", obj});
    CHECK(r2.out.find("\"regime\":\"DISCRETE\"") != std::string::npos);
    CHECK(r2.out.find("\"measure\":\"dirac(0.5,2)\"") != std::string::npos);

    const auto dust = write_config(dir, "dust.json", R"json({"measure":{"family":"beta","alpha":0.5}})json");
    CHECK(run({"classify", "--config", dust}).out.find("\"regime\":\"INTENSIVE_W_DUST\"") !=
          std::string::npos);

    const auto bad = write_config(dir, "bad.json", R"json({"measure":"nope"})json");
    const CliResult r3 = run({"classify", "--config", bad});
    CHECK(r3.code == 1);
    CHECK(r3.out.empty());
    CHECK(r3.err.find("nope") != std::string::npos);

    CHECK(run({"classify", "--config", (dir / "missing.json").string()}).code == 1);
    const auto extra = write_config(dir, "extra.json", R"json({"measure":"lebesgue","bogus":1})json");
    const CliResult r4 = run({"classify", "--config", extra});
    CHECK(r4.code == 1);
    CHECK(r4.err.find("bogus") != std::string::npos);

    const CliResult r5 =
        run({"classify", "--config", beta, "--out", (dir / "artifacts").string()});
    REQUIRE(r5.code == 0);
    CHECK(slurp(dir / "artifacts" / "classify.json") == r5.out);
}

TEST_CASE("cli config hash ignores execution-only keys") {
    const auto dir = temp_dir("hash");
    const auto cfg = write_config(dir, "m.json", R"json({"measure":"beta(0.5,1.5)"})json");
    const CliResult plain = run({"classify", "--config", cfg});
    const CliResult threaded = run({"classify", "--config", cfg, "--threads", "2", "--out",
                                    (dir / "elsewhere").string()});
    REQUIRE(plain.code == 0);
    REQUIRE(threaded.code == 0);
    CHECK(plain.out == threaded.out);
}

TEST_CASE("cli coalescent writes deterministic absorbed runs") {
    const auto dir = temp_dir("coalescent");
    const auto cfg = write_config(
        dir, "c.json", R"json({"measure":"dirac0(1)","n":10,"horizon":"inf","replicates":1000})json");
    const CliResult r1 = run({"coalescent", "--config", cfg, "--seed", "404",
                              "--out", (dir / "a").string()});
    REQUIRE(r1.code == 0);
    const std::string text = slurp(dir / "a" / "coalescent.csv");
    CHECK(text.find("# lambda_flows coalescent config=") == 0);
    CHECK(text.find(" seed=404 ") != std::string::npos);
    CHECK(text.find(" measure=dirac0(1) ") != std::string::npos);
    CHECK(text.find("rep,tmrca,blocks_final,events\n") != std::string::npos);

    const auto rows = csv_rows(text);
    REQUIRE(rows.size() == 1000);
    for (const std::string& row : rows) {
        // A pair-merger chain from 10 blocks always absorbs in exactly 9 events.
        CHECK(row.find(",1,9") == row.size() - 4);
        CHECK(row.find(",,") == std::string::npos);
    }

    const CliResult r2 = run({"coalescent", "--config", cfg, "--seed", "404",
                              "--out", (dir / "b").string()});
    REQUIRE(r2.code == 0);
    CHECK(slurp(dir / "b" / "coalescent.csv") == text);

    const CliResult r3 = run({"coalescent", "--config", cfg, "--seed", "404",
                              "--out", (dir / "c").string(), "--threads", "3"});
    REQUIRE(r3.code == 0);
    CHECK(slurp(dir / "c" / "coalescent.csv") == text);
}

TEST_CASE("cli coalescent reports unabsorbed runs with empty tmrca") {
    const auto dir = temp_dir("coalescent_short");
    const auto cfg = write_config(
        dir, "c.json", R"json({"measure":"dirac0(1)","n":10,"horizon":0.01,"replicates":50})json");
    REQUIRE(run({"coalescent", "--config", cfg, "--seed", "7", "--out", dir.string()}).code == 0);
    for (const std::string& row : csv_rows(slurp(dir / "coalescent.csv"))) {
        const auto first = row.find(',');
        CHECK(row[first + 1] == ','); // no TMRCA recorded inside the horizon
    }
}

TEST_CASE("cli coalescent rejects missing seed and bad horizon") {
    const auto dir = temp_dir("coalescent_bad");
    const auto no_seed = write_config(
        dir, "n.json", R"json({"measure":"dirac0(1)","n":5,"horizon":"inf"})json");
    const CliResult r1 = run({"coalescent", "--config", no_seed});
    CHECK(r1.code == 1);
    CHECK(r1.err.find("seed") != std::string::npos);

    const auto bad_h = write_config(
        dir, "h.json", R"json({"measure":"dirac0(1)","n":5,"horizon":-1,"seed":3})json");
    CHECK(run({"coalescent", "--config", bad_h}).code == 1);
    const auto bad_word = write_config(
        dir, "w.json", R"json({"measure":"dirac0(1)","n":5,"horizon":"forever","seed":3})json");
    CHECK(run({"coalescent", "--config", bad_word}).code == 1);
}

TEST_CASE("cli lookdown writes parseable graphs and header-only zero windows") {
    const auto dir = temp_dir("lookdown");
    const auto cfg = write_config(
        dir, "g.json", R"json({"measure":"lebesgue","n":4,"window":[0.25,1.5],"replicates":2})json");
    REQUIRE(run({"lookdown", "--config", cfg, "--seed", "31", "--out", dir.string()}).code == 0);

    for (int rep = 0; rep < 2; ++rep) {
        const std::string text = slurp(dir / ("graph_" + std::to_string(rep) + ".jsonl"));
        CHECK(text.find("# config=") != std::string::npos);
        CHECK(text.find(" seed=31\n") != std::string::npos);
        std::istringstream in(text);
        const LookdownGraphN g = parse_lookdown_graph(in);
        CHECK(g.n == 4);
        CHECK(g.s0 == 0.25);
        CHECK(g.s1 == 1.5);
        // The file is the library serialization plus one injected comment line.
        const LookdownGraphN direct =
            sample_graph(LambdaMeasure::lebesgue(), 4, 0.25, 1.5, split_seed(31, rep));
        CHECK(to_jsonl(g) == to_jsonl(direct));
    }

    const auto zero = write_config(
        dir, "z.json", R"json({"measure":"lebesgue","n":4,"window":[0.4,0.4]})json");
    REQUIRE(run({"lookdown", "--config", zero, "--seed", "1", "--out",
                 (dir / "zero").string()}).code == 0);
    const std::string text = slurp(dir / "zero" / "graph_0.jsonl");
    std::istringstream lines(text);
    std::string line;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
        REQUIRE(!line.empty());
        CHECK(line[0] == '#');
        ++count;
    }
    CHECK(count == 2);
    std::istringstream in(text);
    CHECK(parse_lookdown_graph(in).events.empty());
}

TEST_CASE("cli fv replay reproduces identical bytes") {
    const auto dir = temp_dir("fv");
    const auto cfg = write_config(
        dir, "f.json", R"json({"measure":"dirac0(1)","n":4,"window":[0,1.5]})json");
    REQUIRE(run({"fv", "--config", cfg, "--seed", "99", "--out", (dir / "a").string()}).code ==
            0);
    REQUIRE(run({"fv", "--config", cfg, "--seed", "99", "--out", (dir / "b").string()}).code ==
            0);
    CHECK(slurp(dir / "a" / "graph_0.jsonl") == slurp(dir / "b" / "graph_0.jsonl"));
    CHECK(slurp(dir / "a" / "fv_0.jsonl") == slurp(dir / "b" / "fv_0.jsonl"));

    std::istringstream run_in(slurp(dir / "a" / "fv_0.jsonl"));
    const FvRunFile file = parse_fv_run(run_in);
    CHECK(file.graph_ref == "graph_0.jsonl");
    CHECK(file.seed == split_seed(99, 0));
    std::istringstream graph_in(slurp(dir / "a" / "graph_0.jsonl"));
    const FvRun assembled = assemble_fv_run(file, parse_lookdown_graph(graph_in));
    CHECK(assembled.initial_types.size() == 4);
}

TEST_CASE("cli fv validates the types override") {
    const auto dir = temp_dir("fv_types");
    const auto good = write_config(
        dir, "g.json",
        R"json({"measure":"dirac0(1)","n":3,"window":[0,1],"types":[0.25,0.5,0.75]})json");
    REQUIRE(run({"fv", "--config", good, "--seed", "5", "--out", dir.string()}).code == 0);
    CHECK(slurp(dir / "fv_0.jsonl").find("# initial 0.25 0.5 0.75") != std::string::npos);

    const auto bad = write_config(
        dir, "b.json", R"json({"measure":"dirac0(1)","n":3,"window":[0,1],"types":[0.25]})json");
    const CliResult r = run({"fv", "--config", bad, "--seed", "5", "--out", dir.string()});
    CHECK(r.code == 1);
    CHECK(!r.err.empty());
}

TEST_CASE("cli eves ranks a saved run and matches the adaptive library path") {
    const auto dir = temp_dir("eves");
    const auto cfg = write_config(
        dir, "f.json", R"json({"measure":"dirac0(1)","n":5,"window":[0,2]})json");
    REQUIRE(run({"fv", "--config", cfg, "--seed", "99", "--out", dir.string()}).code == 0);

    const auto run_cfg = write_config(
        dir, "e.json",
        "{\"run\":\"" + (dir / "fv_0.jsonl").string() + "\"}");
    const CliResult from_run = run({"eves", "--config", run_cfg});
    REQUIRE(from_run.code == 0);
    CHECK(from_run.out.find("\"eves\":{") != std::string::npos);
    CHECK(from_run.out.find("\"seed\":" + format_u64(split_seed(99, 0))) != std::string::npos);
    CHECK(run({"eves", "--config", run_cfg}).out == from_run.out);

    const auto adaptive_cfg = write_config(
        dir, "a.json", R"json({"measure":"dirac0(1)","n":12,"threshold":0.97})json");
    const CliResult adaptive = run({"eves", "--config", adaptive_cfg, "--seed", "5"});
    REQUIRE(adaptive.code == 0);
    const EveReport direct =
        extract_eves_adaptive(LambdaMeasure::dirac0(1.0), 12, 5, 0.97, 1.0, 12);
    CHECK(adaptive.out.find("\"eves\":" + to_json(direct) + "}") != std::string::npos);

    const auto missing = write_config(dir, "m.json", R"json({"run":"no_such_run.jsonl"})json");
    CHECK(run({"eves", "--config", missing}).code == 1);
    const auto clash = write_config(
        dir, "c.json",
        "{\"run\":\"" + (dir / "fv_0.jsonl").string() + "\",\"n\":5}");
    const CliResult r = run({"eves", "--config", clash});
    CHECK(r.code == 1);
    CHECK(r.err.find("run") != std::string::npos);
    const auto incomplete = write_config(dir, "i.json", R"json({"measure":"dirac0(1)"})json");
    CHECK(run({"eves", "--config", incomplete, "--seed", "1"}).code == 1);
}

TEST_CASE("cli validate default battery passes on the pair-merger measure") {
    const auto dir = temp_dir("validate_pass");
    const auto cfg = write_config(dir, "v.json", R"json({"measure":"dirac0(1)"})json");
    const CliResult r = run({"validate", "--config", cfg, "--seed", "1002"});
    REQUIRE(r.code == 0);
    CHECK(count_sub(r.out, "\"verdict\":\"PASS\"") == 6);
    CHECK(count_sub(r.out, "\"verdict\":\"FAIL\"") == 0);
    CHECK(count_sub(r.out, "\"verdict\":\"UNDECIDED\"") == 0);
    for (const char* id : {"rate_match", "exchangeability", "eve_uniformity", "cdi_speed"})
        CHECK(r.out.find("\"id\":\"" + std::string(id) + "\"") != std::string::npos);
    CHECK(r.out.find("\"id\":\"duality\"") == std::string::npos); // needs a DISCRETE measure

    const CliResult again = run({"validate", "--config", cfg, "--seed", "1002"});
    CHECK(again.out == r.out);
}

TEST_CASE("cli validate starves to UNDECIDED at tiny replicates") {
    const auto dir = temp_dir("validate_tiny");
    const auto cfg = write_config(dir, "v.json", R"json({"measure":"dirac0(1)","replicates":10})json");
    const CliResult r = run({"validate", "--config", cfg, "--seed", "11"});
    CHECK(r.code == 0);
    CHECK(count_sub(r.out, "\"verdict\":\"UNDECIDED\"") == 6);
    CHECK(count_sub(r.out, "\"verdict\":\"FAIL\"") == 0);
}

TEST_CASE("cli validate controls fail with nonzero exit") {
    const auto dir = temp_dir("validate_controls");
    const auto cfg = write_config(dir, "v.json", R"json({"measure":"dirac0(1)","controls":true})json");
    const CliResult r = run({"validate", "--config", cfg, "--seed", "1002"});
    CHECK(r.code == 1);
    CHECK(count_sub(r.out, "\"verdict\":\"FAIL\"") >= 3);
    CHECK(r.out.find("\"theory_scale\":1.15") != std::string::npos);
    CHECK(r.out.find("\"location_power\":2") != std::string::npos);
    CHECK(r.out.find("\"oracle_scale\":1.4") != std::string::npos);
    CHECK(r.out.find("\"source\":\"biased_control\"") != std::string::npos);
}

TEST_CASE("cli validate honors test selection and threshold overrides") {
    const auto dir = temp_dir("validate_select");
    const auto one = write_config(
        dir, "one.json", R"json({"measure":"dirac0(1)","tests":["rate_match"]})json");
    const CliResult r1 = run({"validate", "--config", one, "--seed", "1002"});
    REQUIRE(r1.code == 0);
    CHECK(count_sub(r1.out, "\"id\":") == 1);
    CHECK(r1.out.find("\"id\":\"rate_match\"") != std::string::npos);

    const auto tight = write_config(
        dir, "tight.json",
        R"json({"measure":"dirac0(1)","tests":["rate_match"],"thresholds":{"z":0.001}})json");
    const CliResult r2 = run({"validate", "--config", tight, "--seed", "1002"});
    CHECK(r2.code == 1);
    CHECK(r2.out.find("\"threshold\":0.001") != std::string::npos);
    CHECK(r2.out.find("\"verdict\":\"FAIL\"") != std::string::npos);

    const auto unknown = write_config(
        dir, "u.json", R"json({"measure":"dirac0(1)","tests":["frobnicate"]})json");
    CHECK(run({"validate", "--config", unknown, "--seed", "1"}).code == 1);

    const auto wrong_regime = write_config(
        dir, "w.json", R"json({"measure":"dirac0(1)","tests":["duality"]})json");
    const CliResult r3 = run({"validate", "--config", wrong_regime, "--seed", "1"});
    CHECK(r3.code == 1);
    CHECK(r3.err.find("DISCRETE") != std::string::npos);

    const auto discrete = write_config(
        dir, "d.json",
        R"json({"measure":"dirac(0.5,1)","tests":["duality"],"replicates":20000})json");
    const CliResult r4 = run({"validate", "--config", discrete, "--seed", "21"});
    CHECK(r4.code == 0);
    CHECK(r4.out.find("\"id\":\"duality\"") != std::string::npos);
    CHECK(r4.out.find("\"verdict\":\"PASS\"") != std::string::npos);
}

TEST_CASE("cli speed checks block counts against the comedown oracle") {
    const auto dir = temp_dir("speed");
    const auto cfg = write_config(
        dir, "s.json",
        R"json({"measure":"dirac0(1)","n":2000,"t_grid":[0.02,0.1],"replicates":60})json");
    const CliResult r1 = run({"speed", "--config", cfg, "--seed", "13"});
    REQUIRE(r1.code == 0);
    CHECK(count_sub(r1.out, "\"verdict\":\"PASS\"") == 2);

    const CliResult r2 = run({"speed", "--config", cfg, "--seed", "13", "--replicates", "10"});
    CHECK(r2.code == 2);
    CHECK(count_sub(r2.out, "\"verdict\":\"UNDECIDED\"") == 2);

    const auto scaled = write_config(
        dir, "bad.json",
        R"json({"measure":"dirac0(1)","n":2000,"t_grid":[0.02,0.1],"replicates":60,"oracle_scale":1.4})json");
    const CliResult r3 = run({"speed", "--config", scaled, "--seed", "13"});
    CHECK(r3.code == 1);
    CHECK(r3.out.find("\"verdict\":\"FAIL\"") != std::string::npos);
    CHECK(r3.out.find("\"oracle_scale\":1.4") != std::string::npos);

    const auto noncdi = write_config(dir, "n.json", R"json({"measure":"lebesgue"})json");
    CHECK(run({"speed", "--config", noncdi, "--seed", "1"}).code == 1);
    const auto empty_grid = write_config(
        dir, "e.json", R"json({"measure":"dirac0(1)","t_grid":[]})json");
    CHECK(run({"speed", "--config", empty_grid, "--seed", "1"}).code == 1);
    const auto zero_t = write_config(
        dir, "z.json", R"json({"measure":"dirac0(1)","n":2000,"t_grid":[0],"replicates":60})json");
    CHECK(run({"speed", "--config", zero_t, "--seed", "1"}).code == 1);
}

TEST_CASE("cli flag overrides beat config values") {
    const auto dir = temp_dir("overrides");
    const auto cfg = write_config(
        dir, "c.json",
        R"json({"measure":"dirac0(1)","n":6,"horizon":"inf","seed":1,"replicates":3,"out":")json" +
            (dir / "config_dir").string() + "\"}");
    REQUIRE(run({"coalescent", "--config", cfg, "--seed", "2", "--out",
                 (dir / "flag_dir").string(), "--replicates", "5"}).code == 0);
    CHECK(!std::filesystem::exists(dir / "config_dir"));
    const std::string text = slurp(dir / "flag_dir" / "coalescent.csv");
    CHECK(text.find(" seed=2 ") != std::string::npos);
    CHECK(csv_rows(text).size() == 5);
}

TEST_CASE("cli command key in config must match the subcommand") {
    const auto dir = temp_dir("command_key");
    const auto cfg = write_config(dir, "c.json", R"json({"command":"fv","measure":"lebesgue"})json");
    const CliResult r = run({"classify", "--config", cfg});
    CHECK(r.code == 1);
    CHECK(r.err.find("does not match") != std::string::npos);

    const auto ok = write_config(
        dir, "ok.json", R"json({"command":"classify","measure":"lebesgue"})json");
    CHECK(run({"classify", "--config", ok}).code == 0);
}

TEST_CASE("cli thread count comes from config, env, or auto") {
    const auto dir = temp_dir("threads");
    const auto cfg = write_config(
        dir, "c.json", R"json({"measure":"beta(0.5,1.5)","n":8,"horizon":2.5,"replicates":12})json");
    REQUIRE(run({"coalescent", "--config", cfg, "--seed", "77", "--out",
                 (dir / "one").string(), "--threads", "1"}).code == 0);
    REQUIRE(run({"coalescent", "--config", cfg, "--seed", "77", "--out",
                 (dir / "four").string(), "--threads", "4"}).code == 0);
    CHECK(slurp(dir / "one" / "coalescent.csv") == slurp(dir / "four" / "coalescent.csv"));

    setenv("LAMBDA_FLOWS_THREADS", "3", 1);
    const CliResult env_run = run({"coalescent", "--config", cfg, "--seed", "77", "--out",
                                   (dir / "env").string()});
    setenv("LAMBDA_FLOWS_THREADS", "zero", 1);
    const CliResult env_bad = run({"coalescent", "--config", cfg, "--seed", "77", "--out",
                                   (dir / "envbad").string()});
    unsetenv("LAMBDA_FLOWS_THREADS");
    REQUIRE(env_run.code == 0);
    CHECK(slurp(dir / "env" / "coalescent.csv") == slurp(dir / "one" / "coalescent.csv"));
    CHECK(env_bad.code == 1);
    CHECK(env_bad.err.find("LAMBDA_FLOWS_THREADS") != std::string::npos);
}
