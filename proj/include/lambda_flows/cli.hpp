#pragma once

/// Batch driver behind the lambda_flows executable. Seven subcommands:
///
///   classify    print the regime decision for a measure as JSON
///   coalescent  jump-chain runs, one CSV row per replicate (TMRCA, counts)
///   lookdown    sample reproduction graphs to JSONL files
///   fv          sample graphs plus measure-valued paths (graph + run JSONL)
///   eves        rank ancestor types, from a saved run or adaptively
///   validate    run the statistical test battery, JSON report array
///   speed       comedown-speed check alone, JSON report array
///
/// Configuration comes from a JSON file (--config) merged with flag
/// overrides (--seed, --out, --replicates, --threads); unknown keys are
/// rejected, and simulation commands insist on a seed. Every artifact
/// embeds the fnv1a hash of the effective config plus the root seed, and
/// identical configs reproduce identical bytes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lambda_flows/parallel.hpp"
#include "lambda_flows/validate.hpp"

namespace lambda_flows::cli {

using nlohmann::json;

/// Internal control flow for spec problems: caught in run_cli, message on
/// stderr, process exit with the carried code.
struct CliError {
    int code = 1;
    std::string message;
};

[[noreturn]] inline void bad_spec(const std::string& message) { throw CliError{1, message}; }

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

inline json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) bad_spec("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        bad_spec("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) bad_spec("config file '" + path + "' must hold a JSON object");
    return j;
}

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& what) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) bad_spec("unknown key '" + it.key() + "' in " + what);
    }
}

inline const json& require_key(const json& cfg, const char* key, const std::string& command) {
    if (!cfg.contains(key))
        bad_spec(std::string("the ") + command + " command needs a '" + key + "' value");
    return cfg.at(key);
}

inline std::int64_t get_integer(const json& v, const char* what, std::int64_t lo,
                                std::int64_t hi) {
    if (!v.is_number_integer())
        bad_spec(std::string("'") + what + "' must be an integer");
    const std::int64_t x = v.get<std::int64_t>();
    if (x < lo || x > hi)
        bad_spec(std::string("'") + what + "' must lie in [" + std::to_string(lo) + ", " +
                 std::to_string(hi) + "]");
    return x;
}

inline double get_number(const json& v, const char* what) {
    if (!v.is_number()) bad_spec(std::string("'") + what + "' must be a number");
    return v.get<double>();
}

inline std::uint64_t get_seed(const json& cfg, const std::string& command) {
    const json& v = require_key(cfg, "seed", command);
    if (!v.is_number_unsigned())
        bad_spec("'seed' must be a nonnegative integer");
    return v.get<std::uint64_t>();
}

/// Measure from either a canonical label string ("beta(0.5,1.5)",
/// "dirac0(1)", "dirac(0.5,2)", "lebesgue") or an object such as
/// {"family":"beta","alpha":1.5}.
inline LambdaMeasure measure_from_config(const json& spec) {
    if (spec.is_string()) {
        try {
            return measure_from_label(spec.get<std::string>());
        } catch (const std::invalid_argument& e) {
            bad_spec(e.what());
        }
    }
    if (!spec.is_object())
        bad_spec("'measure' must be a label string or a {\"family\":...} object");
    const json& fam = require_key(spec, "family", "measure");
    if (!fam.is_string()) bad_spec("measure 'family' must be a string");
    const std::string family = fam.get<std::string>();
    try {
        if (family == "dirac0") {
            check_keys(spec, {"family", "mass"}, "the dirac0 measure");
            return LambdaMeasure::dirac0(get_number(require_key(spec, "mass", "measure"), "mass"));
        }
        if (family == "dirac") {
            check_keys(spec, {"family", "x", "mass"}, "the dirac measure");
            return LambdaMeasure::dirac(get_number(require_key(spec, "x", "measure"), "x"),
                                        get_number(require_key(spec, "mass", "measure"), "mass"));
        }
        if (family == "lebesgue") {
            check_keys(spec, {"family"}, "the lebesgue measure");
            return LambdaMeasure::lebesgue();
        }
        if (family == "beta") {
            check_keys(spec, {"family", "alpha"}, "the beta measure");
            return LambdaMeasure::beta(
                get_number(require_key(spec, "alpha", "measure"), "alpha"));
        }
    } catch (const std::invalid_argument& e) {
        bad_spec(e.what());
    }
    bad_spec("unknown measure family '" + family + "'");
}

inline unsigned threads_from_config(const json& cfg) {
    if (cfg.contains("threads"))
        return static_cast<unsigned>(get_integer(cfg.at("threads"), "threads", 1, 4096));
    if (const char* env = std::getenv("LAMBDA_FLOWS_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0' || v == 0 || v > 4096)
            bad_spec(std::string("LAMBDA_FLOWS_THREADS must be a positive thread count, got '") +
                     env + "'");
        return static_cast<unsigned>(v);
    }
    return 0; // auto
}

/// Hash of the effective config with execution-only keys removed, so the
/// same experiment hashes identically no matter where or how wide it runs.
inline std::string config_hash(json cfg) {
    cfg.erase("threads");
    cfg.erase("out");
    return hex64(fnv1a(cfg.dump()));
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec)
            bad_spec("cannot create directory '" + path.parent_path().string() +
                     "': " + ec.message());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) bad_spec("cannot open '" + path.string() + "' for writing");
    f << text;
    f.flush();
    if (!f) bad_spec("failed while writing '" + path.string() + "'");
}

/// Inserts a "# config=..." line after the leading comment block of a JSONL
/// artifact, where both stream parsers skip it.
inline std::string with_config_comment(const std::string& text, const std::string& comment) {
    std::size_t pos = 0;
    while (pos < text.size() && text[pos] == '#') {
        const std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) {
            pos = text.size();
            break;
        }
        pos = nl + 1;
    }
    return text.substr(0, pos) + comment + "\n" + text.substr(pos);
}

inline std::pair<double, double> window_from_config(const json& cfg, const std::string& command) {
    const json& w = require_key(cfg, "window", command);
    if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number())
        bad_spec("'window' must be a two-number array [s0, s1]");
    const double s0 = w[0].get<double>();
    const double s1 = w[1].get<double>();
    if (!(s1 >= s0)) bad_spec("'window' must satisfy s0 <= s1");
    return {s0, s1};
}

/// Emits a command's JSON result: always to the stream, and to
/// <out>/<command>.json when an output directory is configured.
inline void emit_json(const json& cfg, const std::string& command, const std::string& text,
                      std::ostream& out) {
    out << text << "\n";
    if (cfg.contains("out")) {
        const json& o = cfg.at("out");
        if (!o.is_string()) bad_spec("'out' must be a directory path string");
        write_text_file(std::filesystem::path(o.get<std::string>()) / (command + ".json"),
                        text + "\n");
    }
}

inline std::filesystem::path out_dir_from_config(const json& cfg) {
    if (!cfg.contains("out")) return std::filesystem::path(".");
    const json& o = cfg.at("out");
    if (!o.is_string()) bad_spec("'out' must be a directory path string");
    return std::filesystem::path(o.get<std::string>());
}

// ---------------------------------------------------------------------------
// classify

inline int cmd_classify(const json& cfg, std::ostream& out) {
    check_keys(cfg, {"command", "measure", "seed", "threads", "out"}, "the classify config");
    const LambdaMeasure m = measure_from_config(require_key(cfg, "measure", "classify"));
    const std::string hash = config_hash(cfg);
    std::string text = "{\"config\":\"" + hash + "\",\"measure\":\"" + m.label() + "\",";
    try {
        const RegimeClass rc = classify(m);
        text += "\"regime\":\"" + regime_name(rc.regime) + "\",\"u_log_u_finite\":\"" +
                tristate_name(rc.u_log_u_finite) + "\",\"integrals\":[";
        bool first = true;
        for (const IntegralReport& r : rc.integrals) {
            if (!first) text += ",";
            first = false;
            text += "{\"name\":\"" + r.name + "\",\"status\":\"";
            switch (r.status) {
                case IntegralReport::Status::Value:
                    text += "value\",\"value\":" + format_double(r.value);
                    break;
                case IntegralReport::Status::Divergent: text += "divergent\""; break;
                default: text += "skipped\""; break;
            }
            text += "}";
        }
        text += "]}";
    } catch (const UndecidedError& e) {
        text += "\"regime\":\"UNDECIDED\",\"detail\":\"" + json_escape(e.what()) + "\"}";
        emit_json(cfg, "classify", text, out);
        return 2;
    }
    emit_json(cfg, "classify", text, out);
    return 0;
}

// ---------------------------------------------------------------------------
// coalescent

/// CSV columns: rep, tmrca (empty until absorbed), blocks_final, events.
inline int cmd_coalescent(const json& cfg, std::ostream& out) {
    check_keys(cfg,
               {"command", "measure", "n", "horizon", "seed", "replicates", "threads", "out"},
               "the coalescent config");
    const LambdaMeasure m = measure_from_config(require_key(cfg, "measure", "coalescent"));
    const int n = static_cast<int>(get_integer(require_key(cfg, "n", "coalescent"), "n", 2,
                                               10000000));
    const json& h = require_key(cfg, "horizon", "coalescent");
    double horizon = 0.0;
    if (h.is_string() && h.get<std::string>() == "inf")
        horizon = std::numeric_limits<double>::infinity();
    else if (h.is_number() && h.get<double>() > 0.0)
        horizon = h.get<double>();
    else
        bad_spec("'horizon' must be a positive number or \"inf\"");
    const std::uint64_t seed = get_seed(cfg, "coalescent");
    const std::int64_t replicates =
        cfg.contains("replicates") ? get_integer(cfg.at("replicates"), "replicates", 1, 100000000)
                                   : 1;
    const unsigned threads = threads_from_config(cfg);
    const std::string hash = config_hash(cfg);

    std::vector<std::string> rows(static_cast<std::size_t>(replicates));
    const auto one = [&](RateTable& rates, std::size_t r) {
        const BlockCountPath path =
            simulate_block_counts(rates, n, horizon, split_seed(seed, r));
        std::string tmrca;
        for (const auto& [t, b] : path.steps)
            if (b == 1) {
                tmrca = format_double(t);
                break;
            }
        rows[r] = format_u64(r) + "," + tmrca + "," + std::to_string(path.steps.back().second) +
                  "," + format_u64(path.steps.size() - 1);
    };
    if (resolve_threads(threads, rows.size()) <= 1) {
        RateTable rates(m);
        for (std::size_t r = 0; r < rows.size(); ++r) one(rates, r);
    } else {
        parallel_for_index(rows.size(), threads, [&](std::size_t r) {
            RateTable rates(m);
            one(rates, r);
        });
    }

    std::string text = "# lambda_flows coalescent config=" + hash +
                       " seed=" + format_u64(seed) + " measure=" + m.label() +
                       " n=" + std::to_string(n) + " horizon=" + format_double(horizon) +
                       " replicates=" + format_u64(rows.size()) +
                       "\nrep,tmrca,blocks_final,events\n";
    for (const std::string& row : rows) text += row + "\n";
    write_text_file(out_dir_from_config(cfg) / "coalescent.csv", text);
    out << "wrote " << (out_dir_from_config(cfg) / "coalescent.csv").string() << " ("
        << rows.size() << " rows)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// lookdown / fv

inline int cmd_lookdown(const json& cfg, std::ostream& out) {
    check_keys(cfg, {"command", "measure", "n", "window", "seed", "replicates", "threads", "out"},
               "the lookdown config");
    const LambdaMeasure m = measure_from_config(require_key(cfg, "measure", "lookdown"));
    const int n =
        static_cast<int>(get_integer(require_key(cfg, "n", "lookdown"), "n", 2, 10000000));
    const auto [s0, s1] = window_from_config(cfg, "lookdown");
    const std::uint64_t seed = get_seed(cfg, "lookdown");
    const std::int64_t replicates =
        cfg.contains("replicates") ? get_integer(cfg.at("replicates"), "replicates", 1, 1000000)
                                   : 1;
    const unsigned threads = threads_from_config(cfg);
    const std::string hash = config_hash(cfg);
    const std::string comment = "# config=" + hash + " seed=" + format_u64(seed);
    const std::filesystem::path dir = out_dir_from_config(cfg);

    std::vector<std::string> files(static_cast<std::size_t>(replicates));
    parallel_for_index(files.size(), threads, [&](std::size_t r) {
        const LookdownGraphN g = sample_graph(m, n, s0, s1, split_seed(seed, r));
        files[r] = with_config_comment(to_jsonl(g), comment);
    });
    for (std::size_t r = 0; r < files.size(); ++r)
        write_text_file(dir / ("graph_" + std::to_string(r) + ".jsonl"), files[r]);
    out << "wrote " << files.size() << " graph file(s) under " << dir.string() << "\n";
    return 0;
}

inline int cmd_fv(const json& cfg, std::ostream& out) {
    check_keys(
        cfg,
        {"command", "measure", "n", "window", "seed", "replicates", "threads", "out", "types"},
        "the fv config");
    const LambdaMeasure m = measure_from_config(require_key(cfg, "measure", "fv"));
    const int n = static_cast<int>(get_integer(require_key(cfg, "n", "fv"), "n", 1, 1000000));
    const auto [s0, s1] = window_from_config(cfg, "fv");
    const std::uint64_t seed = get_seed(cfg, "fv");
    const std::int64_t replicates =
        cfg.contains("replicates") ? get_integer(cfg.at("replicates"), "replicates", 1, 1000000)
                                   : 1;
    std::vector<double> types;
    if (cfg.contains("types")) {
        const json& arr = cfg.at("types");
        if (!arr.is_array()) bad_spec("'types' must be an array of numbers");
        for (const json& v : arr) types.push_back(get_number(v, "types entry"));
    }
    const unsigned threads = threads_from_config(cfg);
    const std::string hash = config_hash(cfg);
    const std::string comment = "# config=" + hash + " seed=" + format_u64(seed);
    const std::filesystem::path dir = out_dir_from_config(cfg);

    std::vector<std::pair<std::string, std::string>> files(static_cast<std::size_t>(replicates));
    parallel_for_index(files.size(), threads, [&](std::size_t r) {
        FvRun run;
        try {
            run = simulate_fv(m, n, s0, s1, split_seed(seed, r), types);
        } catch (const std::invalid_argument& e) {
            throw CliError{1, e.what()};
        }
        const std::string graph_name = "graph_" + std::to_string(r) + ".jsonl";
        files[r].first = with_config_comment(to_jsonl(run.graph), comment);
        files[r].second = with_config_comment(to_jsonl(run, graph_name), comment);
    });
    for (std::size_t r = 0; r < files.size(); ++r) {
        write_text_file(dir / ("graph_" + std::to_string(r) + ".jsonl"), files[r].first);
        write_text_file(dir / ("fv_" + std::to_string(r) + ".jsonl"), files[r].second);
    }
    out << "wrote " << files.size() << " graph/run pair(s) under " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eves

inline int cmd_eves(const json& cfg, std::ostream& out) {
    check_keys(cfg,
               {"command", "measure", "n", "seed", "threshold", "first_horizon", "max_doublings",
                "run", "threads", "out"},
               "the eves config");
    const double threshold =
        cfg.contains("threshold") ? get_number(cfg.at("threshold"), "threshold") : 0.99;
    if (!(threshold > 0.0) || threshold > 1.0) bad_spec("'threshold' must lie in (0, 1]");
    const std::string hash = config_hash(cfg);

    EveReport report;
    std::uint64_t seed = 0;
    if (cfg.contains("run")) {
        for (const char* k : {"measure", "n", "seed", "first_horizon", "max_doublings"})
            if (cfg.contains(k))
                bad_spec(std::string("'") + k +
                         "' cannot be combined with 'run': the run file already carries it");
        const json& rv = cfg.at("run");
        if (!rv.is_string()) bad_spec("'run' must be a file path string");
        const std::filesystem::path run_path(rv.get<std::string>());
        std::ifstream run_in(run_path);
        if (!run_in) bad_spec("cannot open run file '" + run_path.string() + "'");
        FvRunFile file;
        try {
            file = parse_fv_run(run_in);
        } catch (const std::invalid_argument& e) {
            bad_spec(e.what());
        }
        const std::filesystem::path graph_path = run_path.parent_path() / file.graph_ref;
        std::ifstream graph_in(graph_path);
        if (!graph_in)
            bad_spec("cannot open graph file '" + graph_path.string() + "' referenced by '" +
                     run_path.string() + "'");
        FvRun run;
        try {
            run = assemble_fv_run(file, parse_lookdown_graph(graph_in));
        } catch (const std::invalid_argument& e) {
            bad_spec(e.what());
        }
        seed = file.seed;
        report = extract_eves(run, threshold);
    } else {
        const LambdaMeasure m = measure_from_config(require_key(cfg, "measure", "eves"));
        const int n =
            static_cast<int>(get_integer(require_key(cfg, "n", "eves"), "n", 1, 1000000));
        seed = get_seed(cfg, "eves");
        const double first_horizon =
            cfg.contains("first_horizon") ? get_number(cfg.at("first_horizon"), "first_horizon")
                                          : 1.0;
        const int max_doublings =
            cfg.contains("max_doublings")
                ? static_cast<int>(get_integer(cfg.at("max_doublings"), "max_doublings", 0, 60))
                : 12;
        try {
            report = extract_eves_adaptive(m, n, seed, threshold, first_horizon, max_doublings);
        } catch (const std::invalid_argument& e) {
            throw CliError{1, e.what()};
        }
    }
    emit_json(cfg, "eves",
              "{\"config\":\"" + hash + "\",\"seed\":" + format_u64(seed) +
                  ",\"eves\":" + to_json(report) + "}",
              out);
    return 0;
}

// ---------------------------------------------------------------------------
// validate / speed

struct GateConfig {
    double z = 3.0;
    double tv = 0.02;
    double ks = 0.001;
    double spearman = 0.01;
    double band = 0.15;
};

inline GateConfig gates_from_config(const json& cfg) {
    GateConfig g;
    if (!cfg.contains("thresholds")) return g;
    const json& t = cfg.at("thresholds");
    if (!t.is_object()) bad_spec("'thresholds' must be an object");
    check_keys(t, {"z", "tv", "ks", "spearman", "band"}, "'thresholds'");
    if (t.contains("z")) g.z = get_number(t.at("z"), "thresholds.z");
    if (t.contains("tv")) g.tv = get_number(t.at("tv"), "thresholds.tv");
    if (t.contains("ks")) g.ks = get_number(t.at("ks"), "thresholds.ks");
    if (t.contains("spearman")) g.spearman = get_number(t.at("spearman"), "thresholds.spearman");
    if (t.contains("band")) g.band = get_number(t.at("band"), "thresholds.band");
    return g;
}

/// Smallest t with v(t) <= target, by bisection on the decreasing speed.
inline double invert_speed(const LambdaMeasure& m, double target) {
    double lo = 1e-9;
    while (cdi_speed(m, lo) < target) {
        lo *= 0.25;
        if (lo < 1e-300) bad_spec("speed inversion cannot bracket the target from below");
    }
    double hi = 1.0;
    while (cdi_speed(m, hi) > target) {
        hi *= 4.0;
        if (hi > 1e12) bad_spec("speed inversion cannot bracket the target from above");
    }
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        (cdi_speed(m, mid) > target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Default grid for speed checks: the times where the speed passes 12 and 5,
/// deep enough that starting from level n instead of infinity no longer
/// biases the mean block count.
inline std::vector<double> default_speed_grid(const LambdaMeasure& m) {
    return {invert_speed(m, 12.0), invert_speed(m, 5.0)};
}

inline std::string reports_payload(const std::string& hash, std::uint64_t seed,
                                   const std::vector<TestReport>& reports) {
    return "{\"config\":\"" + hash + "\",\"seed\":" + format_u64(seed) +
           ",\"reports\":" + to_json(reports) + "}";
}

inline int cmd_validate(const json& cfg, std::ostream& out) {
    check_keys(cfg,
               {"command", "measure", "seed", "replicates", "tests", "controls", "thresholds",
                "threads", "out"},
               "the validate config");
    const LambdaMeasure m = measure_from_config(require_key(cfg, "measure", "validate"));
    const std::uint64_t seed = get_seed(cfg, "validate");
    const GateConfig gates = gates_from_config(cfg);
    const bool controls = cfg.contains("controls") && [&] {
        if (!cfg.at("controls").is_boolean()) bad_spec("'controls' must be a boolean");
        return cfg.at("controls").get<bool>();
    }();
    const std::optional<int> replicates =
        cfg.contains("replicates")
            ? std::optional<int>(static_cast<int>(
                  get_integer(cfg.at("replicates"), "replicates", 1, 100000000)))
            : std::nullopt;
    const unsigned threads = threads_from_config(cfg);
    const std::string hash = config_hash(cfg);

    const RegimeClass rc = classify(m); // UndecidedError propagates to exit 2
    const bool discrete = rc.regime == Regime::Discrete;
    const bool cdi = rc.regime == Regime::ComesDownFromInfinity;

    std::set<std::string> selected;
    if (cfg.contains("tests")) {
        const json& arr = cfg.at("tests");
        if (!arr.is_array()) bad_spec("'tests' must be an array of test ids");
        for (const json& v : arr) {
            if (!v.is_string()) bad_spec("'tests' entries must be strings");
            const std::string name = v.get<std::string>();
            if (name != "rate_match" && name != "duality" && name != "exchangeability" &&
                name != "eve_uniformity" && name != "cdi_speed")
                bad_spec("unknown test id '" + name + "'");
            if (name == "duality" && !discrete)
                bad_spec("the duality test needs a DISCRETE measure, got " +
                         regime_name(rc.regime));
            if ((name == "eve_uniformity" || name == "cdi_speed") && !cdi)
                bad_spec("the " + name + " test needs a CDI measure, got " +
                         regime_name(rc.regime));
            selected.insert(name);
        }
    }
    const auto wanted = [&](const char* name) {
        return selected.empty() || selected.count(name) > 0;
    };

    std::vector<std::function<std::vector<TestReport>()>> jobs;
    if (wanted("rate_match"))
        jobs.push_back([=] {
            return std::vector<TestReport>{rate_match_test(m, 4, replicates.value_or(1000),
                                                           split_seed(seed, 1),
                                                           controls ? 1.15 : 1.0, gates.z)};
        });
    if (discrete && wanted("duality"))
        jobs.push_back([=] {
            return std::vector<TestReport>{duality_test(m, 5, 1.0, replicates.value_or(20000),
                                                        split_seed(seed, 2),
                                                        controls ? 1.5 : 0.0, gates.tv)};
        });
    if (wanted("exchangeability")) {
        if (controls) {
            jobs.push_back([=] {
                return std::vector<TestReport>{exchangeability_test(
                    PartitionSource::BiasedControl, m, 4, 0.7, replicates.value_or(20000),
                    split_seed(seed, 3), gates.tv)};
            });
        } else {
            jobs.push_back([=] {
                return std::vector<TestReport>{
                    exchangeability_test(PartitionSource::Coalescent, m, 4, 0.7,
                                         replicates.value_or(50000), split_seed(seed, 3),
                                         gates.tv)};
            });
            jobs.push_back([=] {
                return std::vector<TestReport>{
                    exchangeability_test(PartitionSource::Lookdown, m, 4, 0.7,
                                         replicates.value_or(50000), split_seed(seed, 4),
                                         gates.tv)};
            });
        }
    }
    if (cdi && wanted("eve_uniformity"))
        jobs.push_back([=] {
            return std::vector<TestReport>{
                eve_uniformity_test(m, 30, replicates.value_or(400), split_seed(seed, 5),
                                    controls ? 2.0 : 1.0, gates.ks, gates.spearman)};
        });
    if (cdi && wanted("cdi_speed"))
        jobs.push_back([=] {
            return speed_test(m, 5000, default_speed_grid(m), replicates.value_or(200),
                              split_seed(seed, 6), gates.band, controls ? 1.4 : 1.0);
        });

    std::vector<std::vector<TestReport>> slots(jobs.size());
    parallel_for_index(jobs.size(), threads, [&](std::size_t i) { slots[i] = jobs[i](); });
    std::vector<TestReport> reports;
    for (auto& slot : slots)
        for (auto& rep : slot) reports.push_back(std::move(rep));
    sort_reports(reports);

    emit_json(cfg, "validate", reports_payload(hash, seed, reports), out);
    return any_failed(reports) ? 1 : 0;
}

inline int cmd_speed(const json& cfg, std::ostream& out) {
    check_keys(cfg,
               {"command", "measure", "n", "t_grid", "replicates", "seed", "band", "oracle_scale",
                "threads", "out"},
               "the speed config");
    const LambdaMeasure m = measure_from_config(require_key(cfg, "measure", "speed"));
    const int n = cfg.contains("n")
                      ? static_cast<int>(get_integer(cfg.at("n"), "n", 2, 10000000))
                      : 5000;
    const std::uint64_t seed = get_seed(cfg, "speed");
    const int replicates =
        cfg.contains("replicates")
            ? static_cast<int>(get_integer(cfg.at("replicates"), "replicates", 1, 100000000))
            : 200;
    const double band = cfg.contains("band") ? get_number(cfg.at("band"), "band") : 0.15;
    const double oracle_scale =
        cfg.contains("oracle_scale") ? get_number(cfg.at("oracle_scale"), "oracle_scale") : 1.0;
    std::vector<double> grid;
    if (cfg.contains("t_grid")) {
        const json& arr = cfg.at("t_grid");
        if (!arr.is_array() || arr.empty()) bad_spec("'t_grid' must be a nonempty number array");
        for (const json& v : arr) grid.push_back(get_number(v, "t_grid entry"));
    }
    const std::string hash = config_hash(cfg);

    std::vector<TestReport> reports;
    try {
        if (grid.empty()) grid = default_speed_grid(m);
        reports = speed_test(m, n, grid, replicates, seed, band, oracle_scale);
    } catch (const std::domain_error& e) {
        throw CliError{1, e.what()};
    } catch (const std::invalid_argument& e) {
        throw CliError{1, e.what()};
    }
    emit_json(cfg, "speed", reports_payload(hash, seed, reports), out);
    if (any_failed(reports)) return 1;
    return any_undecided(reports) ? 2 : 0;
}

// ---------------------------------------------------------------------------

/// Parses arguments (program name excluded), runs the command, and returns
/// the process exit code: 0 success, 1 bad spec or I/O failure or FAIL
/// verdicts, 2 undecided classification (or all-UNDECIDED speed grids).
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Lambda-coalescent simulation and validation toolkit"};
    app.name("lambda_flows");
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_flag;
    std::optional<std::string> out_flag;
    std::optional<int> replicates_flag;
    std::optional<int> threads_flag;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"classify", "Print the regime decision for a measure"},
        {"coalescent", "Jump-chain replicates to CSV (TMRCA per row)"},
        {"lookdown", "Sample reproduction graphs to JSONL"},
        {"fv", "Sample graph plus measure-valued path files"},
        {"eves", "Rank ancestor types from a run file or adaptively"},
        {"validate", "Run the statistical test battery"},
        {"speed", "Check block counts against the comedown speed"},
    };
    for (const auto& [name, description] : commands) {
        CLI::App* sub = app.add_subcommand(name, description);
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed_flag, "Root seed (overrides the config)");
        sub->add_option("--out", out_flag, "Output directory (overrides the config)");
        sub->add_option("--replicates", replicates_flag, "Replicates (overrides the config)");
        sub->add_option("--threads", threads_flag, "Worker threads (overrides the config)");
    }

    std::reverse(args.begin(), args.end());
    try {
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp&) {
        const auto parsed = app.get_subcommands();
        out << (parsed.empty() ? app.help() : parsed.front()->help());
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "lambda_flows: " << e.what() << "\n";
        return 1;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        json cfg = config_path.empty() ? json::object() : load_config_file(config_path);
        if (cfg.contains("command")) {
            if (!cfg.at("command").is_string() || cfg.at("command").get<std::string>() != command)
                bad_spec("config 'command' does not match the requested command '" + command +
                         "'");
        }
        cfg["command"] = command;
        if (seed_flag) cfg["seed"] = *seed_flag;
        if (out_flag) cfg["out"] = *out_flag;
        if (replicates_flag) {
            if (*replicates_flag < 1) bad_spec("--replicates must be positive");
            cfg["replicates"] = *replicates_flag;
        }
        if (threads_flag) {
            if (*threads_flag < 1) bad_spec("--threads must be positive");
            cfg["threads"] = *threads_flag;
        }

        if (command == "classify") return cmd_classify(cfg, out);
        if (command == "coalescent") return cmd_coalescent(cfg, out);
        if (command == "lookdown") return cmd_lookdown(cfg, out);
        if (command == "fv") return cmd_fv(cfg, out);
        if (command == "eves") return cmd_eves(cfg, out);
        if (command == "validate") return cmd_validate(cfg, out);
        return cmd_speed(cfg, out);
    } catch (const CliError& e) {
        err << "lambda_flows: " << e.message << "\n";
        return e.code;
    } catch (const UndecidedError& e) {
        err << "lambda_flows: undecided: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "lambda_flows: " << e.what() << "\n";
        return 1;
    }
}

} // namespace lambda_flows::cli
