#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lambda_flows/lookdown.hpp"
#include "lambda_flows/measure.hpp"
#include "lambda_flows/rng.hpp"

namespace lambda_flows {

/// Measure-valued sample path of the type distribution carried by one
/// lookdown graph. `path` holds the state at s0 followed by the state right
/// after each event, in event order; it stays empty when the run is sampled
/// with store_path=false (ancestry-only sweeps).
struct FvRun {
    LambdaMeasure measure;
    int n = 0;
    double s0 = 0.0;
    double s1 = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> initial_types;
    LookdownGraphN graph;
    std::vector<std::pair<double, MeasureState>> path;
};

namespace detail {

/// Draws n distinct uniforms from one stream; the collision loop is a
/// formality at double precision but keeps the distinctness contract exact.
inline std::vector<double> distinct_uniform_types(int n, std::uint64_t seed) {
    RandomStream rng(seed);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n));
    while (static_cast<int>(out.size()) < n) {
        const double x = rng.uniform01();
        if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
    }
    return out;
}

}  // namespace detail

/// Runs the measure-valued process on n levels over (s0, s1]. The graph is
/// sampled from split_seed(seed, 0) and default initial types are i.i.d.
/// uniform from split_seed(seed, 1), so one seed pins the whole run. With
/// store_path=false only the graph and the initial types are kept.
inline FvRun simulate_fv(const LambdaMeasure& m, int n, double s0, double s1,
                         std::uint64_t seed, std::vector<double> initial_types = {},
                         bool store_path = true,
                         std::uint64_t max_events = detail::kDefaultStepCap) {
    FvRun run;
    run.measure = m;
    run.n = n;
    run.s0 = s0;
    run.s1 = s1;
    run.seed = seed;
    run.graph = sample_graph(m, n, s0, s1, split_seed(seed, 0), max_events);
    if (initial_types.empty()) {
        initial_types = detail::distinct_uniform_types(n, split_seed(seed, 1));
    } else if (static_cast<int>(initial_types.size()) != n) {
        throw std::invalid_argument("simulate_fv: need exactly one initial type per level");
    }
    detail::require_distinct_types(initial_types, "simulate_fv");
    run.initial_types = std::move(initial_types);
    if (!store_path) return run;

    // One label per level pointing at its current ancestor; an event edits
    // the ancestor-count multiset in O(p) and the labels in O(n).
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::iota(labels.begin(), labels.end(), 1);
    std::vector<int> counts(static_cast<std::size_t>(n), 1);
    run.path.reserve(run.graph.events.size() + 1);
    run.path.emplace_back(s0, detail::measure_from_counts(counts, run.initial_types, n));
    for (const auto& ev : run.graph.events) {
        const int p = static_cast<int>(ev.levels.size());
        const int parent = labels[static_cast<std::size_t>(ev.levels.front() - 1)];
        for (int j = n - p + 2; j <= n; ++j)
            --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(j - 1)] - 1)];
        counts[static_cast<std::size_t>(parent - 1)] += p - 1;
        detail::push_types_up(labels, ev.levels);
        run.path.emplace_back(ev.t, detail::measure_from_counts(counts, run.initial_types, n));
    }
    return run;
}

/// Two or more ancestral lines leaving [n] at the same event.
struct TieRecord {
    double t = 0.0;
    std::vector<int> ancestors;

    friend bool operator==(const TieRecord& a, const TieRecord& b) {
        return a.t == b.t && a.ancestors == b.ancestors;
    }
};

/// Ancestor-indexed extinction bookkeeping for one graph. Ancestor i is the
/// line started by the level-i occupant at s0; it is extinct once its block
/// minimum leaves [n]. Deaths arrive in suffix batches (highest surviving
/// ancestors first), so death times are nonincreasing in the ancestor index
/// and ancestor 1 never dies.
struct ExtinctionSchedule {
    int n = 0;
    int alive_at_end = 0;
    std::vector<std::optional<double>> death_time;
    std::vector<TieRecord> ties;
    std::optional<double> fixation_time;
};

namespace detail {

/// Shared minima walk behind the graph and streaming schedules. `next`
/// returns a pointer to the next event or nullptr when the window ends; the
/// walk stops early once a single line remains, after which nothing can
/// change.
template <typename NextEvent>
inline ExtinctionSchedule walk_extinctions(int n, NextEvent&& next) {
    ExtinctionSchedule out;
    out.n = n;
    out.death_time.assign(static_cast<std::size_t>(n), std::nullopt);
    std::vector<int> minima(static_cast<std::size_t>(n));
    std::iota(minima.begin(), minima.end(), 1);
    const ReproductionEvent* ev = nullptr;
    while (minima.size() > 1 && (ev = next()) != nullptr) {
        const std::size_t died = advance_minima(minima, ev->levels, n);
        if (died == 0) continue;
        const std::size_t alive = minima.size();
        for (std::size_t k = 0; k < died; ++k)
            out.death_time[alive + k] = ev->t;
        if (died >= 2) {
            TieRecord tie;
            tie.t = ev->t;
            tie.ancestors.reserve(died);
            for (std::size_t k = 0; k < died; ++k)
                tie.ancestors.push_back(static_cast<int>(alive + k) + 1);
            out.ties.push_back(std::move(tie));
        }
        if (alive == 1) out.fixation_time = ev->t;
    }
    out.alive_at_end = static_cast<int>(minima.size());
    return out;
}

}  // namespace detail

/// Death times, tie batches and fixation for the lines of a sampled graph.
inline ExtinctionSchedule extinction_schedule(const LookdownGraphN& g) {
    auto it = g.events.begin();
    return detail::walk_extinctions(g.n, [&]() -> const ReproductionEvent* {
        return it == g.events.end() ? nullptr : &*it++;
    });
}

/// Same schedule from a live event stream, never materializing the graph.
/// Runs until all lines but one are extinct or the cap trips; useful for
/// sweeps whose windows would hold millions of post-fixation events.
inline ExtinctionSchedule stream_extinction_schedule(RateTable& rates, int n, double s0,
                                                     std::uint64_t seed,
                                                     std::uint64_t max_events =
                                                         detail::kDefaultStepCap) {
    detail::EventStream stream(rates, n, s0, seed);
    if (!(stream.rate() > 0.0))
        throw std::invalid_argument(
            "stream_extinction_schedule: the measure produces no events on " +
            std::to_string(n) + " levels");
    std::uint64_t steps = 0;
    ReproductionEvent ev;
    return detail::walk_extinctions(n, [&]() -> const ReproductionEvent* {
        if (steps >= max_events)
            throw std::runtime_error("stream_extinction_schedule exceeded the event cap of " +
                                     std::to_string(max_events));
        ++steps;
        return stream.next(ev) ? &ev : nullptr;
    });
}

/// First time the whole n-level population descends from a single line.
inline double fixation_time(RateTable& rates, int n, double s0, std::uint64_t seed,
                            std::uint64_t max_events = detail::kDefaultStepCap) {
    return stream_extinction_schedule(rates, n, s0, seed, max_events).fixation_time.value();
}

enum class EveCase { Persistent, Extinction };

inline std::string eve_case_name(EveCase c) {
    return c == EveCase::Extinction ? "EXTINCTION" : "PERSISTENT";
}

/// One ranked type. In the extinction case `evidence` is the extinction time
/// (empty while the line is still alive at the horizon); in the persistent
/// case it is the mass ratio against everything not yet ranked.
struct EveRank {
    int ancestor = 0;
    double location = 0.0;
    std::optional<double> evidence;
};

struct EveReport {
    EveCase regime_case = EveCase::Persistent;
    Regime regime = Regime::Discrete;
    std::vector<EveRank> ordered_eves;
    int resolved_upto = 0;
    std::vector<TieRecord> ties;
    double threshold = 0.0;
    double horizon = 0.0;
    int alive_at_horizon = 0;  // extinction case only; 0 otherwise
};

/// Ranks ancestors straight off an extinction schedule. Ancestor index order
/// is extinction-time order because deaths arrive in suffix batches, so the
/// ranking is the index order with tie-batch members left out and reported
/// separately. resolved_upto counts the leading ranks whose order is already
/// forced by the observed window: it stops at the first tie batch, and at
/// the still-alive lines unless exactly two remain (those two hold ranks one
/// and two no matter when the survivor dies).
inline EveReport extinction_eve_report(const ExtinctionSchedule& sched,
                                       const std::vector<double>& types, double horizon,
                                       Regime regime = Regime::ComesDownFromInfinity,
                                       double threshold = 0.99) {
    if (static_cast<int>(types.size()) != sched.n)
        throw std::invalid_argument("extinction_eve_report: need one type per ancestor");
    EveReport rep;
    rep.regime_case = EveCase::Extinction;
    rep.regime = regime;
    rep.threshold = threshold;
    rep.horizon = horizon;
    rep.ties = sched.ties;
    rep.alive_at_horizon = sched.alive_at_end;
    std::vector<char> tied(static_cast<std::size_t>(sched.n) + 1, 0);
    for (const auto& tie : sched.ties)
        for (int a : tie.ancestors) tied[static_cast<std::size_t>(a)] = 1;
    for (int a = 1; a <= sched.n; ++a) {
        if (tied[static_cast<std::size_t>(a)]) continue;
        EveRank r;
        r.ancestor = a;
        r.location = types[static_cast<std::size_t>(a - 1)];
        r.evidence = sched.death_time[static_cast<std::size_t>(a - 1)];
        rep.ordered_eves.push_back(std::move(r));
    }
    int certified = 0;
    for (int a = 1; a <= sched.n; ++a) {
        if (tied[static_cast<std::size_t>(a)]) break;
        if (a > 1 && !sched.death_time[static_cast<std::size_t>(a - 1)].has_value() &&
            !(sched.alive_at_end == 2 && a == 2))
            break;
        ++certified;
    }
    rep.resolved_upto = certified;
    return rep;
}

/// Ranks the run's initial types by the regime-specific criterion.
///
/// Extinction case (comes-down-from-infinity measures): see
/// extinction_eve_report, fed by the run's reproduction graph.
///
/// Persistent case (everything else): greedy over the horizon state's atoms,
/// heaviest first, each scored by mass over the mass not yet ranked; ranks
/// are certified while that ratio stays at or above `threshold`.
inline EveReport extract_eves_with_regime(const FvRun& run, Regime regime,
                                          double threshold = 0.99) {
    if (static_cast<int>(run.initial_types.size()) != run.n)
        throw std::invalid_argument("extract_eves: run carries no initial types");

    if (regime == Regime::ComesDownFromInfinity)
        return extinction_eve_report(extinction_schedule(run.graph), run.initial_types,
                                     run.s1, regime, threshold);

    EveReport rep;
    rep.regime = regime;
    rep.threshold = threshold;
    rep.horizon = run.s1;

    rep.regime_case = EveCase::Persistent;
    if (run.path.empty())
        throw std::invalid_argument("extract_eves: the persistent ranking needs a stored path");
    std::map<double, int> ancestor_of;
    for (int i = 0; i < run.n; ++i)
        ancestor_of[run.initial_types[static_cast<std::size_t>(i)]] = i + 1;
    std::vector<std::pair<double, double>> atoms = run.path.back().second.atoms;
    std::stable_sort(atoms.begin(), atoms.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    double remaining = 1.0;
    bool chain = true;
    for (const auto& [location, mass] : atoms) {
        EveRank r;
        r.ancestor = ancestor_of.at(location);
        r.location = location;
        const double ratio = remaining > 0.0 ? mass / remaining : 0.0;
        r.evidence = ratio;
        rep.ordered_eves.push_back(std::move(r));
        if (chain && ratio >= threshold)
            ++rep.resolved_upto;
        else
            chain = false;
        remaining -= mass;
    }
    return rep;
}

/// Classifies the run's measure, then ranks. Classification failures on
/// numerically undecidable measures propagate as UndecidedError.
inline EveReport extract_eves(const FvRun& run, double threshold = 0.99) {
    return extract_eves_with_regime(run, classify(run.measure).regime, threshold);
}

/// Re-runs the same seed over geometrically growing windows until the
/// ranking is final: extinction runs stop at full absorption or once a tie
/// batch permanently blocks further certification, persistent runs once
/// resolved_upto repeats a positive value across a doubling. The event
/// stream is seed-deterministic, so each longer window extends the previous
/// one instead of resampling it.
inline EveReport extract_eves_adaptive(const LambdaMeasure& m, int n, std::uint64_t seed,
                                       double threshold = 0.99, double first_horizon = 1.0,
                                       int max_doublings = 12,
                                       std::vector<double> initial_types = {},
                                       std::uint64_t max_events = detail::kDefaultStepCap) {
    if (!(first_horizon > 0.0))
        throw std::invalid_argument("extract_eves_adaptive: horizon must be positive");
    const Regime regime = classify(m).regime;
    const bool extinction = regime == Regime::ComesDownFromInfinity;
    double horizon = first_horizon;
    EveReport rep;
    int previous = -1;
    for (int step = 0; step <= max_doublings; ++step) {
        const FvRun run =
            simulate_fv(m, n, 0.0, horizon, seed, initial_types, !extinction, max_events);
        rep = extract_eves_with_regime(run, regime, threshold);
        if (extinction) {
            if (rep.alive_at_horizon == 1) return rep;
            const int blocking = rep.resolved_upto + 1;
            for (const auto& tie : rep.ties)
                for (int a : tie.ancestors)
                    if (a == blocking) return rep;
        } else if (rep.resolved_upto > 0 && rep.resolved_upto == previous) {
            return rep;
        }
        previous = rep.resolved_upto;
        horizon *= 2.0;
    }
    return rep;
}

/// Event times at which two or more ancestral lines left [n] together.
/// Simultaneous extinction is a statement about the comes-down-from-infinity
/// regime; anything else is a domain error.
inline std::vector<TieRecord> detect_simultaneous_extinction(const FvRun& run) {
    if (classify(run.measure).regime != Regime::ComesDownFromInfinity)
        throw std::domain_error(
            "detect_simultaneous_extinction: only meaningful for measures that come down "
            "from infinity");
    return extinction_schedule(run.graph).ties;
}

struct RegimeDiagnostics {
    Regime regime = Regime::Discrete;
    // Discrete case: jumps of X_t = 1 - (mass of ancestor 1's type).
    std::vector<double> positive_jump_times;
    std::optional<double> last_positive_jump;
    std::vector<std::pair<double, int>> jumps_after_grid;
    // Dusty intensive case with finite u log u integral.
    int never_parent_levels = 0;
};

/// Regime-specific checks. For atomic measures it records every time the
/// mass at the primitive type (ancestor 1's) drops, i.e. every positive jump
/// of its complement X_t, plus how many of those fall strictly after each
/// grid time. For dust-carrying intensive measures with a finite u log u
/// integral it counts the levels of [n] never chosen as an event's parent.
/// Every other regime is a domain error.
inline RegimeDiagnostics regime_diagnostics(const FvRun& run,
                                            const std::vector<double>& grid = {}) {
    const RegimeClass rc = classify(run.measure);
    RegimeDiagnostics out;
    out.regime = rc.regime;
    if (rc.regime == Regime::Discrete) {
        const int n = run.n;
        std::vector<int> labels(static_cast<std::size_t>(n));
        std::iota(labels.begin(), labels.end(), 1);
        for (const auto& ev : run.graph.events) {
            const int p = static_cast<int>(ev.levels.size());
            const int parent = labels[static_cast<std::size_t>(ev.levels.front() - 1)];
            int delta = parent == 1 ? p - 1 : 0;
            for (int j = n - p + 2; j <= n; ++j)
                if (labels[static_cast<std::size_t>(j - 1)] == 1) --delta;
            detail::push_types_up(labels, ev.levels);
            if (delta < 0) out.positive_jump_times.push_back(ev.t);
        }
        if (!out.positive_jump_times.empty())
            out.last_positive_jump = out.positive_jump_times.back();
        out.jumps_after_grid.reserve(grid.size());
        for (const double g : grid) {
            const auto lo = std::upper_bound(out.positive_jump_times.begin(),
                                             out.positive_jump_times.end(), g);
            out.jumps_after_grid.emplace_back(
                g, static_cast<int>(out.positive_jump_times.end() - lo));
        }
        return out;
    }
    if (rc.regime == Regime::IntensiveWithDust && rc.u_log_u_finite == TriState::True) {
        std::vector<char> parent(static_cast<std::size_t>(run.n) + 1, 0);
        for (const auto& ev : run.graph.events)
            parent[static_cast<std::size_t>(ev.levels.front())] = 1;
        out.never_parent_levels =
            run.n - static_cast<int>(std::count(parent.begin() + 1, parent.end(), char(1)));
        return out;
    }
    throw std::domain_error(
        "regime_diagnostics: defined for atomic measures and for dust-carrying intensive "
        "measures with a finite u log u integral");
}

/// Replays the measure path from the flow of partitions and the initial
/// types alone: at each event time every surviving ancestral block puts its
/// level frequency at its founder's type and singletons land in dust. The
/// per-level type walk of simulate_fv never enters here, so agreement with a
/// stored path cross-checks the two decompositions against each other.
inline std::vector<std::pair<double, MeasureState>> rebuild_measure_path(
    const LookdownGraphN& graph, const std::vector<double>& founder_types) {
    if (static_cast<int>(founder_types.size()) != graph.n)
        throw std::invalid_argument("rebuild_measure_path: need one founder type per level");
    detail::require_distinct_types(founder_types, "rebuild_measure_path");
    std::vector<std::pair<double, MeasureState>> out;
    PartitionN acc = partition_identity(graph.n);
    std::vector<int> counts(static_cast<std::size_t>(graph.n));
    const auto emit = [&](double t) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t b = 0; b < acc.blocks.size(); ++b)
            counts[b] = static_cast<int>(acc.blocks[b].size());
        out.emplace_back(t, detail::measure_from_counts(counts, founder_types, graph.n));
    };
    out.reserve(graph.events.size() + 1);
    emit(graph.s0);
    for (const auto& ev : graph.events) {
        acc = coag(encode_single_block(ev.levels, graph.n), acc);
        emit(ev.t);
    }
    return out;
}

/// Run file: a header naming the window, seed, measure label and the graph
/// file the run was built from, the initial types, then one JSON line per
/// path state.
inline std::string to_jsonl(const FvRun& run, const std::string& graph_ref) {
    std::string out = "# lambda_flows fv_run n=" + std::to_string(run.n);
    out += " s0=" + format_double(run.s0);
    out += " s1=" + format_double(run.s1);
    out += " seed=" + format_u64(run.seed);
    out += " measure=" + run.measure.label();
    out += " graph=" + graph_ref + "\n";
    out += "# initial";
    for (const double x : run.initial_types) out += " " + format_double(x);
    out += "\n";
    for (const auto& [t, state] : run.path) {
        out += "{\"t\":" + format_double(t) + ",\"atoms\":[";
        for (std::size_t i = 0; i < state.atoms.size(); ++i) {
            if (i > 0) out += ",";
            out += "[" + format_double(state.atoms[i].first) + "," +
                   format_double(state.atoms[i].second) + "]";
        }
        out += "],\"dust\":" + format_double(state.dust) + "}\n";
    }
    return out;
}

/// Parsed form of a run file. The measure comes back as its label; use
/// measure_from_label plus the referenced graph file to reassemble a live
/// FvRun.
struct FvRunFile {
    int n = 0;
    double s0 = 0.0;
    double s1 = 0.0;
    std::uint64_t seed = 0;
    std::string measure_label;
    std::string graph_ref;
    std::vector<double> initial_types;
    std::vector<std::pair<double, MeasureState>> path;
};

inline FvRunFile parse_fv_run(std::istream& in) {
    FvRunFile file;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# lambda_flows fv_run ", 0) != 0)
        throw std::invalid_argument("parse_fv_run: missing fv_run header line");
    std::size_t pos = std::char_traits<char>::length("# lambda_flows fv_run ");
    bool saw_n = false, saw_s0 = false, saw_s1 = false, saw_seed = false, saw_measure = false,
         saw_graph = false;
    while (pos < line.size()) {
        if (line[pos] == ' ') {
            ++pos;
            continue;
        }
        const std::size_t eq = line.find('=', pos);
        if (eq == std::string::npos)
            throw std::invalid_argument("parse_fv_run: malformed header field in: " + line);
        const std::string key = line.substr(pos, eq - pos);
        pos = eq + 1;
        if (key == "graph") {
            file.graph_ref = line.substr(pos);
            pos = line.size();
            saw_graph = true;
            continue;
        }
        const std::size_t end = std::min(line.find(' ', pos), line.size());
        const std::string value = line.substr(pos, end - pos);
        if (key == "n") {
            file.n = static_cast<int>(std::strtol(value.c_str(), nullptr, 10));
            saw_n = true;
        } else if (key == "s0") {
            std::size_t p = 0;
            file.s0 = detail::parse_number(value, p, "parse_fv_run", "s0");
            saw_s0 = true;
        } else if (key == "s1") {
            std::size_t p = 0;
            file.s1 = detail::parse_number(value, p, "parse_fv_run", "s1");
            saw_s1 = true;
        } else if (key == "seed") {
            file.seed = std::strtoull(value.c_str(), nullptr, 10);
            saw_seed = true;
        } else if (key == "measure") {
            file.measure_label = value;
            saw_measure = true;
        } else {
            throw std::invalid_argument("parse_fv_run: unknown header field '" + key + "'");
        }
        pos = end;
    }
    if (!saw_n || !saw_s0 || !saw_s1 || !saw_seed || !saw_measure || !saw_graph)
        throw std::invalid_argument("parse_fv_run: incomplete header: " + line);
    if (file.n < 1) throw std::invalid_argument("parse_fv_run: need at least one level");
    if (!(file.s1 >= file.s0))
        throw std::invalid_argument("parse_fv_run: window end precedes its start");

    if (!std::getline(in, line) || line.rfind("# initial", 0) != 0)
        throw std::invalid_argument("parse_fv_run: missing initial-types line");
    pos = std::char_traits<char>::length("# initial");
    file.initial_types.reserve(static_cast<std::size_t>(file.n));
    while (pos < line.size()) {
        if (line[pos] == ' ') {
            ++pos;
            continue;
        }
        file.initial_types.push_back(
            detail::parse_number(line, pos, "parse_fv_run", "initial type"));
    }
    if (static_cast<int>(file.initial_types.size()) != file.n)
        throw std::invalid_argument("parse_fv_run: expected " + std::to_string(file.n) +
                                    " initial types, got " +
                                    std::to_string(file.initial_types.size()));
    detail::require_distinct_types(file.initial_types, "parse_fv_run");

    double prev_t = file.s0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        pos = 0;
        detail::expect_token(line, pos, "parse_fv_run", "{\"t\":");
        const double t = detail::parse_number(line, pos, "parse_fv_run", "time");
        detail::expect_token(line, pos, "parse_fv_run", ",\"atoms\":[");
        MeasureState state;
        double mass_sum = 0.0;
        while (pos < line.size() && line[pos] == '[') {
            ++pos;
            const double x = detail::parse_number(line, pos, "parse_fv_run", "atom location");
            detail::expect_token(line, pos, "parse_fv_run", ",");
            const double mass = detail::parse_number(line, pos, "parse_fv_run", "atom mass");
            detail::expect_token(line, pos, "parse_fv_run", "]");
            if (!(x >= 0.0) || !(x <= 1.0))
                throw std::invalid_argument("parse_fv_run: atom location outside [0,1] in: " +
                                            line);
            if (!(mass > 0.0))
                throw std::invalid_argument("parse_fv_run: atom mass must be positive in: " +
                                            line);
            state.atoms.emplace_back(x, mass);
            mass_sum += mass;
            if (pos < line.size() && line[pos] == ',') ++pos;
        }
        detail::expect_token(line, pos, "parse_fv_run", "],\"dust\":");
        state.dust = detail::parse_number(line, pos, "parse_fv_run", "dust");
        detail::expect_token(line, pos, "parse_fv_run", "}");
        if (pos != line.size())
            throw std::invalid_argument("parse_fv_run: trailing characters in: " + line);
        if (!(state.dust >= 0.0))
            throw std::invalid_argument("parse_fv_run: dust must be non-negative in: " + line);
        if (std::abs(mass_sum + state.dust - 1.0) > 1e-9)
            throw std::invalid_argument("parse_fv_run: state mass does not sum to one in: " +
                                        line);
        const bool first = file.path.empty();
        if (first ? t != file.s0 : !(t > prev_t))
            throw std::invalid_argument(first
                                            ? "parse_fv_run: first state must sit at s0"
                                            : "parse_fv_run: state times must increase");
        if (!(t <= file.s1))
            throw std::invalid_argument("parse_fv_run: state time beyond the window end");
        prev_t = t;
        file.path.emplace_back(t, std::move(state));
    }
    return file;
}

/// Reassembles a live run from a parsed run file and its graph. Runs over
/// custom or mixture measures cannot come back this way: their labels carry
/// no parameters.
inline FvRun assemble_fv_run(const FvRunFile& file, LookdownGraphN graph) {
    if (graph.n != file.n || graph.s0 != file.s0 || graph.s1 != file.s1)
        throw std::invalid_argument(
            "assemble_fv_run: the graph does not match the run file's window");
    FvRun run;
    run.measure = measure_from_label(file.measure_label);
    run.n = file.n;
    run.s0 = file.s0;
    run.s1 = file.s1;
    run.seed = file.seed;
    run.initial_types = file.initial_types;
    run.graph = std::move(graph);
    run.path = file.path;
    return run;
}

inline std::string to_json(const EveReport& rep) {
    std::string out = "{\"regime_case\":\"" + eve_case_name(rep.regime_case) + "\"";
    out += ",\"regime\":\"" + regime_name(rep.regime) + "\"";
    out += ",\"resolved_upto\":" + std::to_string(rep.resolved_upto);
    out += ",\"threshold\":" + format_double(rep.threshold);
    out += ",\"horizon\":" + format_double(rep.horizon);
    out += ",\"alive_at_horizon\":" + std::to_string(rep.alive_at_horizon);
    out += ",\"ordered_eves\":[";
    for (std::size_t i = 0; i < rep.ordered_eves.size(); ++i) {
        const EveRank& r = rep.ordered_eves[i];
        if (i > 0) out += ",";
        out += "{\"ancestor\":" + std::to_string(r.ancestor);
        out += ",\"location\":" + format_double(r.location);
        out += ",\"evidence\":" + (r.evidence ? format_double(*r.evidence) : "null") + "}";
    }
    out += "],\"ties\":[";
    for (std::size_t i = 0; i < rep.ties.size(); ++i) {
        if (i > 0) out += ",";
        out += "{\"t\":" + format_double(rep.ties[i].t) + ",\"ancestors\":[";
        for (std::size_t k = 0; k < rep.ties[i].ancestors.size(); ++k) {
            if (k > 0) out += ",";
            out += std::to_string(rep.ties[i].ancestors[k]);
        }
        out += "]}";
    }
    out += "]}";
    return out;
}

}  // namespace lambda_flows
