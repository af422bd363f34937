#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lambda_flows/coalescent.hpp"
#include "lambda_flows/io.hpp"
#include "lambda_flows/measure.hpp"
#include "lambda_flows/partition.hpp"
#include "lambda_flows/rng.hpp"

namespace lambda_flows {

/// One reproduction event on n ordered levels: every level in `levels`
/// simultaneously receives the type sitting at the smallest participating
/// level, and the displaced occupants shift upward keeping their order, the
/// top ones falling off the window of n levels. Levels are sorted, distinct,
/// at least two of them.
struct ReproductionEvent {
    double t = 0.0;
    std::vector<int> levels;
};

/// Poisson collection of reproduction events on n levels over the window
/// (s0, s1]. Immutable after sampling: partitions, type trajectories and
/// ancestry below are all pure functions of it.
struct LookdownGraphN {
    int n = 0;
    double s0 = 0.0;
    double s1 = 0.0;
    double event_rate = 0.0;
    std::uint64_t seed = 0;
    std::string measure_label;
    std::vector<ReproductionEvent> events;
};

namespace detail {

inline void validate_levels(const std::vector<int>& levels, int n, const char* what) {
    if (levels.size() < 2)
        throw std::invalid_argument(std::string(what) +
                                    ": a reproduction event needs at least two levels");
    int prev = 0;
    for (int v : levels) {
        if (v <= prev)
            throw std::invalid_argument(std::string(what) +
                                        ": event levels must be strictly increasing and >= 1");
        prev = v;
    }
    if (prev > n)
        throw std::invalid_argument(std::string(what) + ": event level " + std::to_string(prev) +
                                    " exceeds the level count " + std::to_string(n));
}

/// In-place push-up of the per-level values through one event. Walks levels
/// from the top so every read still sees the pre-event value: position i
/// outside the event receives the value from i - (|I cap [i]| - 1), positions
/// inside receive the parent value from min(I).
template <typename T>
inline void push_types_up(std::vector<T>& types, const std::vector<int>& levels) {
    const T parent = types[static_cast<std::size_t>(levels.front() - 1)];
    int k = static_cast<int>(levels.size()) - 1;
    for (int i = static_cast<int>(types.size()); i >= 1 && k >= 0; --i) {
        if (levels[static_cast<std::size_t>(k)] == i) {
            types[static_cast<std::size_t>(i - 1)] = parent;
            --k;
        } else if (k > 0) {
            types[static_cast<std::size_t>(i - 1)] = types[static_cast<std::size_t>(i - 1 - k)];
        }
    }
}

/// Advances the increasing vector of block minima through one event and
/// returns how many blocks died. A minimum at level y moves to the y-th
/// smallest element of [n] minus the non-parent event levels; the map is
/// strictly increasing, so the blocks leaving [n] form a suffix.
inline std::size_t advance_minima(std::vector<int>& minima, const std::vector<int>& levels,
                                  int n) {
    std::size_t consumed = 1;
    const std::size_t first =
        levels.size() < 2
            ? minima.size()
            : static_cast<std::size_t>(
                  std::lower_bound(minima.begin(), minima.end(), levels[1]) - minima.begin());
    for (std::size_t k = first; k < minima.size(); ++k) {
        int x = minima[k] + static_cast<int>(consumed - 1);
        while (consumed < levels.size() && levels[consumed] <= x) {
            x = minima[k] + static_cast<int>(consumed);
            ++consumed;
        }
        if (x > n) {
            const std::size_t died = minima.size() - k;
            minima.resize(k);
            return died;
        }
        minima[k] = x;
    }
    return 0;
}

inline void require_window(const LookdownGraphN& g, double s, double t, const char* what) {
    if (!(s >= g.s0) || !(t <= g.s1) || !(s <= t))
        throw std::invalid_argument(std::string(what) + ": need " + format_double(g.s0) +
                                    " <= s <= t <= " + format_double(g.s1) + ", got s=" +
                                    format_double(s) + " t=" + format_double(t));
}

/// Endless stream of reproduction events for one measure, so that windowed
/// sampling and open-ended walks (absorption searches) share one recipe and
/// one seed convention. Ties from finite precision are nudged up one ulp.
class EventStream {
  public:
    EventStream(RateTable& rates, int n, double start, std::uint64_t seed)
        : rates_(rates), n_(n), t_(start), rng_(seed), rate_(rates.total_rate(n)) {
        if (n < 2) throw std::invalid_argument("EventStream: need at least two levels");
    }

    double rate() const { return rate_; }

    /// False once the total rate is zero; otherwise fills the next event.
    bool next(ReproductionEvent& ev) {
        if (!(rate_ > 0.0)) return false;
        double t = t_ + rng_.exponential(rate_);
        if (t <= t_) t = std::nextafter(t_, std::numeric_limits<double>::infinity());
        t_ = t;
        ev.t = t;
        const int p = rates_.sample_p(n_, rng_);
        rng_.uniform_subset(n_, p, scratch_, ev.levels);
        return true;
    }

  private:
    RateTable& rates_;
    int n_;
    double t_;
    RandomStream rng_;
    double rate_;
    std::vector<int> scratch_;
};

} // namespace detail

/// Samples the restriction of the event graph to n levels over (s0, s1]:
/// a Poisson number of events at the total merge rate of n blocks, each event
/// holding a group size p drawn with weight C(n,p) * rate(n,p) and a uniform
/// p-subset of levels. A measure with zero merge rate yields an empty graph;
/// callers that consider that suspicious should check event_rate.
inline LookdownGraphN sample_graph(RateTable& rates, int n, double s0, double s1,
                                   std::uint64_t seed,
                                   std::uint64_t max_events = detail::kDefaultStepCap) {
    if (n < 2) throw std::invalid_argument("sample_graph: need at least two levels");
    if (!(s1 >= s0)) throw std::invalid_argument("sample_graph: need s0 <= s1");
    LookdownGraphN g;
    g.n = n;
    g.s0 = s0;
    g.s1 = s1;
    g.seed = seed;
    g.measure_label = rates.measure().label();
    detail::EventStream stream(rates, n, s0, seed);
    g.event_rate = stream.rate();
    ReproductionEvent ev;
    while (stream.next(ev)) {
        if (ev.t > s1) break;
        if (g.events.size() >= max_events)
            throw std::runtime_error("sample_graph exceeded the event cap of " +
                                     std::to_string(max_events));
        g.events.push_back(ev);
    }
    return g;
}

inline LookdownGraphN sample_graph(const LambdaMeasure& m, int n, double s0, double s1,
                                   std::uint64_t seed,
                                   std::uint64_t max_events = detail::kDefaultStepCap) {
    RateTable rates(m);
    return sample_graph(rates, n, s0, s1, seed, max_events);
}

/// One reproduction event applied to the vector of per-level values. Returns
/// the post-event vector; works for any copyable value type (type locations,
/// ancestor labels).
template <typename T>
inline std::vector<T> apply_event(std::vector<T> types, const std::vector<int>& levels) {
    detail::validate_levels(levels, static_cast<int>(types.size()), "apply_event");
    detail::push_types_up(types, levels);
    return types;
}

/// Ancestral partition of the n levels over (s, t]: level j and level k sit
/// in one block when they descend from the same level at time s. Blocks are
/// indexed by their ancestral level: block i is the progeny of the level-i
/// occupant at time s, and a missing index means that line was pushed above
/// n. Composes newest-event-first, so the whole fold is one pass.
inline PartitionN flow_partition(const LookdownGraphN& g, double s, double t) {
    detail::require_window(g, s, t, "flow_partition");
    PartitionN acc = partition_identity(g.n);
    const auto lo = std::upper_bound(
        g.events.begin(), g.events.end(), s,
        [](double v, const ReproductionEvent& e) { return v < e.t; });
    for (auto it = lo; it != g.events.end() && it->t <= t; ++it)
        acc = coag(encode_single_block(it->levels, g.n), acc);
    return acc;
}

/// Per-level types at time t given the types at s0.
inline std::vector<double> evolve(const LookdownGraphN& g, std::vector<double> types, double t) {
    if (static_cast<int>(types.size()) != g.n)
        throw std::invalid_argument("evolve: need exactly one initial type per level");
    detail::require_window(g, g.s0, t, "evolve");
    for (const auto& ev : g.events) {
        if (ev.t > t) break;
        detail::push_types_up(types, ev.levels);
    }
    return types;
}

/// Minima of all blocks of flow_partition(g, s0, t), in block order, computed
/// by one ordered sweep per event instead of building partitions.
inline std::vector<int> lowest_levels(const LookdownGraphN& g, double t) {
    detail::require_window(g, g.s0, t, "lowest_levels");
    std::vector<int> minima(static_cast<std::size_t>(g.n));
    for (int i = 0; i < g.n; ++i) minima[static_cast<std::size_t>(i)] = i + 1;
    for (const auto& ev : g.events) {
        if (ev.t > t) break;
        detail::advance_minima(minima, ev.levels, g.n);
    }
    return minima;
}

/// Lowest level occupied by descendants of the level-i occupant at time s0,
/// or nothing once that line has been pushed above n for good.
inline std::optional<int> lowest_level(const LookdownGraphN& g, int i, double t) {
    if (i < 1 || i > g.n)
        throw std::invalid_argument("lowest_level: level index outside 1..n");
    const std::vector<int> minima = lowest_levels(g, t);
    if (static_cast<std::size_t>(i) > minima.size()) return std::nullopt;
    return minima[static_cast<std::size_t>(i - 1)];
}

/// Atomic-plus-dust snapshot of the empirical type distribution on n levels:
/// one atom per ancestral type occupying at least two levels, dust the
/// fraction of levels still alone in their block. Masses and dust sum to one
/// by construction.
struct MeasureState {
    std::vector<std::pair<double, double>> atoms;
    double dust = 0.0;

    friend bool operator==(const MeasureState& a, const MeasureState& b) {
        return a.dust == b.dust && a.atoms == b.atoms;
    }
    friend bool operator!=(const MeasureState& a, const MeasureState& b) { return !(a == b); }
};

namespace detail {

/// Builds the snapshot from per-ancestor level counts; `types[i-1]` is the
/// type of ancestor i and counts[i-1] its current number of levels (zero once
/// extinct). Atoms appear in ancestor order.
inline MeasureState measure_from_counts(const std::vector<int>& counts,
                                        const std::vector<double>& types, int n) {
    MeasureState out;
    int singles = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 1) ++singles;
        else if (counts[i] >= 2)
            out.atoms.emplace_back(types[i], static_cast<double>(counts[i]) /
                                                 static_cast<double>(n));
    }
    out.dust = static_cast<double>(singles) / static_cast<double>(n);
    return out;
}

inline void require_distinct_types(std::vector<double> types, const char* what) {
    std::sort(types.begin(), types.end());
    if (std::adjacent_find(types.begin(), types.end()) != types.end())
        throw std::invalid_argument(std::string(what) + ": initial types must be distinct");
}

} // namespace detail

/// Empirical type distribution seen at time t when the n levels start from
/// the given distinct types at time s.
inline MeasureState empirical_measure(const LookdownGraphN& g, const std::vector<double>& types,
                                      double s, double t) {
    if (static_cast<int>(types.size()) != g.n)
        throw std::invalid_argument("empirical_measure: need exactly one type per level");
    detail::require_distinct_types(types, "empirical_measure");
    const PartitionN pi = flow_partition(g, s, t);
    std::vector<int> counts(types.size(), 0);
    for (std::size_t i = 0; i < pi.blocks.size(); ++i)
        counts[i] = static_cast<int>(pi.blocks[i].size());
    return detail::measure_from_counts(counts, types, g.n);
}

/// Recovers the unique reproduction event turning `after` into `before`,
/// where both partitions group the n levels by ancestry towards a common
/// later time and `before` extends the ancestry across exactly one more
/// event. Returns the event's levels as indices into the blocks of `after`.
inline std::vector<int> reconstruct_event(const PartitionN& before, const PartitionN& after) {
    if (before.n != after.n)
        throw std::invalid_argument("reconstruct_event: partitions cover different level counts");
    if (before == after)
        throw std::invalid_argument("reconstruct_event: partitions are equal, no event between");
    const std::vector<int> owner = detail::block_ids(before);
    std::vector<std::vector<int>> grouped(before.blocks.size());
    for (std::size_t j = 0; j < after.blocks.size(); ++j) {
        const int head = after.blocks[j].front();
        grouped[static_cast<std::size_t>(owner[static_cast<std::size_t>(head)] - 1)]
            .push_back(static_cast<int>(j) + 1);
    }
    const std::vector<int>* merged = nullptr;
    for (const auto& grp : grouped) {
        if (grp.size() < 2) continue;
        if (merged != nullptr)
            throw std::invalid_argument(
                "reconstruct_event: more than one block merged, not a single event");
        merged = &grp;
    }
    if (merged == nullptr)
        throw std::invalid_argument("reconstruct_event: no merged block between the partitions");
    const PartitionN event = encode_single_block(*merged, after.block_count());
    if (!(coag(after, event) == before))
        throw std::invalid_argument(
            "reconstruct_event: transition is not a single reproduction event");
    return *merged;
}

/// Line format: one `#`-prefixed header with the level count, window, total
/// rate, seed and measure label, then one JSON object {"t":..,"levels":[..]}
/// per event. Times use shortest round-trip form, so replay is bit-exact.
inline std::string to_jsonl(const LookdownGraphN& g) {
    std::string out = "# lambda_flows lookdown_graph n=" + std::to_string(g.n) +
                      " s0=" + format_double(g.s0) + " s1=" + format_double(g.s1) +
                      " event_rate=" + format_double(g.event_rate) +
                      " seed=" + format_u64(g.seed) + " measure=" + g.measure_label + "\n";
    for (const auto& ev : g.events) {
        out += "{\"t\":" + format_double(ev.t) + ",\"levels\":[";
        for (std::size_t i = 0; i < ev.levels.size(); ++i) {
            if (i > 0) out += ',';
            out += std::to_string(ev.levels[i]);
        }
        out += "]}\n";
    }
    return out;
}

inline LookdownGraphN parse_lookdown_graph(std::istream& in) {
    LookdownGraphN g;
    std::string line;
    const std::string header = "# lambda_flows lookdown_graph";
    if (!std::getline(in, line) || line.rfind(header, 0) != 0)
        throw std::invalid_argument("parse_lookdown_graph: missing lookdown_graph header line");
    std::size_t pos = header.size();
    while (pos != std::string::npos && pos < line.size()) {
        const std::size_t eq = line.find('=', pos);
        if (eq == std::string::npos) break;
        const std::string key = line.substr(pos + 1, eq - pos - 1);
        std::size_t vpos = eq + 1;
        if (key == "seed") {
            g.seed = std::strtoull(line.c_str() + vpos, nullptr, 10);
        } else if (key == "measure") {
            const std::size_t end = line.find(' ', vpos);
            g.measure_label =
                line.substr(vpos, end == std::string::npos ? std::string::npos : end - vpos);
        } else if (key == "n") {
            g.n = static_cast<int>(std::strtol(line.c_str() + vpos, nullptr, 10));
        } else {
            const double v = detail::parse_number(line, vpos, "parse_lookdown_graph", key.c_str());
            if (key == "s0") g.s0 = v;
            else if (key == "s1") g.s1 = v;
            else if (key == "event_rate") g.event_rate = v;
        }
        pos = line.find(' ', vpos);
    }
    if (g.n < 2)
        throw std::invalid_argument("parse_lookdown_graph: header must declare n >= 2");
    if (!(g.s1 >= g.s0))
        throw std::invalid_argument("parse_lookdown_graph: header window must satisfy s0 <= s1");
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::size_t p = 0;
        ReproductionEvent ev;
        detail::expect_token(line, p, "parse_lookdown_graph", "{\"t\":");
        ev.t = detail::parse_number(line, p, "parse_lookdown_graph", "t");
        detail::expect_token(line, p, "parse_lookdown_graph", ",\"levels\":[");
        while (true) {
            const char* start = line.c_str() + p;
            char* end = nullptr;
            const long v = std::strtol(start, &end, 10);
            if (end == start)
                throw std::invalid_argument("parse_lookdown_graph: malformed level in line: " +
                                            line);
            p += static_cast<std::size_t>(end - start);
            ev.levels.push_back(static_cast<int>(v));
            if (p < line.size() && line[p] == ',') { ++p; continue; }
            break;
        }
        detail::expect_token(line, p, "parse_lookdown_graph", "]}");
        detail::validate_levels(ev.levels, g.n, "parse_lookdown_graph");
        if (!(ev.t > g.s0) || !(ev.t <= g.s1))
            throw std::invalid_argument("parse_lookdown_graph: event time " +
                                        format_double(ev.t) + " outside the window");
        if (!g.events.empty() && ev.t <= g.events.back().t)
            throw std::invalid_argument(
                "parse_lookdown_graph: event times must increase strictly");
        g.events.push_back(std::move(ev));
    }
    return g;
}

/// Per-level type trajectory as CSV rows time,level,type: the initial state
/// at s0 and one block of n rows after every event.
inline void write_trajectory_csv(std::ostream& os, const LookdownGraphN& g,
                                 std::vector<double> types) {
    if (static_cast<int>(types.size()) != g.n)
        throw std::invalid_argument("write_trajectory_csv: need exactly one type per level");
    os << "time,level,type\n";
    const auto emit = [&](double t) {
        for (int i = 1; i <= g.n; ++i)
            os << format_double(t) << ',' << i << ','
               << format_double(types[static_cast<std::size_t>(i - 1)]) << '\n';
    };
    emit(g.s0);
    for (const auto& ev : g.events) {
        detail::push_types_up(types, ev.levels);
        emit(ev.t);
    }
}

} // namespace lambda_flows
