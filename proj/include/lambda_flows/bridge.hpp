#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lambda_flows/io.hpp"
#include "lambda_flows/measure.hpp"
#include "lambda_flows/partition.hpp"
#include "lambda_flows/quadrature.hpp"
#include "lambda_flows/rng.hpp"

namespace lambda_flows {

struct BridgeFlowEvents;

/// Exchangeable bridge in jump/drift form:
///   F(x) = sum_i a_i 1{U_i <= x} + d x,   d = 1 - sum_i a_i >= 0.
/// Nondecreasing, right-continuous, F(0-) = 0, F(1) = 1. Jump locations are
/// carried verbatim once created; composition never re-derives a location
/// from evaluations, so location equality is exact.
struct Bridge {
    std::vector<std::pair<double, double>> jumps; // (location, size), sorted by location
    double drift = 1.0;

    // set when the bridge was materialized from a flow's event range; lets
    // composition of adjacent windows re-fold the shared events exactly
    const BridgeFlowEvents* flow = nullptr;
    std::size_t ev_begin = 0;
    std::size_t ev_end = 0;

    /// Equality as a function (provenance ignored).
    bool same_function(const Bridge& o) const { return jumps == o.jumps && drift == o.drift; }
};

inline Bridge identity_bridge() { return Bridge{}; }

/// Bridge with the given jumps: validated, sorted, co-located jumps merged,
/// drift set to the leftover mass.
inline Bridge make_bridge(std::vector<std::pair<double, double>> jumps) {
    double sum = 0.0;
    for (const auto& [u, a] : jumps) {
        if (!(u >= 0.0 && u <= 1.0))
            throw std::invalid_argument("make_bridge: jump location " + format_double(u) +
                                        " outside [0,1]");
        if (!(a > 0.0 && a <= 1.0))
            throw std::invalid_argument("make_bridge: jump size " + format_double(a) +
                                        " outside (0,1]");
        sum += a;
    }
    if (sum > 1.0 + 1e-12)
        throw std::invalid_argument("make_bridge: jump sizes add up to " + format_double(sum));
    std::sort(jumps.begin(), jumps.end());
    Bridge out;
    for (const auto& [u, a] : jumps) {
        if (!out.jumps.empty() && out.jumps.back().first == u)
            out.jumps.back().second += a;
        else
            out.jumps.emplace_back(u, a);
    }
    out.drift = std::max(0.0, 1.0 - sum);
    return out;
}

/// One-jump bridge of an elementary reproduction event: fraction u of mass
/// moves to location U, the rest keeps its relative order.
inline Bridge elementary_bridge(double u, double U) {
    if (!(u > 0.0 && u < 1.0))
        throw std::invalid_argument("elementary_bridge: jump size must lie in (0,1)");
    if (!(U >= 0.0 && U <= 1.0))
        throw std::invalid_argument("elementary_bridge: location must lie in [0,1]");
    Bridge out;
    out.jumps.emplace_back(U, u);
    out.drift = 1.0 - u;
    return out;
}

inline double bridge_eval(const Bridge& f, double x) {
    if (!(x >= 0.0 && x <= 1.0))
        throw std::invalid_argument("bridge_eval: x = " + format_double(x) + " outside [0,1]");
    double v = f.drift * x;
    for (const auto& [u, a] : f.jumps) {
        if (u > x) break;
        v += a;
    }
    return v;
}

namespace detail {

/// Precomputed inverse of a bridge. Value space splits into jump intervals
/// [lo_i, lo_i + a_i) and drift segments between them; both inverse
/// conventions share the table.
struct BridgeInverse {
    std::vector<double> lo;  // value just below jump i
    std::vector<double> cum; // jump mass strictly before jump i
    const std::vector<std::pair<double, double>>* jumps;
    double drift;
    double total_jump = 0.0;

    explicit BridgeInverse(const Bridge& f) : jumps(&f.jumps), drift(f.drift) {
        lo.reserve(f.jumps.size());
        cum.reserve(f.jumps.size());
        for (const auto& [u, a] : f.jumps) {
            cum.push_back(total_jump);
            lo.push_back(drift * u + total_jump);
            total_jump += a;
        }
    }

    double segment_before(std::size_t i, double v) const {
        // v sits on the drift segment ending just before jump i
        const double c = i < cum.size() ? cum[i] : total_jump;
        double x = (v - c) / drift;
        const double hi_loc = i < jumps->size() ? (*jumps)[i].first : 1.0;
        const double lo_loc = i > 0 ? (*jumps)[i - 1].first : 0.0;
        return std::min(std::max(x, lo_loc), hi_loc);
    }

    /// inf{x : F(x) > v}; v = 1 maps to the supremum preimage.
    double greater(double v) const {
        if (v >= 1.0) return drift > 0.0 || jumps->empty() ? 1.0 : jumps->back().first;
        // first jump whose top value exceeds v
        std::size_t n = lo.size(), first = n;
        {
            std::size_t a = 0, b = n;
            while (a < b) {
                const std::size_t mid = a + (b - a) / 2;
                if (lo[mid] + (*jumps)[mid].second > v)
                    b = mid, first = mid;
                else
                    a = mid + 1;
            }
        }
        if (first < n && lo[first] <= v) return (*jumps)[first].first;
        return segment_before(first, v);
    }

    /// inf{x : F(x) >= v}: the pullback convention for composing jumps.
    double at_least(double v) const {
        if (v <= 0.0) return 0.0;
        if (v >= 1.0) return drift > 0.0 || jumps->empty() ? 1.0 : jumps->back().first;
        std::size_t n = lo.size(), first = n;
        {
            std::size_t a = 0, b = n;
            while (a < b) {
                const std::size_t mid = a + (b - a) / 2;
                if (lo[mid] + (*jumps)[mid].second >= v)
                    b = mid, first = mid;
                else
                    a = mid + 1;
            }
        }
        if (first < n && lo[first] <= v) return (*jumps)[first].first;
        return segment_before(first, v);
    }
};

Bridge fold_bridge(const BridgeFlowEvents& fl, std::size_t begin, std::size_t end);

} // namespace detail

/// Cadlag inverse F^{-1}(v) = inf{x : F(x) > v}. Every v inside the jump
/// interval [F(U-), F(U)) maps to U exactly.
inline double bridge_inverse(const Bridge& f, double v) {
    if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("bridge_inverse: v = " + format_double(v) + " outside [0,1]");
    return detail::BridgeInverse(f).greater(v);
}

/// Exact jump/drift representation of x -> f2(f1(x)). Jumps of f1 keep their
/// locations with sizes re-measured through f2; jumps of f2 crossed by the
/// drift part of f1 pull back through the inverse. When both bridges came from
/// the same event flow over adjacent windows, the composite is re-folded from
/// the shared events so the cocycle identity holds with identical jump lists.
inline Bridge compose(const Bridge& f2, const Bridge& f1) {
    if (f1.flow != nullptr && f1.flow == f2.flow && f1.ev_end == f2.ev_begin)
        return detail::fold_bridge(*f1.flow, f1.ev_begin, f2.ev_end);
    if (f2.jumps.empty() && f2.drift == 1.0) return f1;
    if (f1.jumps.empty() && f1.drift == 1.0) return f2;

    std::vector<std::pair<double, double>> raw;
    raw.reserve(f1.jumps.size() + f2.jumps.size());

    detail::BridgeInverse inv1(f1);
    for (std::size_t i = 0; i < f1.jumps.size(); ++i) {
        const double y_lo = inv1.lo[i];
        const double y_hi = y_lo + f1.jumps[i].second;
        const double size = bridge_eval(f2, y_hi) - bridge_eval(f2, y_lo);
        if (size > 0.0) raw.emplace_back(f1.jumps[i].first, size);
    }
    for (const auto& [w, b] : f2.jumps) {
        // skip jumps already absorbed by a jump interval (y_lo, y_hi] of f1
        std::size_t n = inv1.lo.size(), first = n;
        {
            std::size_t a = 0, bb = n;
            while (a < bb) {
                const std::size_t mid = a + (bb - a) / 2;
                if (inv1.lo[mid] + f1.jumps[mid].second >= w)
                    bb = mid, first = mid;
                else
                    a = mid + 1;
            }
        }
        if (first < n && inv1.lo[first] < w) continue;
        raw.emplace_back(inv1.at_least(w), b);
    }

    std::sort(raw.begin(), raw.end());
    Bridge out;
    for (const auto& [u, a] : raw) {
        if (!out.jumps.empty() && out.jumps.back().first == u)
            out.jumps.back().second += a;
        else
            out.jumps.emplace_back(u, a);
    }
    out.drift = f1.drift * f2.drift;
    return out;
}

/// Paintbox partition: i and j share a block iff F^{-1}(V_i) = F^{-1}(V_j)
/// exactly. Locations are exact binary64 values, so no tolerance is involved.
inline PartitionN partition_from_bridge(const Bridge& f, const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("partition_from_bridge: empty sample");
    detail::BridgeInverse inv(f);
    std::vector<std::pair<double, int>> keyed;
    keyed.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(v[i] >= 0.0 && v[i] <= 1.0))
            throw std::invalid_argument("partition_from_bridge: sample value " +
                                        format_double(v[i]) + " outside [0,1]");
        keyed.emplace_back(inv.greater(v[i]), static_cast<int>(i) + 1);
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::vector<int>> blocks;
    for (std::size_t i = 0; i < keyed.size(); ++i) {
        if (i == 0 || keyed[i].first != keyed[i - 1].first) blocks.emplace_back();
        blocks.back().push_back(keyed[i].second);
    }
    return make_partition(static_cast<int>(v.size()), blocks);
}

/// Ancestral pullback: the paintbox partition of eves_t together with, per
/// block (ordered by least element), the pulled-back ancestor
/// F^{-1}(eves_t[min block]).
inline std::pair<PartitionN, std::vector<double>> eves_pullback(const Bridge& f,
                                                                const std::vector<double>& eves_t) {
    PartitionN pi = partition_from_bridge(f, eves_t);
    detail::BridgeInverse inv(f);
    std::vector<double> ancestors;
    ancestors.reserve(pi.blocks.size());
    for (const auto& blk : pi.blocks)
        ancestors.push_back(inv.greater(eves_t[static_cast<std::size_t>(blk.front()) - 1]));
    return {std::move(pi), std::move(ancestors)};
}

/// One elementary reproduction event: at time t a parent at location U
/// captures a fraction u of the population.
struct BridgeFlowEvent {
    double t = 0.0;
    double u = 0.0;
    double U = 0.0;
};

/// Discrete-event flow of bridges over a time window: the bridge between any
/// s <= t inside the window is the composition of the elementary bridges of
/// the events in (s, t]. Events below the size truncation epsilon are not
/// generated; the mass they would have moved is reported, never hidden.
struct BridgeFlowEvents {
    double s0 = 0.0;
    double s1 = 0.0;
    double epsilon = 0.0;
    double event_rate = 0.0;     // nu([epsilon, 1)) with nu(du) = u^{-2} Lambda(du)
    double truncated_mass = 0.0; // integral of u nu(du) over (0, epsilon); +inf if divergent
    std::uint64_t seed = 0;
    std::vector<BridgeFlowEvent> events;

    /// F_{s,t}: fold of the events in (s, t], newest outermost.
    Bridge bridge(double s, double t) const {
        if (!(s0 <= s && s <= t && t <= s1))
            throw std::invalid_argument("bridge: need s0 <= s <= t <= s1");
        const auto begin = std::partition_point(events.begin(), events.end(),
                                                [&](const BridgeFlowEvent& e) { return e.t <= s; });
        const auto end = std::partition_point(events.begin(), events.end(),
                                              [&](const BridgeFlowEvent& e) { return e.t <= t; });
        return detail::fold_bridge(*this, static_cast<std::size_t>(begin - events.begin()),
                                   static_cast<std::size_t>(end - events.begin()));
    }
};

namespace detail {

inline Bridge fold_bridge(const BridgeFlowEvents& fl, std::size_t begin, std::size_t end) {
    Bridge acc;
    for (std::size_t i = begin; i < end; ++i)
        acc = compose(elementary_bridge(fl.events[i].u, fl.events[i].U), acc);
    acc.flow = &fl;
    acc.ev_begin = begin;
    acc.ev_end = end;
    return acc;
}

} // namespace detail

/// Event-size sampler for one (measure, truncation) pair: total event rate
/// nu([eps,1)), the truncated mass report, and inverse-CDF sampling of the
/// size u. Build once, reuse across replicates.
class BridgeFlowSampler {
public:
    BridgeFlowSampler(const LambdaMeasure& m, double eps) : epsilon_(eps) {
        if (!(eps >= 0.0 && eps < 1.0))
            throw std::invalid_argument("BridgeFlowSampler: truncation must lie in [0,1)");
        if (m.kingman_mass > 0.0)
            throw std::invalid_argument(
                "BridgeFlowSampler: a Kingman component has no elementary-bridge "
                "representation; use the lookdown construction instead");
        for (const auto& [x, c] : m.atoms) {
            if (x >= eps) {
                atoms_.emplace_back(x, c / (x * x));
                atom_total_ += atoms_.back().second;
            } else {
                truncated_mass_ += c / x;
            }
        }
        if (m.has_density()) {
            if (eps == 0.0 && classify(m).regime != Regime::Discrete)
                throw std::invalid_argument(
                    "BridgeFlowSampler: zero truncation needs a finite event intensity; "
                    "this measure generates infinitely many events per unit time");
            build_density_cdf(m, eps);
            truncated_mass_ += truncated_density_mass(m, eps);
        }
    }

    double epsilon() const { return epsilon_; }
    double event_rate() const { return atom_total_ + density_total_; }
    double truncated_mass() const { return truncated_mass_; }

    double sample_size(RandomStream& rng) const {
        const double total = event_rate();
        if (!(total > 0.0)) throw std::invalid_argument("sample_size: zero event rate");
        double v = rng.uniform01() * total;
        for (const auto& [x, w] : atoms_) {
            if (v < w) return x;
            v -= w;
        }
        if (cum_.size() < 2) return atoms_.back().first; // rounding residue past the last atom
        // density part: piecewise-linear inverse CDF over the cell table
        const double target = std::min(v, density_total_ * (1.0 - 1e-16));
        const auto it = std::upper_bound(cum_.begin() + 1, cum_.end(), target);
        const std::size_t i = static_cast<std::size_t>(it - cum_.begin());
        const std::size_t k = std::min(i, cum_.size() - 1);
        const double c0 = cum_[k - 1], c1 = cum_[k];
        const double frac = c1 > c0 ? (target - c0) / (c1 - c0) : 0.5;
        return edge_[k - 1] + frac * (edge_[k] - edge_[k - 1]);
    }

private:
    void build_density_cdf(const LambdaMeasure& m, double eps) {
        // cell boundaries: dyadic toward both singular ends plus density kinks
        std::vector<double> nodes;
        double lo = std::max(eps, 1e-300);
        if (m.family == MeasureFamily::Custom && !m.table.u.empty())
            lo = std::max(lo, m.table.u.front()); // no rate below the table's support
        for (double v = 0.5; v > lo; v *= 0.5) nodes.push_back(v);
        nodes.push_back(lo);
        for (double w = 0.25; w > 1e-14; w *= 0.5) nodes.push_back(1.0 - w);
        nodes.push_back(1.0 - 1e-14);
        if (m.family == MeasureFamily::Custom)
            for (double u : m.table.u)
                if (u > lo && u < 1.0 - 1e-14) nodes.push_back(u);
        std::sort(nodes.begin(), nodes.end());
        nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
        while (!nodes.empty() && nodes.front() < lo) nodes.erase(nodes.begin());

        auto g = [&](double u, double omu) {
            const double d = m.density_at(u, omu);
            return d == 0.0 ? 0.0 : d / (u * u);
        };
        edge_.clear();
        cum_.clear();
        edge_.push_back(nodes.front());
        cum_.push_back(0.0);
        for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
            const double a = nodes[i], b = nodes[i + 1];
            for (int part = 1; part <= 4; ++part) {
                const double pa = a + (b - a) * (part - 1) / 4.0;
                const double pb = a + (b - a) * part / 4.0;
                const double mass =
                    integrate([&](double u) { return g(u, 1.0 - u); }, pa, pb, 1e-9);
                edge_.push_back(pb);
                cum_.push_back(cum_.back() + std::max(0.0, mass));
            }
        }
        density_total_ = cum_.back();
    }

    double truncated_density_mass(const LambdaMeasure& m, double eps) const {
        if (eps <= 0.0) return 0.0;
        // integral of density(u)/u over (0, eps), certified shell by shell
        auto shell = [&](int k) {
            const double hi = eps * std::pow(0.5, k);
            const double lo = 0.5 * hi;
            return integrate(
                [&](double u) {
                    const double d = m.density_at(u, 1.0 - u);
                    return d == 0.0 ? 0.0 : d / u;
                },
                lo, hi, 1e-9);
        };
        const SeriesAnalysis res = analyze_shell_series(shell);
        if (res.verdict == SeriesVerdict::Finite) return res.value;
        return std::numeric_limits<double>::infinity();
    }

    double epsilon_;
    std::vector<std::pair<double, double>> atoms_; // (size, rate weight)
    double atom_total_ = 0.0;
    double density_total_ = 0.0;
    double truncated_mass_ = 0.0;
    std::vector<double> edge_; // cell edges in u
    std::vector<double> cum_;  // cumulative rate up to each edge
};

/// Poisson flow of elementary bridges on (s0, s1]: event times at rate
/// nu([eps,1)), sizes from the normalized restriction of nu, locations
/// uniform. Replays identically for identical seeds.
inline BridgeFlowEvents simulate_bridge_flow(const BridgeFlowSampler& sampler, double s0,
                                             double s1, std::uint64_t seed,
                                             std::uint64_t max_events = 100000000ull) {
    if (!(s0 <= s1)) throw std::invalid_argument("simulate_bridge_flow: need s0 <= s1");
    BridgeFlowEvents out;
    out.s0 = s0;
    out.s1 = s1;
    out.epsilon = sampler.epsilon();
    out.event_rate = sampler.event_rate();
    out.truncated_mass = sampler.truncated_mass();
    out.seed = seed;
    RandomStream rng(seed);
    const double rate = sampler.event_rate();
    if (!(rate > 0.0)) return out;
    double t = s0;
    while (true) {
        t += rng.exponential(rate);
        if (t > s1) break;
        if (out.events.size() >= max_events)
            throw std::runtime_error("simulate_bridge_flow exceeded the event cap of " +
                                     std::to_string(max_events));
        BridgeFlowEvent ev;
        ev.t = t;
        ev.u = sampler.sample_size(rng);
        ev.U = rng.uniform01();
        out.events.push_back(ev);
    }
    return out;
}

inline BridgeFlowEvents simulate_bridge_flow(const LambdaMeasure& m, double s0, double s1,
                                             double eps, std::uint64_t seed,
                                             std::uint64_t max_events = 100000000ull) {
    BridgeFlowSampler sampler(m, eps);
    return simulate_bridge_flow(sampler, s0, s1, seed, max_events);
}

/// Line format: one `#`-prefixed header carrying the window, truncation, rate
/// report and seed, then one JSON object {"t":..,"u":..,"U":..} per event.
/// Doubles are written in shortest round-trip form, so parsing is bit-exact.
inline std::string to_jsonl(const BridgeFlowEvents& fl) {
    std::string out = "# lambda_flows bridge_flow s0=" + format_double(fl.s0) +
                      " s1=" + format_double(fl.s1) + " epsilon=" + format_double(fl.epsilon) +
                      " event_rate=" + format_double(fl.event_rate) +
                      " truncated_mass=" + format_double(fl.truncated_mass) +
                      " seed=" + format_u64(fl.seed) + "\n";
    for (const auto& ev : fl.events)
        out += "{\"t\":" + format_double(ev.t) + ",\"u\":" + format_double(ev.u) +
               ",\"U\":" + format_double(ev.U) + "}\n";
    return out;
}

inline BridgeFlowEvents parse_bridge_flow(std::istream& in) {
    BridgeFlowEvents fl;
    std::string line;
    const std::string header = "# lambda_flows bridge_flow";
    if (!std::getline(in, line) || line.rfind(header, 0) != 0)
        throw std::invalid_argument("parse_bridge_flow: missing bridge_flow header line");
    std::size_t pos = header.size();
    while (pos != std::string::npos && pos < line.size()) {
        const std::size_t eq = line.find('=', pos);
        if (eq == std::string::npos) break;
        const std::string key = line.substr(pos + 1, eq - pos - 1);
        std::size_t vpos = eq + 1;
        if (key == "seed") {
            fl.seed = std::strtoull(line.c_str() + vpos, nullptr, 10);
        } else {
            const double v = detail::parse_number(line, vpos, "parse_bridge_flow", key.c_str());
            if (key == "s0") fl.s0 = v;
            else if (key == "s1") fl.s1 = v;
            else if (key == "epsilon") fl.epsilon = v;
            else if (key == "event_rate") fl.event_rate = v;
            else if (key == "truncated_mass") fl.truncated_mass = v;
        }
        pos = line.find(' ', vpos);
    }
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::size_t pos = 0;
        BridgeFlowEvent ev;
        detail::expect_token(line, pos, "parse_bridge_flow", "{\"t\":");
        ev.t = detail::parse_number(line, pos, "parse_bridge_flow", "t");
        detail::expect_token(line, pos, "parse_bridge_flow", ",\"u\":");
        ev.u = detail::parse_number(line, pos, "parse_bridge_flow", "u");
        detail::expect_token(line, pos, "parse_bridge_flow", ",\"U\":");
        ev.U = detail::parse_number(line, pos, "parse_bridge_flow", "U");
        detail::expect_token(line, pos, "parse_bridge_flow", "}");
        if (!fl.events.empty() && ev.t <= fl.events.back().t)
            throw std::invalid_argument("parse_bridge_flow: event times must increase strictly");
        if (!(ev.u > 0.0 && ev.u < 1.0) || ev.u < fl.epsilon)
            throw std::invalid_argument("parse_bridge_flow: event size " + format_double(ev.u) +
                                        " violates the truncation " + format_double(fl.epsilon));
        if (!(ev.U >= 0.0 && ev.U <= 1.0))
            throw std::invalid_argument("parse_bridge_flow: event location outside [0,1]");
        fl.events.push_back(ev);
    }
    return fl;
}

} // namespace lambda_flows
