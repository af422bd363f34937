#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lambda_flows/io.hpp"
#include "lambda_flows/measure.hpp"
#include "lambda_flows/partition.hpp"
#include "lambda_flows/rng.hpp"

namespace lambda_flows {

/// One realized trajectory of the exchangeable coalescent restricted to [n]:
/// steps[0] is (0, all-singletons) and every later entry is the state right
/// after a merger. Partitions coarsen strictly and jump times increase
/// strictly. horizon is +infinity for run-to-absorption paths.
struct CoalescentPath {
    int n = 0;
    double horizon = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::pair<double, PartitionN>> steps;
};

/// Count-marginal variant: the block-count jump chain without materialized
/// partitions. Exact in distribution for anything that only reads counts,
/// and the only practical representation at n in the tens of thousands.
struct BlockCountPath {
    int n = 0;
    double horizon = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::pair<double, int>> steps;
};

/// Merger-rate machinery for one measure: total event rate R(b) with b blocks
/// and sampling of the merger size p with probability C(b,p) lambda_{b,p} / R(b).
///
/// The binomial coefficient and the rate both leave double range separately
/// at large b while their product stays moderate, so weights are walked
/// incrementally in p with O(1) ratio updates per family component; totals
/// are memoized per b. Measures with a density table or a free-form density
/// need one quadrature per (b,p) and keep full cumulative rows instead,
/// capped at b <= 1000 where the direct product is still representable.
class RateTable {
public:
    explicit RateTable(LambdaMeasure m) : m_(std::move(m)) {
        pure_kingman_ = m_.atoms.empty() && !m_.has_density();
        pure_lebesgue_ = m_.kingman_mass == 0.0 && m_.atoms.empty() &&
                         m_.family == MeasureFamily::Lebesgue;
        needs_rows_ = m_.has_density() && m_.family != MeasureFamily::Lebesgue &&
                      m_.family != MeasureFamily::Beta;
    }

    const LambdaMeasure& measure() const { return m_; }

    /// lambda_{b,p}, straight from the measure (no caching).
    double rate(int b, int p) const { return lambda_rate(m_, b, p); }

    /// R(b) = sum_p C(b,p) lambda_{b,p}; zero when b < 2.
    double total_rate(int b) {
        if (b < 2) return 0.0;
        if (pure_kingman_) return 0.5 * static_cast<double>(b) * (b - 1) * m_.kingman_mass;
        if (pure_lebesgue_) return static_cast<double>(b - 1);
        if (static_cast<std::size_t>(b) < totals_.size() &&
            !std::isnan(totals_[static_cast<std::size_t>(b)]))
            return totals_[static_cast<std::size_t>(b)];
        double total;
        if (needs_rows_) {
            total = cumulative_row(b).back();
        } else {
            Walk w = make_walk(b);
            total = 0.0;
            for (int p = 2; p <= b; ++p) {
                total += w.value();
                if (p < b) w.advance();
            }
        }
        if (static_cast<std::size_t>(b) >= totals_.size())
            totals_.resize(static_cast<std::size_t>(b) + 1, std::numeric_limits<double>::quiet_NaN());
        totals_[static_cast<std::size_t>(b)] = total;
        return total;
    }

    /// Merger size with probability C(b,p) lambda_{b,p} / R(b). Requires R(b) > 0.
    int sample_p(int b, RandomStream& rng) {
        if (b < 2) throw std::invalid_argument("sample_p: need at least two blocks");
        if (pure_kingman_) {
            if (m_.kingman_mass <= 0.0) throw std::invalid_argument("sample_p: zero total rate");
            return 2;
        }
        if (pure_lebesgue_) {
            // cumulative weight up to p is b(1 - 1/p): invert in O(1)
            const double u = rng.uniform01() * static_cast<double>(b - 1);
            int p = static_cast<int>(std::ceil(1.0 / (1.0 - u / static_cast<double>(b))));
            return std::min(std::max(p, 2), b);
        }
        const double total = total_rate(b);
        if (!(total > 0.0)) throw std::invalid_argument("sample_p: zero total rate");
        const double target = rng.uniform01() * total;
        if (needs_rows_) {
            const auto& cum = cumulative_row(b);
            auto it = std::upper_bound(cum.begin(), cum.end(), target);
            int p = 2 + static_cast<int>(it - cum.begin());
            return std::min(p, b);
        }
        Walk w = make_walk(b);
        double acc = 0.0;
        for (int p = 2; p <= b; ++p) {
            acc += w.value();
            if (acc >= target) return p;
            if (p < b) w.advance();
        }
        return b;
    }

private:
    /// Incremental weights w_p = C(b,p) lambda_{b,p}, advanced one p at a time.
    struct Walk {
        int b = 0;
        int p = 2;
        double kingman_w2 = 0.0;
        double leb_scale = 0.0; // b when a uniform density is present
        double beta_w = 0.0;
        double beta_alpha = 0.0;
        std::vector<double> atom_w;
        std::vector<double> atom_odds; // x/(1-x) per atom

        double value() const {
            double w = (p == 2) ? kingman_w2 : 0.0;
            if (leb_scale > 0.0)
                w += leb_scale / (static_cast<double>(p) * (static_cast<double>(p) - 1.0));
            w += beta_w;
            for (double aw : atom_w) w += aw;
            return w;
        }

        void advance() {
            const double cr = static_cast<double>(b - p) / (static_cast<double>(p) + 1.0);
            for (std::size_t i = 0; i < atom_w.size(); ++i) atom_w[i] *= cr * atom_odds[i];
            if (beta_alpha > 0.0)
                beta_w *= cr * (static_cast<double>(p) - beta_alpha) /
                          (static_cast<double>(b - p) - 1.0 + beta_alpha);
            ++p;
        }
    };

    Walk make_walk(int b) const {
        Walk w;
        w.b = b;
        const double ln_c2 = std::log(0.5 * static_cast<double>(b) * (static_cast<double>(b) - 1.0));
        w.kingman_w2 = 0.5 * static_cast<double>(b) * (static_cast<double>(b) - 1.0) * m_.kingman_mass;
        if (m_.family == MeasureFamily::Lebesgue) w.leb_scale = static_cast<double>(b);
        if (m_.family == MeasureFamily::Beta) {
            w.beta_alpha = m_.beta_alpha;
            w.beta_w = std::exp(ln_c2 + std::lgamma(2.0 - m_.beta_alpha) +
                                std::lgamma(static_cast<double>(b - 2) + m_.beta_alpha) -
                                std::lgamma(static_cast<double>(b)) - m_.beta_ln_norm);
        }
        w.atom_w.reserve(m_.atoms.size());
        w.atom_odds.reserve(m_.atoms.size());
        for (const auto& [x, c] : m_.atoms) {
            w.atom_w.push_back(
                std::exp(std::log(c) + ln_c2 + static_cast<double>(b - 2) * std::log1p(-x)));
            w.atom_odds.push_back(x / (1.0 - x));
        }
        return w;
    }

    const std::vector<double>& cumulative_row(int b) {
        if (b > 1000)
            throw std::invalid_argument(
                "RateTable: density-table measures support simulation up to 1000 blocks");
        auto it = rows_.find(b);
        if (it != rows_.end()) return it->second;
        std::vector<double> cum;
        cum.reserve(static_cast<std::size_t>(b) - 1);
        double acc = 0.0;
        double ln_choose = std::log(0.5 * static_cast<double>(b) * (static_cast<double>(b) - 1.0));
        for (int p = 2; p <= b; ++p) {
            if (p > 2)
                ln_choose += std::log(static_cast<double>(b - p + 1) / static_cast<double>(p));
            acc += std::exp(ln_choose) * lambda_rate(m_, b, p);
            cum.push_back(acc);
        }
        return rows_.emplace(b, std::move(cum)).first->second;
    }

    LambdaMeasure m_;
    bool pure_kingman_ = false;
    bool pure_lebesgue_ = false;
    bool needs_rows_ = false;
    std::vector<double> totals_;
    std::map<int, std::vector<double>> rows_;
};

namespace detail {

constexpr std::uint64_t kDefaultStepCap = 100000000ull;

template <typename OnEvent>
inline void run_jump_chain(RateTable& rates, int n, double horizon, RandomStream& rng,
                           std::uint64_t max_steps, OnEvent&& on_event) {
    double t = 0.0;
    int b = n;
    std::uint64_t steps = 0;
    while (b > 1) {
        const double total = rates.total_rate(b);
        if (!(total > 0.0)) return; // degenerate measure: stalls as if absorbed at horizon
        t += rng.exponential(total);
        if (t > horizon) return;
        if (++steps > max_steps)
            throw std::runtime_error("coalescent simulation exceeded the step cap of " +
                                     std::to_string(max_steps));
        const int p = rates.sample_p(b, rng);
        on_event(t, b, p);
        b -= p - 1;
    }
}

} // namespace detail

/// Exact jump-chain simulation of the coalescent restricted to [n]: holding
/// time Exponential(R(b)), merger size p with probability C(b,p)lambda_{b,p}/R(b),
/// merging blocks a uniform p-subset. Runs to `horizon` (+infinity = until one
/// block remains). A zero-rate state ends the path quietly; exceeding
/// max_steps before absorption throws.
inline CoalescentPath simulate_coalescent(RateTable& rates, int n, double horizon,
                                          std::uint64_t seed,
                                          std::uint64_t max_steps = detail::kDefaultStepCap) {
    if (n < 2) throw std::invalid_argument("simulate_coalescent: need n >= 2");
    if (!(horizon > 0.0)) throw std::invalid_argument("simulate_coalescent: horizon must be positive");
    CoalescentPath path;
    path.n = n;
    path.horizon = horizon;
    path.seed = seed;
    path.steps.emplace_back(0.0, partition_identity(n));
    RandomStream rng(seed);
    std::vector<int> scratch, subset;
    detail::run_jump_chain(rates, n, horizon, rng, max_steps, [&](double t, int b, int p) {
        rng.uniform_subset(b, p, scratch, subset);
        path.steps.emplace_back(t, coag(path.steps.back().second, encode_single_block(subset, b)));
    });
    return path;
}

inline CoalescentPath simulate_coalescent(const LambdaMeasure& m, int n, double horizon,
                                          std::uint64_t seed,
                                          std::uint64_t max_steps = detail::kDefaultStepCap) {
    RateTable rates(m);
    return simulate_coalescent(rates, n, horizon, seed, max_steps);
}

/// Count-only jump chain: identical dynamics, partitions never materialized.
inline BlockCountPath simulate_block_counts(RateTable& rates, int n, double horizon,
                                            std::uint64_t seed,
                                            std::uint64_t max_steps = detail::kDefaultStepCap) {
    if (n < 2) throw std::invalid_argument("simulate_block_counts: need n >= 2");
    if (!(horizon > 0.0))
        throw std::invalid_argument("simulate_block_counts: horizon must be positive");
    BlockCountPath path;
    path.n = n;
    path.horizon = horizon;
    path.seed = seed;
    path.steps.emplace_back(0.0, n);
    RandomStream rng(seed);
    detail::run_jump_chain(rates, n, horizon, rng, max_steps, [&](double t, int b, int p) {
        path.steps.emplace_back(t, b - (p - 1));
    });
    return path;
}

inline BlockCountPath simulate_block_counts(const LambdaMeasure& m, int n, double horizon,
                                            std::uint64_t seed,
                                            std::uint64_t max_steps = detail::kDefaultStepCap) {
    RateTable rates(m);
    return simulate_block_counts(rates, n, horizon, seed, max_steps);
}

namespace detail {

// right-continuous evaluation: the state at t is the one set by the last jump <= t
template <typename Steps>
std::size_t step_index_at(const Steps& steps, double horizon, double t, const char* what) {
    if (!(t >= 0.0) || t > horizon)
        throw std::invalid_argument(std::string(what) + ": t = " + format_double(t) +
                                    " outside the simulated window [0, " + format_double(horizon) +
                                    "]");
    std::size_t lo = 0, hi = steps.size();
    while (hi - lo > 1) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (steps[mid].first <= t)
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

template <typename Steps, typename Extract>
std::vector<int> curve_eval(const Steps& steps, double horizon, const std::vector<double>& t_grid,
                            Extract&& extract) {
    std::vector<int> out;
    out.reserve(t_grid.size());
    for (double t : t_grid)
        out.push_back(extract(steps[step_index_at(steps, horizon, t, "block_count_curve")].second));
    return out;
}

} // namespace detail

/// Partition state at time t, right-continuous in t.
inline const PartitionN& partition_at(const CoalescentPath& path, double t) {
    return path.steps[detail::step_index_at(path.steps, path.horizon, t, "partition_at")].second;
}

/// Block counts at the grid times, evaluated right-continuously.
inline std::vector<int> block_count_curve(const CoalescentPath& path,
                                          const std::vector<double>& t_grid) {
    return detail::curve_eval(path.steps, path.horizon, t_grid,
                              [](const PartitionN& pi) { return pi.block_count(); });
}

inline std::vector<int> block_count_curve(const BlockCountPath& path,
                                          const std::vector<double>& t_grid) {
    return detail::curve_eval(path.steps, path.horizon, t_grid, [](int b) { return b; });
}

} // namespace lambda_flows
