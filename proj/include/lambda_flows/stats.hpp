#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lambda_flows/rng.hpp"

namespace lambda_flows {

struct MeanVar {
    std::size_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++count;
        const double d = x - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (x - mean);
    }
    double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
    double stddev() const { return std::sqrt(variance()); }
    double standard_error() const {
        return count > 0 ? stddev() / std::sqrt(static_cast<double>(count)) : 0.0;
    }
};

/// Total variation distance between two empirical distributions given as
/// count maps: (1/2) sum over the key union of |p - q|.
template <typename K>
double total_variation(const std::map<K, std::int64_t>& a, const std::map<K, std::int64_t>& b) {
    double na = 0.0, nb = 0.0;
    for (const auto& [k, c] : a) na += static_cast<double>(c);
    for (const auto& [k, c] : b) nb += static_cast<double>(c);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("total_variation: empty sample");
    double dist = 0.0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() || ib != b.end()) {
        double pa = 0.0, pb = 0.0;
        if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
            pa = static_cast<double>(ia->second) / na;
            ++ia;
        } else if (ia == a.end() || ib->first < ia->first) {
            pb = static_cast<double>(ib->second) / nb;
            ++ib;
        } else {
            pa = static_cast<double>(ia->second) / na;
            pb = static_cast<double>(ib->second) / nb;
            ++ia;
            ++ib;
        }
        dist += std::abs(pa - pb);
    }
    return 0.5 * dist;
}

/// Two-sample Kolmogorov-Smirnov statistic: sup |F_a - F_b|. Inputs need not
/// be sorted.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

namespace detail {

/// Kolmogorov tail Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_tail(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-12 * std::abs(sum) || std::abs(term) < 1e-300) break;
        sign = -sign;
    }
    return std::min(1.0, std::max(0.0, 2.0 * sum));
}

}  // namespace detail

/// Asymptotic two-sided p-value for the two-sample statistic, using the
/// small-sample-corrected Kolmogorov argument.
inline double ks_p_value(double d, std::size_t n1, std::size_t n2) {
    const double ne = static_cast<double>(n1) * static_cast<double>(n2) /
                      (static_cast<double>(n1) + static_cast<double>(n2));
    const double sq = std::sqrt(ne);
    return detail::kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d);
}

/// One-sample Kolmogorov-Smirnov test against the uniform law on [0, 1]:
/// asymptotic p-value for sup |F_n(x) - x|.
inline double ks_uniform_p(std::vector<double> sample) {
    if (sample.empty()) throw std::invalid_argument("ks_uniform_p: empty sample");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double lo = static_cast<double>(i) / n;
        const double hi = static_cast<double>(i + 1) / n;
        d = std::max({d, std::abs(sample[i] - lo), std::abs(hi - sample[i])});
    }
    const double sq = std::sqrt(n);
    return detail::kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d);
}

namespace detail {

inline std::vector<double> midranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
        i = j + 1;
    }
    return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        sa += (a[i] - ma) * (a[i] - ma);
        sb += (b[i] - mb) * (b[i] - mb);
    }
    if (sa == 0.0 || sb == 0.0) return 0.0;
    return sab / std::sqrt(sa * sb);
}

} // namespace detail

/// Spearman rank correlation through midranks (ties averaged).
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3)
        throw std::invalid_argument("spearman_rho: need two equal samples of size >= 3");
    return detail::pearson(detail::midranks(x), detail::midranks(y));
}

/// Permutation p-value for independence of paired samples using |Spearman rho|
/// as the statistic: y is permuted `permutations` times with a fixed-seed
/// stream, so the verdict is reproducible.
inline double spearman_independence_p(const std::vector<double>& x, const std::vector<double>& y,
                                      int permutations, std::uint64_t seed) {
    const double observed = std::abs(spearman_rho(x, y));
    RandomStream rng(seed);
    std::vector<double> perm = y;
    int at_least = 0;
    for (int b = 0; b < permutations; ++b) {
        for (std::size_t i = perm.size(); i > 1; --i) {
            const std::size_t j = rng.uniform_below(i);
            std::swap(perm[i - 1], perm[j]);
        }
        if (std::abs(spearman_rho(x, perm)) >= observed - 1e-15) ++at_least;
    }
    return (1.0 + at_least) / (1.0 + permutations);
}

/// Permutation chi-square independence test for paired integer labels.
inline double chi_square_independence_p(const std::vector<int>& a, const std::vector<int>& b,
                                        int permutations, std::uint64_t seed) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("chi_square_independence_p: need equal nonempty samples");
    auto chi2 = [](const std::vector<int>& u, const std::vector<int>& v) {
        std::map<int, double> ru, rv;
        std::map<std::pair<int, int>, double> cell;
        for (std::size_t i = 0; i < u.size(); ++i) {
            ru[u[i]] += 1.0;
            rv[v[i]] += 1.0;
            cell[{u[i], v[i]}] += 1.0;
        }
        const double n = static_cast<double>(u.size());
        double stat = 0.0;
        for (const auto& [ku, cu] : ru)
            for (const auto& [kv, cv] : rv) {
                const double expected = cu * cv / n;
                if (expected <= 0.0) continue;
                auto it = cell.find({ku, kv});
                const double got = it == cell.end() ? 0.0 : it->second;
                stat += (got - expected) * (got - expected) / expected;
            }
        return stat;
    };
    const double observed = chi2(a, b);
    RandomStream rng(seed);
    std::vector<int> perm = b;
    int at_least = 0;
    for (int r = 0; r < permutations; ++r) {
        for (std::size_t i = perm.size(); i > 1; --i) {
            const std::size_t j = rng.uniform_below(i);
            std::swap(perm[i - 1], perm[j]);
        }
        if (chi2(a, perm) >= observed - 1e-12) ++at_least;
    }
    return (1.0 + at_least) / (1.0 + permutations);
}

} // namespace lambda_flows
