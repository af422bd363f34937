#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lambda_flows/io.hpp"
#include "lambda_flows/quadrature.hpp"

namespace lambda_flows {

/// Thrown when numeric divergence certification can neither confirm nor rule
/// out convergence of a classification integral. Callers surface this as an
/// explicit "undecided" outcome rather than guessing.
class UndecidedError : public std::runtime_error {
public:
    explicit UndecidedError(std::string integral)
        : std::runtime_error("classification undecided: integral '" + integral +
                             "' failed both the convergence and divergence certifications"),
          integral_name(std::move(integral)) {}
    std::string integral_name;
};

enum class MeasureFamily { Dirac0, Dirac, Lebesgue, Beta, Custom, Mixture };

/// Piecewise-linear density table on [0,1]: zero outside the knot range,
/// linear interpolation between knots.
struct PiecewiseLinearDensity {
    std::vector<double> u;
    std::vector<double> f;

    bool empty() const { return u.empty(); }

    double eval(double x) const {
        if (u.empty() || x < u.front() || x > u.back()) return 0.0;
        auto it = std::upper_bound(u.begin(), u.end(), x);
        if (it == u.begin()) return f.front();
        if (it == u.end()) return f.back();
        std::size_t hi = static_cast<std::size_t>(it - u.begin());
        std::size_t lo = hi - 1;
        double t = (x - u[lo]) / (u[hi] - u[lo]);
        return f[lo] + t * (f[hi] - f[lo]);
    }

    double mass() const {
        double total = 0.0;
        for (std::size_t i = 0; i + 1 < u.size(); ++i)
            total += 0.5 * (f[i] + f[i + 1]) * (u[i + 1] - u[i]);
        return total;
    }
};

/// Finite measure on [0,1) with an optional atom at zero (kingman_mass), a
/// finite list of interior atoms, and an optional absolutely continuous part.
/// No mass at 1. The family tag selects closed forms where they exist; the
/// generic quadrature path covers the rest.
struct LambdaMeasure {
    double kingman_mass = 0.0;
    std::vector<std::pair<double, double>> atoms; // (location in (0,1), mass > 0)
    MeasureFamily family = MeasureFamily::Mixture;
    double beta_alpha = 0.0;
    double beta_ln_norm = 0.0; // ln B(2-alpha, alpha), cached
    PiecewiseLinearDensity table;
    // Generic density in the two-argument form f(u, 1-u); the second argument
    // is the exactly-computed complement so integrands singular near 1 keep
    // full precision. Used only when family == Mixture.
    std::function<double(double, double)> density_fn;

    bool has_density() const {
        switch (family) {
            case MeasureFamily::Lebesgue:
            case MeasureFamily::Beta:
            case MeasureFamily::Custom: return true;
            case MeasureFamily::Mixture: return static_cast<bool>(density_fn);
            default: return false;
        }
    }

    double density_at(double x, double one_minus_x) const {
        switch (family) {
            case MeasureFamily::Lebesgue: return 1.0;
            case MeasureFamily::Beta:
                return std::exp(-beta_ln_norm) * std::pow(x, 1.0 - beta_alpha) *
                       std::pow(one_minus_x, beta_alpha - 1.0);
            case MeasureFamily::Custom: return table.eval(x);
            case MeasureFamily::Mixture: return density_fn ? density_fn(x, one_minus_x) : 0.0;
            default: return 0.0;
        }
    }

    std::string label() const {
        switch (family) {
            case MeasureFamily::Dirac0: return "dirac0(" + format_double(kingman_mass) + ")";
            case MeasureFamily::Dirac:
                return "dirac(" + format_double(atoms.front().first) + "," +
                       format_double(atoms.front().second) + ")";
            case MeasureFamily::Lebesgue: return "lebesgue";
            case MeasureFamily::Beta:
                return "beta(" + format_double(2.0 - beta_alpha) + "," + format_double(beta_alpha) + ")";
            case MeasureFamily::Custom: return "custom";
            default: return "mixture";
        }
    }

    /// Kingman measure Λ = c δ₀.
    static LambdaMeasure dirac0(double c) {
        if (!(c >= 0.0) || !std::isfinite(c))
            throw std::invalid_argument("dirac0: mass must be finite and non-negative");
        LambdaMeasure m;
        m.kingman_mass = c;
        m.family = MeasureFamily::Dirac0;
        return m;
    }

    /// Λ = c δ_x with x strictly inside (0,1).
    static LambdaMeasure dirac(double x, double c) {
        if (!(x > 0.0) || !(x < 1.0))
            throw std::invalid_argument("dirac: location must lie strictly inside (0,1), got " +
                                        format_double(x));
        if (!(c > 0.0) || !std::isfinite(c))
            throw std::invalid_argument("dirac: mass must be finite and positive");
        LambdaMeasure m;
        m.atoms.emplace_back(x, c);
        m.family = MeasureFamily::Dirac;
        return m;
    }

    /// Λ(du) = du on (0,1).
    static LambdaMeasure lebesgue() {
        LambdaMeasure m;
        m.family = MeasureFamily::Lebesgue;
        return m;
    }

    /// Beta(2-alpha, alpha) measure, alpha in (0,2):
    /// density u^{1-alpha}(1-u)^{alpha-1} / B(2-alpha, alpha).
    static LambdaMeasure beta(double alpha) {
        if (!(alpha > 0.0) || !(alpha < 2.0))
            throw std::invalid_argument("beta: alpha must lie in (0,2), got " + format_double(alpha));
        LambdaMeasure m;
        m.family = MeasureFamily::Beta;
        m.beta_alpha = alpha;
        m.beta_ln_norm = std::lgamma(2.0 - alpha) + std::lgamma(alpha) - std::lgamma(2.0);
        return m;
    }

    /// Piecewise-linear density given as (location, value) knots.
    static LambdaMeasure custom(std::vector<std::pair<double, double>> knots) {
        if (knots.size() < 2)
            throw std::invalid_argument("custom: need at least two density knots");
        LambdaMeasure m;
        m.family = MeasureFamily::Custom;
        m.table.u.reserve(knots.size());
        m.table.f.reserve(knots.size());
        double prev = -1.0;
        for (const auto& [x, v] : knots) {
            if (!(x >= 0.0) || !(x <= 1.0))
                throw std::invalid_argument("custom: knot location " + format_double(x) +
                                            " outside [0,1]");
            if (!(x > prev))
                throw std::invalid_argument("custom: knot locations must be strictly increasing");
            if (!(v >= 0.0) || !std::isfinite(v))
                throw std::invalid_argument("custom: density value at " + format_double(x) +
                                            " must be finite and non-negative");
            m.table.u.push_back(x);
            m.table.f.push_back(v);
            prev = x;
        }
        return m;
    }
};

/// Rebuilds a measure from its label() string. Works for the closed-form
/// families only; custom and mixture measures carry no parameters in their
/// labels and are rejected.
inline LambdaMeasure measure_from_label(const std::string& label) {
    const auto args = [&](std::size_t pos, std::size_t want) {
        std::vector<double> out;
        while (pos < label.size() && label[pos] != ')') {
            const char* start = label.c_str() + pos;
            char* end = nullptr;
            const double v = std::strtod(start, &end);
            if (end == start) break;
            out.push_back(v);
            pos += static_cast<std::size_t>(end - start);
            if (pos < label.size() && label[pos] == ',') ++pos;
        }
        if (pos + 1 != label.size() || label[pos] != ')' || out.size() != want)
            throw std::invalid_argument("measure_from_label: malformed label '" + label + "'");
        return out;
    };
    LambdaMeasure m;
    if (label == "lebesgue") {
        m = LambdaMeasure::lebesgue();
    } else if (label.rfind("dirac0(", 0) == 0) {
        m = LambdaMeasure::dirac0(args(7, 1)[0]);
    } else if (label.rfind("dirac(", 0) == 0) {
        const auto a = args(6, 2);
        m = LambdaMeasure::dirac(a[0], a[1]);
    } else if (label.rfind("beta(", 0) == 0) {
        m = LambdaMeasure::beta(args(5, 2)[1]);
    } else {
        throw std::invalid_argument("measure_from_label: cannot rebuild a measure from label '" +
                                    label + "'");
    }
    if (m.label() != label)
        throw std::invalid_argument("measure_from_label: label '" + label +
                                    "' does not round-trip");
    return m;
}

/// Branching-mechanism style function
///   Psi(u) = (kingman/2) u² + ∫ (e^{-xu} - 1 + xu) x^{-2} Λ(dx).
/// Atoms contribute in closed form; densities by adaptive quadrature.
inline double psi(const LambdaMeasure& m, double u) {
    if (!(u >= 0.0)) throw std::invalid_argument("psi: u must be non-negative");
    if (u == 0.0) return 0.0;
    double total = 0.5 * m.kingman_mass * u * u;
    for (const auto& [x, mass] : m.atoms) total += mass * u * u * phi_kernel_over_z2(x * u);
    if (m.has_density()) {
        total += u * u * integrate_unit([&](double x, double w) {
            return phi_kernel_over_z2(x * u) * m.density_at(x, w);
        });
    }
    if (!std::isfinite(total))
        throw std::runtime_error("psi: quadrature failed to produce a finite value at u = " +
                                 format_double(u));
    return total;
}

/// Merger rate lambda_{m,p} = ∫ u^{p-2} (1-u)^{m-p} Λ(du): the rate at which
/// any fixed p of m blocks merge. The atom at zero contributes only to p = 2.
inline double lambda_rate(const LambdaMeasure& m, int m_blocks, int p) {
    if (p < 2 || p > m_blocks)
        throw std::invalid_argument("lambda_rate: need 2 <= p <= m_blocks, got p = " +
                                    std::to_string(p) + ", m_blocks = " + std::to_string(m_blocks));
    double total = (p == 2) ? m.kingman_mass : 0.0;
    for (const auto& [x, mass] : m.atoms)
        total += mass * std::pow(x, p - 2) * std::pow(1.0 - x, m_blocks - p);
    switch (m.family) {
        case MeasureFamily::Lebesgue:
            // ∫ u^{p-2}(1-u)^{m-p} du = B(p-1, m-p+1)
            total += std::exp(std::lgamma(static_cast<double>(p - 1)) +
                              std::lgamma(static_cast<double>(m_blocks - p + 1)) -
                              std::lgamma(static_cast<double>(m_blocks)));
            break;
        case MeasureFamily::Beta:
            // ∫ u^{p-2}(1-u)^{m-p} dBeta(2-a,a) = B(p-a, m-p+a) / B(2-a, a)
            total += std::exp(std::lgamma(static_cast<double>(p) - m.beta_alpha) +
                              std::lgamma(static_cast<double>(m_blocks - p) + m.beta_alpha) -
                              std::lgamma(static_cast<double>(m_blocks)) - m.beta_ln_norm);
            break;
        case MeasureFamily::Custom:
        case MeasureFamily::Mixture:
            if (m.has_density()) {
                total += integrate_unit([&](double x, double w) {
                    return std::pow(x, p - 2) * std::pow(w, m_blocks - p) * m.density_at(x, w);
                });
            }
            break;
        default: break;
    }
    return total;
}

enum class Regime { Discrete, IntensiveWithDust, IntensiveInf, ComesDownFromInfinity };

inline std::string regime_name(Regime r) {
    switch (r) {
        case Regime::Discrete: return "DISCRETE";
        case Regime::IntensiveWithDust: return "INTENSIVE_W_DUST";
        case Regime::IntensiveInf: return "INTENSIVE_INF";
        default: return "CDI";
    }
}

enum class TriState { True, False, NotApplicable };

inline std::string tristate_name(TriState t) {
    switch (t) {
        case TriState::True: return "true";
        case TriState::False: return "false";
        default: return "not-applicable";
    }
}

/// One of the four decision integrals: either a finite value, certified
/// divergent, or skipped because the decision path never needed it.
struct IntegralReport {
    enum class Status { Value, Divergent, Skipped };
    std::string name;
    Status status = Status::Skipped;
    double value = 0.0;
};

struct RegimeClass {
    Regime regime = Regime::Discrete;
    TriState u_log_u_finite = TriState::NotApplicable;
    std::array<IntegralReport, 4> integrals; // nu_total, u_nu, u_log_u_nu, tail_one_over_psi
};

namespace detail {

/// ∫_v^∞ du/Psi(u) by geometric shells [v 2^k, v 2^{k+1}], assuming the
/// caller has already certified convergence.
inline double psi_tail_from(const LambdaMeasure& m, double v) {
    double total = 0.0;
    double a = v;
    for (int k = 0; k < 1200; ++k) {
        double b = 2.0 * a;
        double s = integrate([&](double u) { return 1.0 / psi(m, u); }, a, b, 1e-9, 12);
        total += s;
        if (k > 4 && s < total * 1e-13) return total;
        a = b;
    }
    throw std::runtime_error("psi tail integral did not converge within the shell budget");
}

/// Integral of g against the density part of Λ over the dyadic shell
/// [2^{-k-1}, 2^{-k}], with g given in the two-argument form g(u, 1-u).
template <typename G>
inline double density_shell(const LambdaMeasure& m, int k, G&& g) {
    const double a = std::ldexp(1.0, -k - 1);
    const double b = std::ldexp(1.0, -k);
    return integrate([&](double u) { return g(u, 1.0 - u) * m.density_at(u, 1.0 - u); }, a, b,
                     1e-10, 12);
}

} // namespace detail

/// ∫_v^∞ du/Psi — exposed for invariant checks and the speed harness.
inline double psi_tail_integral(const LambdaMeasure& m, double v) {
    if (!(v > 0.0)) throw std::invalid_argument("psi_tail_integral: v must be positive");
    return detail::psi_tail_from(m, v);
}

/// Classifies Λ into the four regimes through the decision tree
///   ∫ν < ∞ ⇒ DISCRETE; else ∫u ν < ∞ ⇒ INTENSIVE_W_DUST;
///   else ∫^∞ du/Psi = ∞ ⇒ INTENSIVE_INF; else CDI,
/// where ν(du) = u^{-2} Λ(du). Labeled families take analytic shortcuts;
/// everything else goes through shell-series divergence certification, and a
/// genuinely borderline case throws UndecidedError rather than guessing.
inline RegimeClass classify(const LambdaMeasure& m) {
    RegimeClass out;
    auto& nu = out.integrals[0];
    auto& unu = out.integrals[1];
    auto& ulu = out.integrals[2];
    auto& tail = out.integrals[3];
    nu.name = "nu_total";
    unu.name = "u_nu";
    ulu.name = "u_log_u_nu";
    tail.name = "tail_one_over_psi";

    // An atom at zero puts infinite mass into ν and forces Psi(u) ≥ c u²/2,
    // so the tail integral converges and the measure comes down from infinity.
    if (m.kingman_mass > 0.0) {
        nu.status = IntegralReport::Status::Divergent;
        unu.status = IntegralReport::Status::Divergent;
        tail.status = IntegralReport::Status::Value;
        tail.value = detail::psi_tail_from(m, 1.0);
        out.regime = Regime::ComesDownFromInfinity;
        out.u_log_u_finite = TriState::NotApplicable;
        return out;
    }

    // Interior atoms always contribute finitely.
    double atom_nu = 0.0, atom_unu = 0.0, atom_ulu = 0.0;
    for (const auto& [x, mass] : m.atoms) {
        atom_nu += mass / (x * x);
        atom_unu += mass / x;
        atom_ulu += -std::log(x) * mass / x;
    }

    if (!m.has_density()) {
        nu.status = IntegralReport::Status::Value;
        nu.value = atom_nu;
        unu.status = IntegralReport::Status::Value;
        unu.value = atom_unu;
        out.regime = Regime::Discrete;
        out.u_log_u_finite = TriState::NotApplicable;
        return out;
    }

    const bool analytic_lebesgue = m.family == MeasureFamily::Lebesgue;
    const bool analytic_beta = m.family == MeasureFamily::Beta;

    if (analytic_lebesgue || (analytic_beta && m.beta_alpha == 1.0)) {
        // Density bounded away from zero near the origin: ν ~ u^{-2}, u·ν ~ u^{-1},
        // and Psi grows like u log u, so the tail integral diverges.
        nu.status = IntegralReport::Status::Divergent;
        unu.status = IntegralReport::Status::Divergent;
        tail.status = IntegralReport::Status::Divergent;
        out.regime = Regime::IntensiveInf;
        out.u_log_u_finite = TriState::NotApplicable;
        return out;
    }

    if (analytic_beta) {
        const double a = m.beta_alpha;
        nu.status = IntegralReport::Status::Divergent; // density ~ u^{1-a}, ν ~ u^{-1-a}
        if (a < 1.0) {
            // ∫ u ν = B(1-a, a) / B(2-a, a), finite for a < 1.
            unu.status = IntegralReport::Status::Value;
            unu.value = std::exp(std::lgamma(1.0 - a) + std::lgamma(a) - std::lgamma(1.0) -
                                 m.beta_ln_norm);
            ulu.status = IntegralReport::Status::Value;
            ulu.value = integrate_unit([&](double u, double w) {
                return -std::log(u) / u * m.density_at(u, w);
            });
            out.regime = Regime::IntensiveWithDust;
            out.u_log_u_finite = TriState::True;
            return out;
        }
        // a > 1: Psi is regularly varying with index a, tail integral converges.
        unu.status = IntegralReport::Status::Divergent;
        tail.status = IntegralReport::Status::Value;
        tail.value = detail::psi_tail_from(m, 1.0);
        out.regime = Regime::ComesDownFromInfinity;
        out.u_log_u_finite = TriState::NotApplicable;
        return out;
    }

    // Numeric path: certify each integral by dyadic-shell analysis. The only
    // possible divergence of the ν-integrals is at 0 (densities are
    // integrable near 1 and u^{-2} is bounded there).
    auto nu_analysis = analyze_shell_series(
        [&](int k) { return detail::density_shell(m, k, [](double u, double) { return 1.0 / (u * u); }); });
    if (nu_analysis.verdict == SeriesVerdict::Undecided) throw UndecidedError("nu_total");
    if (nu_analysis.verdict == SeriesVerdict::Finite) {
        nu.status = IntegralReport::Status::Value;
        nu.value = nu_analysis.value + atom_nu;
        unu.status = IntegralReport::Status::Value;
        unu.value = analyze_shell_series([&](int k) {
                        return detail::density_shell(m, k, [](double u, double) { return 1.0 / u; });
                    }).value +
                    atom_unu;
        out.regime = Regime::Discrete;
        out.u_log_u_finite = TriState::NotApplicable;
        return out;
    }
    nu.status = IntegralReport::Status::Divergent;

    auto unu_analysis = analyze_shell_series(
        [&](int k) { return detail::density_shell(m, k, [](double u, double) { return 1.0 / u; }); });
    if (unu_analysis.verdict == SeriesVerdict::Undecided) throw UndecidedError("u_nu");
    if (unu_analysis.verdict == SeriesVerdict::Finite) {
        unu.status = IntegralReport::Status::Value;
        unu.value = unu_analysis.value + atom_unu;
        auto ulu_analysis = analyze_shell_series([&](int k) {
            return detail::density_shell(m, k, [](double u, double) { return -std::log(u) / u; });
        });
        if (ulu_analysis.verdict == SeriesVerdict::Undecided) throw UndecidedError("u_log_u_nu");
        if (ulu_analysis.verdict == SeriesVerdict::Finite) {
            ulu.status = IntegralReport::Status::Value;
            ulu.value = ulu_analysis.value + atom_ulu;
            out.u_log_u_finite = TriState::True;
        } else {
            ulu.status = IntegralReport::Status::Divergent;
            out.u_log_u_finite = TriState::False;
        }
        out.regime = Regime::IntensiveWithDust;
        return out;
    }
    unu.status = IntegralReport::Status::Divergent;

    auto tail_analysis = analyze_shell_series([&](int k) {
        const double a = std::ldexp(1.0, k);
        return integrate([&](double u) { return 1.0 / psi(m, u); }, a, 2.0 * a, 1e-9, 12);
    });
    if (tail_analysis.verdict == SeriesVerdict::Undecided) throw UndecidedError("tail_one_over_psi");
    if (tail_analysis.verdict == SeriesVerdict::Divergent) {
        tail.status = IntegralReport::Status::Divergent;
        out.regime = Regime::IntensiveInf;
    } else {
        tail.status = IntegralReport::Status::Value;
        tail.value = tail_analysis.value;
        out.regime = Regime::ComesDownFromInfinity;
    }
    out.u_log_u_finite = TriState::NotApplicable;
    return out;
}

/// Speed of coming down from infinity: the unique v(t) with
/// ∫_{v(t)}^∞ du/Psi(u) = t. Requires a CDI measure; relative error ≤ 1e-6
/// (the bisection runs well past that).
inline double cdi_speed(const LambdaMeasure& m, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("cdi_speed: t must be positive");
    if (classify(m).regime != Regime::ComesDownFromInfinity)
        throw std::domain_error("cdi_speed: measure is not in the CDI regime");

    auto shell = [&](double a) {
        return integrate([&](double u) { return 1.0 / psi(m, u); }, a, 2.0 * a, 1e-9, 12);
    };

    // Locate the octave [2^J, 2^{J+1}] containing v(t): G(2^J) ≥ t ≥ G(2^{J+1}).
    // Shell sums above u = 1 first, then extend downward if t is large.
    std::vector<double> up_shells; // shell j = [2^j, 2^{j+1}], j = 0,1,...
    double g_one = 0.0;
    for (int j = 0; j < 1200; ++j) {
        double s = shell(std::ldexp(1.0, j));
        up_shells.push_back(s);
        g_one += s;
        if (j > 4 && s < g_one * 1e-13) break;
    }

    double lo_v, hi_v, g_hi; // bracket: G(lo_v) >= t >= G(hi_v) = g_hi
    if (t <= g_one) {
        // suffix[j] = G(2^j), summed small-to-large to keep deep-tail values sharp
        std::vector<double> suffix(up_shells.size() + 1, 0.0);
        for (std::size_t i = up_shells.size(); i-- > 0;)
            suffix[i] = suffix[i + 1] + up_shells[i];
        std::size_t j = 0;
        while (j + 1 < up_shells.size() && suffix[j + 1] > t) ++j;
        if (j + 1 >= up_shells.size())
            throw std::runtime_error("cdi_speed: t below resolvable tail, v(t) too large");
        lo_v = std::ldexp(1.0, static_cast<int>(j));
        hi_v = std::ldexp(1.0, static_cast<int>(j) + 1);
        g_hi = suffix[j + 1];
    } else {
        double g = g_one;
        int j = 0;
        for (;; --j) {
            if (j < -1070) throw std::runtime_error("cdi_speed: t too large, v(t) underflows");
            double s = shell(std::ldexp(1.0, j - 1));
            if (g + s >= t) {
                lo_v = std::ldexp(1.0, j - 1);
                hi_v = std::ldexp(1.0, j);
                g_hi = g;
                break;
            }
            g += s;
        }
    }

    // Bisection on G(v) = g_top + ∫_v^{top} du/Psi, anchored at the fixed
    // octave top so every evaluation is against the same reference point.
    const double top = hi_v;
    const double g_top = g_hi;
    for (int iter = 0; iter < 90 && (hi_v - lo_v) > 1e-9 * lo_v; ++iter) {
        double mid = 0.5 * (lo_v + hi_v);
        double g_mid = g_top + integrate([&](double u) { return 1.0 / psi(m, u); }, mid, top, 1e-9, 12);
        if (g_mid >= t)
            lo_v = mid;
        else
            hi_v = mid;
    }
    return 0.5 * (lo_v + hi_v);
}

} // namespace lambda_flows
