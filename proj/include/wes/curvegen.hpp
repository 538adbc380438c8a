#pragma once

// Synthetic label curves built from inverse CDFs.
//
// A basis curve is the quantile function of a normal or log-normal law
// sampled at probability midpoints; bimodal kinds concatenate an sd = 1 and
// an sd = 1/2 component. The label curve tiles [basis, reverse(basis)] and is
// rescaled to [0, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wes/error.hpp"

namespace wes {

enum class DistributionKind { Unimodal, SkewedUnimodal, Bimodal, SkewedBimodal };

inline constexpr std::array<DistributionKind, 4> kAllDistributions = {
    DistributionKind::Unimodal, DistributionKind::SkewedUnimodal, DistributionKind::Bimodal,
    DistributionKind::SkewedBimodal};

inline std::string_view to_string(DistributionKind kind) {
    switch (kind) {
        case DistributionKind::Unimodal: return "unimodal";
        case DistributionKind::SkewedUnimodal: return "skewed-unimodal";
        case DistributionKind::Bimodal: return "bimodal";
        case DistributionKind::SkewedBimodal: return "skewed-bimodal";
    }
    return "unknown";
}

inline DistributionKind parse_distribution(std::string_view name) {
    for (auto kind : kAllDistributions) {
        if (to_string(kind) == name) return kind;
    }
    if (name == "uni") return DistributionKind::Unimodal;
    if (name == "skewuni" || name == "skewed_unimodal") return DistributionKind::SkewedUnimodal;
    if (name == "bi") return DistributionKind::Bimodal;
    if (name == "skewbi" || name == "skewed_bimodal") return DistributionKind::SkewedBimodal;
    throw ConfigError("unknown distribution kind '" + std::string(name) + "'");
}

inline bool is_bimodal(DistributionKind kind) {
    return kind == DistributionKind::Bimodal || kind == DistributionKind::SkewedBimodal;
}

inline bool is_skewed(DistributionKind kind) {
    return kind == DistributionKind::SkewedUnimodal || kind == DistributionKind::SkewedBimodal;
}

struct BasisCurve {
    std::vector<double> values;
    DistributionKind kind = DistributionKind::Unimodal;
};

struct LabelCurve {
    std::vector<double> values;
    DistributionKind kind = DistributionKind::Unimodal;
    double domain_length = 10.0;

    std::size_t size() const noexcept { return values.size(); }

    /// Left-aligned uniform grid: t_j = j * M / T.
    double time_at(std::size_t j) const noexcept {
        return static_cast<double>(j) * domain_length / static_cast<double>(values.size());
    }

    std::vector<double> time_grid() const {
        std::vector<double> t(values.size());
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = time_at(j);
        return t;
    }
};

inline constexpr std::size_t kDefaultBasisPoints = 2000;
inline constexpr std::size_t kDefaultPairRepeats = 10;
inline constexpr double kDefaultDomainLength = 10.0;

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace detail {

// Acklam's rational approximation to the standard normal quantile
// (relative error about 1.15e-9 before refinement).
inline double acklam_quantile(double p) {
    constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                            1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                            6.680131188771972e+01,  -1.328068155288572e+01};
    constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                            -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                            3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    constexpr double p_high = 1.0 - p_low;

    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > p_high) {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

/// Quantile of N(mean, sd^2): rational approximation plus one Newton step
/// against the erfc-based CDF.
inline double inverse_normal_cdf(double p, double mean = 0.0, double sd = 1.0) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("inverse_normal_cdf: p must lie in (0, 1)");
    if (!(sd > 0.0)) throw DomainError("inverse_normal_cdf: sd must be positive");

    double x = detail::acklam_quantile(p);
    // Work with the smaller tail so the residual keeps full relative precision.
    const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    const double residual = p < 0.5 ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x);
    if (density > 0.0) x -= residual / density;
    return mean + sd * x;
}

inline double inverse_lognormal_cdf(double p, double mu = 0.0, double sd = 1.0) {
    return std::exp(inverse_normal_cdf(p, mu, sd));
}

namespace detail {

inline void append_quantiles(std::vector<double>& out, std::size_t count, double sd, bool skewed) {
    for (std::size_t j = 0; j < count; ++j) {
        const double p = (static_cast<double>(j) + 0.5) / static_cast<double>(count);
        out.push_back(skewed ? inverse_lognormal_cdf(p, 0.0, sd) : inverse_normal_cdf(p, 0.0, sd));
    }
}

}  // namespace detail

inline BasisCurve generate_basis(DistributionKind kind, std::size_t n_points = kDefaultBasisPoints) {
    if (n_points < 2) throw ConfigError("generate_basis: n_points must be at least 2");
    if (is_bimodal(kind) && n_points % 2 != 0) {
        throw ConfigError("generate_basis: bimodal kinds need an even n_points");
    }
    BasisCurve basis;
    basis.kind = kind;
    basis.values.reserve(n_points);
    const bool skewed = is_skewed(kind);
    if (is_bimodal(kind)) {
        detail::append_quantiles(basis.values, n_points / 2, 1.0, skewed);
        detail::append_quantiles(basis.values, n_points / 2, 0.5, skewed);
    } else {
        detail::append_quantiles(basis.values, n_points, 1.0, skewed);
    }
    return basis;
}

/// Affine map onto [0, 1]; the extrema land on exactly 0 and 1.
inline std::vector<double> uniform_normalize(std::span<const double> series) {
    if (series.empty()) throw ConfigError("uniform_normalize: empty series");
    const auto [lo_it, hi_it] = std::minmax_element(series.begin(), series.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) throw ConfigError("uniform_normalize: degenerate range (constant series)");
    const double range = hi - lo;
    std::vector<double> out(series.size());
    std::transform(series.begin(), series.end(), out.begin(),
                   [&](double x) { return (x - lo) / range; });
    return out;
}

inline LabelCurve build_label_curve(const BasisCurve& basis,
                                    std::size_t pair_repeats = kDefaultPairRepeats,
                                    double domain_length = kDefaultDomainLength) {
    if (pair_repeats < 1) throw ConfigError("build_label_curve: pair_repeats must be >= 1");
    if (!(domain_length > 0.0)) throw ConfigError("build_label_curve: domain_length must be positive");
    if (basis.values.empty()) throw ConfigError("build_label_curve: empty basis");

    const std::size_t n = basis.values.size();
    std::vector<double> tiled;
    tiled.reserve(2 * n * pair_repeats);
    for (std::size_t r = 0; r < pair_repeats; ++r) {
        tiled.insert(tiled.end(), basis.values.begin(), basis.values.end());
        tiled.insert(tiled.end(), basis.values.rbegin(), basis.values.rend());
    }
    return LabelCurve{uniform_normalize(tiled), basis.kind, domain_length};
}

/// Default label curve for a kind: 2000-point basis, 10 mirrored pairs, M = 10.
inline LabelCurve default_label_curve(DistributionKind kind) {
    return build_label_curve(generate_basis(kind, kDefaultBasisPoints), kDefaultPairRepeats,
                             kDefaultDomainLength);
}

}  // namespace wes
