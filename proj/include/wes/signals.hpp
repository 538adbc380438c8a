#pragma once

// Cosine-series features of a label curve: spectrum by trapezoid rule,
// harmonic selection by coefficient magnitude, feature synthesis, and
// seeded Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "wes/curvegen.hpp"
#include "wes/error.hpp"
#include "wes/rng.hpp"

namespace wes {

struct CosineSpectrum {
    double a0 = 0.0;
    std::vector<double> coefficients;  // a_1 .. a_K
    double domain_length = kDefaultDomainLength;

    std::size_t order() const noexcept { return coefficients.size(); }
    /// a_i for i in 1..K.
    double at(std::size_t i) const { return coefficients.at(i - 1); }
};

struct HarmonicSet {
    std::vector<std::size_t> indices;  // n_k, 1-based harmonic numbers
    std::vector<double> coefficients;  // a_{n_k}
};

/// Row-major samples x features.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    double sigma = 0.0;
    std::uint64_t seed = 0;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

inline constexpr std::size_t kDefaultHarmonicOrder = 300;
inline constexpr std::size_t kDefaultFeatureCount = 5;

/// a_0 = (1/M) int L dt and a_i = (2/M) int L cos(i pi t / M) dt on [0, M],
/// composite trapezoid over the curve grid closed periodically with L(M) = L(0).
inline CosineSpectrum cosine_coefficients(const LabelCurve& curve, std::size_t order) {
    const std::size_t n = curve.size();
    if (order < 1) throw ConfigError("cosine_coefficients: K must be at least 1");
    if (n < 2 * order) {
        throw ConfigError("cosine_coefficients: curve of " + std::to_string(n) +
                          " samples is too coarse for K = " + std::to_string(order));
    }
    const double m = curve.domain_length;
    const double h = m / static_cast<double>(n);
    const double closing = curve.values.front();

    CosineSpectrum spectrum;
    spectrum.domain_length = m;
    spectrum.coefficients.resize(order);

    double sum = 0.5 * (curve.values.front() + closing);
    for (std::size_t j = 1; j < n; ++j) sum += curve.values[j];
    spectrum.a0 = sum * h / m;

    for (std::size_t i = 1; i <= order; ++i) {
        const double w = static_cast<double>(i) * std::numbers::pi / m;
        // cos at t = 0 is 1, at t = M is (-1)^i.
        double acc = 0.5 * (curve.values.front() + closing * (i % 2 == 0 ? 1.0 : -1.0));
        for (std::size_t j = 1; j < n; ++j) acc += curve.values[j] * std::cos(w * curve.time_at(j));
        spectrum.coefficients[i - 1] = 2.0 * acc * h / m;
    }
    return spectrum;
}

/// The N coefficients of largest magnitude (a_0 excluded), ties to the smaller index.
inline HarmonicSet select_harmonics(const CosineSpectrum& spectrum, std::size_t count) {
    const std::size_t order = spectrum.order();
    if (count < 1) throw ConfigError("select_harmonics: N must be at least 1");
    if (count > order) throw ConfigError("select_harmonics: N exceeds the spectrum order K");

    std::vector<std::size_t> idx(order);
    std::iota(idx.begin(), idx.end(), std::size_t{1});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(spectrum.at(a)) > std::abs(spectrum.at(b));
    });
    HarmonicSet set;
    set.indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
    for (auto i : set.indices) set.coefficients.push_back(spectrum.at(i));
    return set;
}

/// Noiseless features: entry (j, k) = cos(n_k pi t_j / M).
inline FeatureMatrix synthesize_features(const HarmonicSet& harmonics, std::span<const double> grid,
                                         double domain_length) {
    if (grid.empty()) throw ConfigError("synthesize_features: empty time grid");
    if (!(domain_length > 0.0)) throw ConfigError("synthesize_features: M must be positive");
    FeatureMatrix features(grid.size(), harmonics.indices.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        for (std::size_t k = 0; k < harmonics.indices.size(); ++k) {
            const double n_k = static_cast<double>(harmonics.indices[k]);
            features(j, k) = std::cos(n_k * std::numbers::pi * grid[j] / domain_length);
        }
    }
    return features;
}

/// Adds i.i.d. N(0, sigma^2) per entry. Column k draws from its own stream
/// seeded by (seed, k), so the result does not depend on evaluation order.
inline FeatureMatrix add_noise(const FeatureMatrix& features, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw ConfigError("add_noise: sigma must be non-negative");
    FeatureMatrix out = features;
    out.sigma = sigma;
    out.seed = seed;
    if (sigma == 0.0) return out;
    for (std::size_t k = 0; k < out.cols; ++k) {
        Rng rng(combine_seed(seed, k));
        for (std::size_t j = 0; j < out.rows; ++j) out(j, k) += sigma * rng.normal();
    }
    return out;
}

/// a_0 + sum_i a_i cos(i pi t / M) evaluated on the grid.
inline std::vector<double> partial_sum_reconstruction(const CosineSpectrum& spectrum,
                                                      std::span<const double> grid) {
    std::vector<double> out(grid.size(), spectrum.a0);
    const double m = spectrum.domain_length;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        double acc = spectrum.a0;
        for (std::size_t i = 1; i <= spectrum.order(); ++i) {
            acc += spectrum.at(i) * std::cos(static_cast<double>(i) * std::numbers::pi * grid[j] / m);
        }
        out[j] = acc;
    }
    return out;
}

}  // namespace wes
