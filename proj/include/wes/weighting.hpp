#pragma once

// Label-density weighting curve g(x).
//
// The label PDF is estimated with an equal-width histogram on [0, 1], fitted
// by a least-squares polynomial, clamped to [0, f_max], and mirrored into
//     g(x) = (beta - c) * (1 - f(x) / f_max) + c,
// so g equals c at the density mode and beta where the density vanishes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wes/error.hpp"

namespace wes {

inline constexpr std::size_t kDefaultPdfBins = 100;
inline constexpr std::size_t kDefaultPolyDegree = 12;
inline constexpr std::size_t kWeightGridPoints = 10001;

struct PdfEstimate {
    std::vector<double> bin_centers;
    std::vector<double> densities;
    double bin_width = 0.0;
};

struct PolynomialFit {
    std::vector<double> coeffs;  // ascending powers
    double residual_rms = 0.0;
};

/// Horner evaluation, coefficients in ascending order.
inline double eval_polynomial(std::span<const double> coeffs, double x) noexcept {
    double acc = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
    return acc;
}

inline PdfEstimate empirical_pdf(std::span<const double> labels, std::size_t bins = kDefaultPdfBins) {
    if (labels.empty()) throw ConfigError("empirical_pdf: no labels");
    if (bins < 2) throw ConfigError("empirical_pdf: need at least 2 bins");

    PdfEstimate pdf;
    pdf.bin_width = 1.0 / static_cast<double>(bins);
    pdf.bin_centers.resize(bins);
    pdf.densities.assign(bins, 0.0);
    for (std::size_t b = 0; b < bins; ++b) pdf.bin_centers[b] = (static_cast<double>(b) + 0.5) * pdf.bin_width;

    std::vector<std::size_t> counts(bins, 0);
    for (double y : labels) {
        if (!(y >= 0.0 && y <= 1.0)) throw ConfigError("empirical_pdf: label outside [0, 1]");
        // Rightmost bin is closed so y = 1 lands in the last bin.
        const auto b = std::min(static_cast<std::size_t>(y * static_cast<double>(bins)), bins - 1);
        ++counts[b];
    }
    const double scale = 1.0 / (static_cast<double>(labels.size()) * pdf.bin_width);
    for (std::size_t b = 0; b < bins; ++b) pdf.densities[b] = static_cast<double>(counts[b]) * scale;
    return pdf;
}

/// Ordinary least squares of densities on bin centers, solved by
/// column-pivoted Householder QR of the Vandermonde matrix.
inline PolynomialFit fit_pdf_polynomial(const PdfEstimate& pdf, std::size_t degree = kDefaultPolyDegree) {
    const std::size_t n = pdf.bin_centers.size();
    if (degree < 1) throw ConfigError("fit_pdf_polynomial: degree must be at least 1");
    if (n <= degree) {
        throw ConfigError("fit_pdf_polynomial: " + std::to_string(n) + " bins cannot determine a degree-" +
                          std::to_string(degree) + " polynomial");
    }
    const auto rows = static_cast<Eigen::Index>(n);
    const auto cols = static_cast<Eigen::Index>(degree + 1);
    Eigen::MatrixXd design(rows, cols);
    Eigen::VectorXd rhs(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double x = pdf.bin_centers[static_cast<std::size_t>(r)];
        double power = 1.0;
        for (Eigen::Index c = 0; c < cols; ++c) {
            design(r, c) = power;
            power *= x;
        }
        rhs(r) = pdf.densities[static_cast<std::size_t>(r)];
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < cols) throw ConfigError("fit_pdf_polynomial: rank-deficient design");
    const Eigen::VectorXd solution = qr.solve(rhs);

    PolynomialFit fit;
    fit.coeffs.assign(solution.data(), solution.data() + solution.size());
    fit.residual_rms = std::sqrt((design * solution - rhs).squaredNorm() / static_cast<double>(n));
    return fit;
}

class WeightingCurve {
public:
    /// `c` is the lower weight bound, 1/(y_max - y_min) for the raw label range.
    WeightingCurve(std::vector<double> poly_coeffs, double beta, double c = 1.0)
        : coeffs_(std::move(poly_coeffs)), beta_(beta), c_(c) {
        if (coeffs_.empty()) throw ConfigError("WeightingCurve: empty polynomial");
        if (!(c_ > 0.0)) throw ConfigError("WeightingCurve: c must be positive");
        if (!(beta_ >= c_)) throw ConfigError("WeightingCurve: beta must be >= c");
        f_max_ = 0.0;
        for (std::size_t i = 0; i < kWeightGridPoints; ++i) {
            const double x = static_cast<double>(i) / static_cast<double>(kWeightGridPoints - 1);
            const double f = std::max(0.0, eval_polynomial(coeffs_, x));
            if (f > f_max_) {
                f_max_ = f;
                mode_ = x;
            }
        }
        if (!(f_max_ > 0.0)) throw ConfigError("WeightingCurve: fitted density is nowhere positive");
    }

    /// Fitted density clamped to [0, f_max].
    double density(double x) const noexcept {
        return std::clamp(eval_polynomial(coeffs_, x), 0.0, f_max_);
    }

    double operator()(double x) const noexcept {
        return (beta_ - c_) * (1.0 - density(x) / f_max_) + c_;
    }

    /// g evaluated at each label, for per-sample loss weights.
    std::vector<double> weights_at(std::span<const double> labels) const {
        std::vector<double> w(labels.size());
        std::transform(labels.begin(), labels.end(), w.begin(), [this](double y) { return (*this)(y); });
        return w;
    }

    const std::vector<double>& poly_coeffs() const noexcept { return coeffs_; }
    double f_max() const noexcept { return f_max_; }
    double mode() const noexcept { return mode_; }
    double beta() const noexcept { return beta_; }
    double c() const noexcept { return c_; }

private:
    std::vector<double> coeffs_;
    double beta_;
    double c_;
    double f_max_ = 0.0;
    double mode_ = 0.0;
};

inline double eval_weight(const WeightingCurve& curve, double x) { return curve(x); }

/// Histogram + polynomial fit + g for a label series already normalized to [0, 1].
inline WeightingCurve make_weighting_curve(std::span<const double> labels, double beta,
                                           std::size_t bins = kDefaultPdfBins,
                                           std::size_t degree = kDefaultPolyDegree) {
    if (labels.empty()) throw ConfigError("make_weighting_curve: no labels");
    const auto [lo, hi] = std::minmax_element(labels.begin(), labels.end());
    if (!(*hi > *lo)) throw ConfigError("make_weighting_curve: labels have zero range");
    const double c = 1.0 / (*hi - *lo);
    auto fit = fit_pdf_polynomial(empirical_pdf(labels, bins), degree);
    return WeightingCurve(std::move(fit.coeffs), beta, c);
}

}  // namespace wes
