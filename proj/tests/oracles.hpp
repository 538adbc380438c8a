#pragma once

// Independent reference implementations used only by the tests.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace oracle {

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
    return 0.5 * (1.0 + std::erf((x - mean) / (sd * std::numbers::sqrt2)));
}

/// Bisection on the erf CDF; interval halves until narrower than tol.
inline double normal_quantile(double p, double mean = 0.0, double sd = 1.0, double tol = 1e-13) {
    double lo = mean - 40.0 * sd;
    double hi = mean + 40.0 * sd;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        (normal_cdf(mid, mean, sd) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Least-squares polynomial through the normal equations (X^T X) c = X^T y.
/// Solved in long double on the centred variable u = 2x - 1 to tame the
/// conditioning; returns the fitted values at `at`.
inline std::vector<double> polyfit_normal_equations(std::span<const double> x, std::span<const double> y,
                                                    std::size_t degree, std::span<const double> at) {
    using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto m = static_cast<Eigen::Index>(degree + 1);
    auto row = [m](double xv) {
        Vec r(m);
        long double p = 1.0L;
        const long double u = 2.0L * xv - 1.0L;
        for (Eigen::Index k = 0; k < m; ++k) {
            r(k) = p;
            p *= u;
        }
        return r;
    };
    Mat xtx = Mat::Zero(m, m);
    Vec xty = Vec::Zero(m);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec r = row(x[static_cast<std::size_t>(i)]);
        xtx += r * r.transpose();
        xty += r * static_cast<long double>(y[static_cast<std::size_t>(i)]);
    }
    const Vec c = xtx.ldlt().solve(xty);
    std::vector<double> out;
    out.reserve(at.size());
    for (double xv : at) out.push_back(static_cast<double>(row(xv).dot(c)));
    return out;
}

/// Direct evaluation of a0 + sum_i a_i cos(i pi t / M).
inline std::vector<double> cosine_partial_sum(double a0, std::span<const double> a, std::span<const double> t,
                                              double M) {
    std::vector<double> out(t.size(), a0);
    for (std::size_t j = 0; j < t.size(); ++j) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            out[j] += a[i] * std::cos(static_cast<double>(i + 1) * std::numbers::pi * t[j] / M);
        }
    }
    return out;
}

inline double rmse(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_sd(std::span<const double> v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace oracle
