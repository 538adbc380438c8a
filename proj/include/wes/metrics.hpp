#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wes/error.hpp"

namespace wes {

inline constexpr std::size_t kDefaultOverlapBins = 100;
inline constexpr double kExtremeTailProbability = 0.05;
inline constexpr double kTailMeanPercentile = 0.01;

enum class TailSide { Left, Right };

struct MetricReport {
    double rmse = 0.0;
    double cc = 0.0;
    double overlap = 0.0;
    double extreme_rmse = 0.0;
    double l1 = 0.0;
    double l2 = 1.0;
    double p1_tail_mean = 0.0;
    double p99_tail_mean = 0.0;
};

namespace detail {

inline void check_pair(std::span<const double> preds, std::span<const double> labels, const char* who) {
    if (preds.size() != labels.size()) throw ConfigError(std::string(who) + ": length mismatch");
    if (preds.empty()) throw ConfigError(std::string(who) + ": empty input");
}

}  // namespace detail

inline double rmse(std::span<const double> preds, std::span<const double> labels) {
    detail::check_pair(preds, labels, "rmse");
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = preds[i] - labels[i];
        sum += e * e;
    }
    return std::sqrt(sum / static_cast<double>(preds.size()));
}

/// Sample Pearson correlation (two-pass, centered).
inline double pearson_cc(std::span<const double> preds, std::span<const double> labels) {
    detail::check_pair(preds, labels, "pearson_cc");
    const auto n = static_cast<double>(preds.size());
    double mean_p = 0.0;
    double mean_l = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        mean_p += preds[i];
        mean_l += labels[i];
    }
    mean_p /= n;
    mean_l /= n;
    double spp = 0.0;
    double sll = 0.0;
    double spl = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double dp = preds[i] - mean_p;
        const double dl = labels[i] - mean_l;
        spp += dp * dp;
        sll += dl * dl;
        spl += dp * dl;
    }
    if (!(spp > 0.0) || !(sll > 0.0)) throw DomainError("pearson_cc: zero variance, correlation undefined");
    return std::clamp(spl / std::sqrt(spp * sll), -1.0, 1.0);
}

/// Histogram intersection of two samples on their shared range:
/// sum_i min(p_i, q_i) * width with each histogram normalized to unit area.
inline double overlap_area(std::span<const double> a, std::span<const double> b,
                           std::size_t bins = kDefaultOverlapBins) {
    if (a.empty() || b.empty()) throw ConfigError("overlap_area: empty sample");
    if (bins < 1) throw ConfigError("overlap_area: need at least one bin");
    const auto [a_lo, a_hi] = std::minmax_element(a.begin(), a.end());
    const auto [b_lo, b_hi] = std::minmax_element(b.begin(), b.end());
    const double lo = std::min(*a_lo, *b_lo);
    const double hi = std::max(*a_hi, *b_hi);
    if (!(hi > lo)) {
        // Both samples are the same single value.
        return 1.0;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    auto histogram = [&](std::span<const double> s) {
        std::vector<double> h(bins, 0.0);
        for (double x : s) {
            const auto k = std::min(static_cast<std::size_t>((x - lo) / width), bins - 1);
            h[k] += 1.0;
        }
        for (auto& v : h) v /= static_cast<double>(s.size());
        return h;
    };
    const auto ha = histogram(a);
    const auto hb = histogram(b);
    // Per-bin probability mass already equals density * width.
    double area = 0.0;
    for (std::size_t k = 0; k < bins; ++k) area += std::min(ha[k], hb[k]);
    return std::clamp(area, 0.0, 1.0);
}

/// Linear-interpolation quantile of a sorted sample: position p (n - 1).
inline double sorted_quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw ConfigError("quantile: empty sample");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::span<const double> values, double p) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return sorted_quantile(sorted, p);
}

/// (l1, l2) with tail_prob of the label mass below l1 and above l2.
inline std::pair<double, double> extreme_thresholds(std::span<const double> labels,
                                                    double tail_prob = kExtremeTailProbability) {
    if (!(tail_prob > 0.0 && tail_prob < 0.5)) throw ConfigError("extreme_thresholds: tail_prob must lie in (0, 0.5)");
    std::vector<double> sorted(labels.begin(), labels.end());
    std::sort(sorted.begin(), sorted.end());
    return {sorted_quantile(sorted, tail_prob), sorted_quantile(sorted, 1.0 - tail_prob)};
}

/// RMSE over samples whose label lies in [.., l1] or [l2, ..].
inline double extreme_rmse(std::span<const double> preds, std::span<const double> labels, double l1, double l2) {
    detail::check_pair(preds, labels, "extreme_rmse");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] <= l1 || labels[i] >= l2) {
            const double e = preds[i] - labels[i];
            sum += e * e;
            ++count;
        }
    }
    if (count == 0) throw ConfigError("extreme_rmse: no labels in the extreme region");
    return std::sqrt(sum / static_cast<double>(count));
}

/// Mean prediction over samples whose label is at or beyond a threshold.
inline double tail_mean_at(std::span<const double> preds, std::span<const double> labels, double threshold,
                           TailSide side) {
    detail::check_pair(preds, labels, "tail_mean");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool in_tail = side == TailSide::Left ? labels[i] <= threshold : labels[i] >= threshold;
        if (in_tail) {
            sum += preds[i];
            ++count;
        }
    }
    if (count == 0) throw ConfigError("tail_mean: empty tail");
    return sum / static_cast<double>(count);
}

/// Mean prediction over the bottom (Left) or top (Right) `percentile` of labels.
inline double tail_mean(std::span<const double> preds, std::span<const double> labels, double percentile,
                        TailSide side) {
    if (!(percentile > 0.0 && percentile < 0.5)) throw ConfigError("tail_mean: percentile must lie in (0, 0.5)");
    detail::check_pair(preds, labels, "tail_mean");
    const double threshold = quantile(labels, side == TailSide::Left ? percentile : 1.0 - percentile);
    return tail_mean_at(preds, labels, threshold, side);
}

/// All four metrics plus the P1/P99 tail means. Extreme-region thresholds are
/// supplied by the caller (computed once from the full label curve).
inline MetricReport evaluate(std::span<const double> preds, std::span<const double> labels, double l1, double l2,
                             std::size_t overlap_bins = kDefaultOverlapBins) {
    MetricReport r;
    r.rmse = rmse(preds, labels);
    r.cc = pearson_cc(preds, labels);
    r.overlap = overlap_area(preds, labels, overlap_bins);
    r.l1 = l1;
    r.l2 = l2;
    r.extreme_rmse = extreme_rmse(preds, labels, l1, l2);
    r.p1_tail_mean = tail_mean(preds, labels, kTailMeanPercentile, TailSide::Left);
    r.p99_tail_mean = tail_mean(preds, labels, kTailMeanPercentile, TailSide::Right);
    return r;
}

}  // namespace wes
