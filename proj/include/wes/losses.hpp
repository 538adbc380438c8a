#pragma once

// Regression losses with value and derivative with respect to the prediction.
//
// Per-element conventions (e = yhat - y):
//   mse       e^2                        d = 2e
//   mae       |e|                        d = sign(e)
//   huber     e^2/2 or delta|e|-delta^2/2 d = e or delta*sign(e)
//   logcosh   ln cosh(e)                 d = tanh(e)
//   quantile  (1-gamma)e if e>0 else -gamma*e
//   wes       e^2 g(y) / 2               d = e g(y)
// Batch values are means over elements; batch gradients are elementwise / N.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "wes/error.hpp"

namespace wes {

namespace loss {
struct Mse {};
struct Mae {};
struct Huber {
    double delta = 1.0;
};
struct LogCosh {};
struct Quantile {
    double gamma = 0.5;
};
struct Wes {
    double beta = 8.0;
};
}  // namespace loss

using LossSpec = std::variant<loss::Mse, loss::Mae, loss::Huber, loss::LogCosh, loss::Quantile, loss::Wes>;

inline bool is_wes(const LossSpec& spec) { return std::holds_alternative<loss::Wes>(spec); }

inline std::optional<double> wes_beta(const LossSpec& spec) {
    if (const auto* w = std::get_if<loss::Wes>(&spec)) return w->beta;
    return std::nullopt;
}

/// Shortest round-trip decimal form of a hyperparameter.
inline std::string format_number(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view text, std::string_view what) {
    double value = 0.0;
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, value);
    if (res.ec != std::errc{} || res.ptr != end) {
        throw ConfigError("cannot parse " + std::string(what) + " from '" + std::string(text) + "'");
    }
    return value;
}

inline std::string loss_id(const LossSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, loss::Mse>) return "mse";
            else if constexpr (std::is_same_v<T, loss::Mae>) return "mae";
            else if constexpr (std::is_same_v<T, loss::Huber>) return "huber:" + format_number(s.delta);
            else if constexpr (std::is_same_v<T, loss::LogCosh>) return "logcosh";
            else if constexpr (std::is_same_v<T, loss::Quantile>) return "quantile:" + format_number(s.gamma);
            else return "wes:" + format_number(s.beta);
        },
        spec);
}

/// Parses "mse", "mae", "huber:<delta>", "logcosh", "quantile:<gamma>", "wes:<beta>".
inline LossSpec parse_loss(std::string_view id) {
    const auto colon = id.find(':');
    const auto name = id.substr(0, colon);
    const auto arg = colon == std::string_view::npos ? std::string_view{} : id.substr(colon + 1);
    const bool has_arg = colon != std::string_view::npos;

    auto require_no_arg = [&] {
        if (has_arg) throw ConfigError("loss '" + std::string(name) + "' takes no parameter");
    };
    if (name == "mse") return require_no_arg(), LossSpec{loss::Mse{}};
    if (name == "mae") return require_no_arg(), LossSpec{loss::Mae{}};
    if (name == "logcosh" || name == "log-cosh") return require_no_arg(), LossSpec{loss::LogCosh{}};
    if (name == "huber") {
        const double delta = has_arg ? parse_number(arg, "huber delta") : 1.0;
        if (!(delta > 0.0)) throw ConfigError("huber delta must be positive");
        return loss::Huber{delta};
    }
    if (name == "quantile") {
        const double gamma = has_arg ? parse_number(arg, "quantile gamma") : 0.5;
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("quantile gamma must lie in (0, 1)");
        return loss::Quantile{gamma};
    }
    if (name == "wes") {
        if (!has_arg) throw ConfigError("wes loss needs a beta, e.g. wes:8");
        const double beta = parse_number(arg, "wes beta");
        if (!(beta > 0.0)) throw ConfigError("wes beta must be positive");
        return loss::Wes{beta};
    }
    throw ConfigError("unknown loss '" + std::string(id) + "'");
}

/// ln cosh(e) without overflow.
inline double log_cosh(double e) noexcept {
    const double a = std::abs(e);
    return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

inline double element_loss(const LossSpec& spec, double pred, double label, double weight = 1.0) {
    const double e = pred - label;
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, loss::Mse>) return e * e;
            else if constexpr (std::is_same_v<T, loss::Mae>) return std::abs(e);
            else if constexpr (std::is_same_v<T, loss::Huber>) {
                const double a = std::abs(e);
                return a <= s.delta ? 0.5 * e * e : s.delta * a - 0.5 * s.delta * s.delta;
            } else if constexpr (std::is_same_v<T, loss::LogCosh>) return log_cosh(e);
            else if constexpr (std::is_same_v<T, loss::Quantile>) {
                // Over-prediction (y < yhat) costs (1 - gamma)|e|, under-prediction gamma|e|.
                return e > 0.0 ? (1.0 - s.gamma) * e : -s.gamma * e;
            } else return 0.5 * e * e * weight;
        },
        spec);
}

/// d/dyhat of the per-element loss; MAE and quantile kinks take the zero subgradient.
inline double loss_grad(const LossSpec& spec, double pred, double label, double weight = 1.0) {
    const double e = pred - label;
    const double sign = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, loss::Mse>) return 2.0 * e;
            else if constexpr (std::is_same_v<T, loss::Mae>) return sign;
            else if constexpr (std::is_same_v<T, loss::Huber>) {
                return std::abs(e) <= s.delta ? e : s.delta * sign;
            } else if constexpr (std::is_same_v<T, loss::LogCosh>) return std::tanh(e);
            else if constexpr (std::is_same_v<T, loss::Quantile>) {
                if (e > 0.0) return 1.0 - s.gamma;
                if (e < 0.0) return -s.gamma;
                return 0.0;
            } else return e * weight;
        },
        spec);
}

namespace detail {

inline void check_batch(const LossSpec& spec, std::span<const double> preds, std::span<const double> labels,
                        std::span<const double> weights) {
    if (preds.size() != labels.size()) throw ConfigError("loss: predictions and labels differ in length");
    if (preds.empty()) throw ConfigError("loss: empty batch");
    if (is_wes(spec) && weights.size() != labels.size()) {
        throw ConfigError("loss: WES needs one precomputed weight g(y) per label");
    }
}

}  // namespace detail

/// Batch-mean loss. `weights` holds g(y_i) and is required for WES only.
inline double loss_value(const LossSpec& spec, std::span<const double> preds, std::span<const double> labels,
                         std::span<const double> weights = {}) {
    detail::check_batch(spec, preds, labels, weights);
    const bool weighted = is_wes(spec);
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        sum += element_loss(spec, preds[i], labels[i], weighted ? weights[i] : 1.0);
    }
    return sum / static_cast<double>(preds.size());
}

/// Gradient of the batch-mean loss with respect to each prediction.
inline std::vector<double> loss_gradient(const LossSpec& spec, std::span<const double> preds,
                                         std::span<const double> labels, std::span<const double> weights = {}) {
    detail::check_batch(spec, preds, labels, weights);
    const bool weighted = is_wes(spec);
    const double inv_n = 1.0 / static_cast<double>(preds.size());
    std::vector<double> grad(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        grad[i] = loss_grad(spec, preds[i], labels[i], weighted ? weights[i] : 1.0) * inv_n;
    }
    return grad;
}

}  // namespace wes
