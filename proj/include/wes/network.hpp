#pragma once

// Fully connected regression network with sigmoid hidden layers and a
// linear output, trained by hand-derived backpropagation and Adam.
//
// Samples are stored column-wise: a batch of B inputs is an n_1 x B matrix.
//   forward:   z_{i+1} = W_i a_i + b_i,  a_{i+1} = sigmoid(z_{i+1}) (identity on the last layer)
//   backward:  delta_L = dJ/da_L,  delta_i = (W_i^T delta_{i+1}) .* a_i .* (1 - a_i)
//              dJ/dW_i = delta_{i+1} a_i^T,  dJ/db_i = sum over the batch of delta_{i+1}

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wes/curvegen.hpp"
#include "wes/error.hpp"
#include "wes/losses.hpp"
#include "wes/rng.hpp"
#include "wes/signals.hpp"
#include "wes/weighting.hpp"

namespace wes {

struct Architecture {
    std::vector<std::size_t> layer_sizes{5, 25, 25, 25, 5, 1};

    std::size_t num_layers() const noexcept { return layer_sizes.size(); }
    std::size_t input_size() const { return layer_sizes.front(); }

    void validate() const {
        if (layer_sizes.size() < 2) throw ConfigError("Architecture: need at least an input and an output layer");
        if (layer_sizes.back() != 1) throw ConfigError("Architecture: output layer must have exactly one node");
        for (auto n : layer_sizes) {
            if (n == 0) throw ConfigError("Architecture: empty layer");
        }
    }
};

struct MlpParams {
    std::vector<Eigen::MatrixXd> weights;  // W_i: n_{i+1} x n_i
    std::vector<Eigen::VectorXd> biases;   // b_i: n_{i+1}

    std::size_t num_transitions() const noexcept { return weights.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
        return n;
    }

    static MlpParams zeros(const Architecture& arch) {
        arch.validate();
        MlpParams p;
        for (std::size_t i = 0; i + 1 < arch.num_layers(); ++i) {
            const auto rows = static_cast<Eigen::Index>(arch.layer_sizes[i + 1]);
            const auto cols = static_cast<Eigen::Index>(arch.layer_sizes[i]);
            p.weights.push_back(Eigen::MatrixXd::Zero(rows, cols));
            p.biases.push_back(Eigen::VectorXd::Zero(rows));
        }
        return p;
    }

    /// Visits every parameter block as a flat array, weights before biases per layer.
    template <typename Fn>
    void for_each_block(Fn&& fn) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            fn(weights[i].data(), static_cast<std::size_t>(weights[i].size()));
            fn(biases[i].data(), static_cast<std::size_t>(biases[i].size()));
        }
    }

    bool all_finite() const {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (!weights[i].allFinite() || !biases[i].allFinite()) return false;
        }
        return true;
    }
};

using Gradients = MlpParams;

inline Architecture architecture_of(const MlpParams& params) {
    Architecture arch;
    arch.layer_sizes.clear();
    if (params.weights.empty()) return arch;
    arch.layer_sizes.push_back(static_cast<std::size_t>(params.weights.front().cols()));
    for (const auto& w : params.weights) arch.layer_sizes.push_back(static_cast<std::size_t>(w.rows()));
    return arch;
}

/// All weights and biases i.i.d. N(0, 1), drawn layer by layer, weights
/// row-major before biases.
inline MlpParams init_params(const Architecture& arch, std::uint64_t seed) {
    MlpParams p = MlpParams::zeros(arch);
    Rng rng(seed);
    for (std::size_t i = 0; i < p.num_transitions(); ++i) {
        auto& w = p.weights[i];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal();
        for (Eigen::Index r = 0; r < p.biases[i].size(); ++r) p.biases[i](r) = rng.normal();
    }
    return p;
}

/// Per-layer activations of a forward pass; layers[0] is the input batch.
struct Activations {
    std::vector<Eigen::MatrixXd> layers;

    std::size_t batch_size() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().cols()); }
    const Eigen::MatrixXd& output() const { return layers.back(); }
};

inline void forward_into(const MlpParams& params, const Eigen::MatrixXd& input, Activations& acts) {
    const std::size_t transitions = params.num_transitions();
    if (transitions == 0) throw ConfigError("forward: empty network");
    if (input.rows() != params.weights.front().cols()) {
        throw ConfigError("forward: input has " + std::to_string(input.rows()) + " features, network expects " +
                          std::to_string(params.weights.front().cols()));
    }
    acts.layers.resize(transitions + 1);
    acts.layers[0] = input;
    for (std::size_t i = 0; i < transitions; ++i) {
        auto& next = acts.layers[i + 1];
        next.noalias() = params.weights[i] * acts.layers[i];
        next.colwise() += params.biases[i];
        if (i + 1 < transitions) next = (1.0 + (-next.array()).exp()).inverse().matrix();
    }
}

inline Activations forward(const MlpParams& params, const Eigen::MatrixXd& input) {
    Activations acts;
    forward_into(params, input, acts);
    return acts;
}

/// Single-sample forward pass.
inline Activations forward(const MlpParams& params, std::span<const double> input) {
    const Eigen::Map<const Eigen::VectorXd> column(input.data(), static_cast<Eigen::Index>(input.size()));
    return forward(params, Eigen::MatrixXd(column));
}

/// Backpropagates dJ/da_L (one entry per sample in the batch) and sums the
/// parameter gradients over the batch. Callers fold any 1/N into dJ/da_L.
inline void backward_into(const MlpParams& params, const Activations& acts, const Eigen::RowVectorXd& dj_da_out,
                          Gradients& grads, std::vector<Eigen::MatrixXd>& deltas) {
    const std::size_t transitions = params.num_transitions();
    if (acts.layers.size() != transitions + 1 || acts.output().rows() != 1) {
        throw ConfigError("backward: activations do not match the network");
    }
    if (dj_da_out.size() != acts.output().cols()) {
        throw ConfigError("backward: dJ/da_L length does not match the batch");
    }
    if (grads.weights.size() != transitions) grads = MlpParams::zeros(architecture_of(params));
    deltas.resize(transitions + 1);

    // Linear output layer: sigma' = 1.
    deltas[transitions] = dj_da_out;
    for (std::size_t i = transitions; i-- > 0;) {
        grads.weights[i].noalias() = deltas[i + 1] * acts.layers[i].transpose();
        grads.biases[i] = deltas[i + 1].rowwise().sum();
        if (i > 0) {
            const auto& a = acts.layers[i].array();
            deltas[i].noalias() = params.weights[i].transpose() * deltas[i + 1];
            deltas[i].array() *= a * (1.0 - a);
        }
    }
}

inline Gradients backward(const MlpParams& params, const Activations& acts, const Eigen::RowVectorXd& dj_da_out) {
    Gradients grads;
    std::vector<Eigen::MatrixXd> deltas;
    backward_into(params, acts, dj_da_out, grads, deltas);
    return grads;
}

/// Single-sample overload.
inline Gradients backward(const MlpParams& params, const Activations& acts, double dj_da_out) {
    Eigen::RowVectorXd d(1);
    d(0) = dj_da_out;
    return backward(params, acts, d);
}

struct AdamState {
    MlpParams first_moment;
    MlpParams second_moment;
    std::uint64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_params(const MlpParams& params) {
        AdamState s;
        s.first_moment = params;
        s.second_moment = params;
        s.first_moment.for_each_block([](double* p, std::size_t n) { std::fill(p, p + n, 0.0); });
        s.second_moment.for_each_block([](double* p, std::size_t n) { std::fill(p, p + n, 0.0); });
        return s;
    }
};

/// One bias-corrected Adam update of every parameter.
inline void adam_step(AdamState& state, MlpParams& params, const Gradients& grads, double lr) {
    if (grads.weights.size() != params.weights.size() || state.first_moment.weights.size() != params.weights.size()) {
        throw ConfigError("adam_step: parameter, gradient and moment shapes differ");
    }
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double eps = state.epsilon;

    auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
        m.array() = b1 * m.array() + (1.0 - b1) * g.array();
        v.array() = b2 * v.array() + (1.0 - b2) * g.array().square();
        theta.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
    };
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
        update(params.weights[i], grads.weights[i], state.first_moment.weights[i], state.second_moment.weights[i]);
        update(params.biases[i], grads.biases[i], state.first_moment.biases[i], state.second_moment.biases[i]);
    }
}

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t batch_size = 512;
    std::size_t epochs = 300;
    std::uint64_t seed = 0;
    /// Seed of the train/holdout split; defaults to `seed` when unset.
    std::optional<std::uint64_t> split_seed;
    bool shuffle = true;
    double holdout_fraction = 0.2;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw ConfigError("TrainConfig: learning_rate must be finite and non-negative");
        }
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be at least 1");
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be at least 1");
        if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
            throw ConfigError("TrainConfig: holdout_fraction must lie in [0, 1)");
        }
    }
};

struct DataSplit {
    std::vector<std::size_t> train;    // in initial visiting order
    std::vector<std::size_t> holdout;  // ascending
};

/// Seeded shuffled split; with fraction 0 every sample is used for training
/// and the holdout set is empty.
inline DataSplit make_split(std::size_t n, double holdout_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto n_holdout = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(n)));
    if (n_holdout >= n) throw ConfigError("make_split: holdout leaves no training samples");
    DataSplit split;
    if (n_holdout == 0) {
        split.train = std::move(order);
        return split;
    }
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    split.holdout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_holdout));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_holdout), order.end());
    std::sort(split.holdout.begin(), split.holdout.end());
    std::sort(split.train.begin(), split.train.end());
    return split;
}

struct TrainedModel {
    Architecture arch;
    MlpParams params;
    /// [0] is the full-pass loss at initialization; entry e > 0 is the
    /// sample-weighted mean of the mini-batch losses seen during epoch e.
    std::vector<double> train_loss_history;
    /// Full-pass holdout loss at initialization and after every epoch (empty without holdout).
    std::vector<double> holdout_loss_history;
    /// Full-pass training loss of the final parameters.
    double train_loss_final = 0.0;
    DataSplit split;
};

/// Features as an (n_features x n_samples) matrix, one column per sample.
inline Eigen::MatrixXd to_column_major(const FeatureMatrix& features) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(features.cols), static_cast<Eigen::Index>(features.rows));
    for (std::size_t j = 0; j < features.rows; ++j)
        for (std::size_t k = 0; k < features.cols; ++k)
            x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = features(j, k);
    return x;
}

namespace detail {

inline constexpr Eigen::Index kPredictChunk = 4096;

inline std::vector<double> predict_columns(const MlpParams& params, const Eigen::MatrixXd& inputs,
                                           std::span<const std::size_t> indices) {
    std::vector<double> out(indices.size());
    Activations acts;
    Eigen::MatrixXd chunk;
    for (std::size_t start = 0; start < indices.size(); start += kPredictChunk) {
        const auto count = std::min<std::size_t>(kPredictChunk, indices.size() - start);
        chunk.resize(inputs.rows(), static_cast<Eigen::Index>(count));
        for (std::size_t c = 0; c < count; ++c)
            chunk.col(static_cast<Eigen::Index>(c)) = inputs.col(static_cast<Eigen::Index>(indices[start + c]));
        forward_into(params, chunk, acts);
        for (std::size_t c = 0; c < count; ++c) out[start + c] = acts.output()(0, static_cast<Eigen::Index>(c));
    }
    return out;
}

inline double subset_loss(const LossSpec& spec, const MlpParams& params, const Eigen::MatrixXd& inputs,
                          std::span<const double> labels, std::span<const double> weights,
                          std::span<const std::size_t> indices) {
    const auto preds = predict_columns(params, inputs, indices);
    std::vector<double> y(indices.size());
    std::vector<double> w;
    for (std::size_t i = 0; i < indices.size(); ++i) y[i] = labels[indices[i]];
    if (is_wes(spec)) {
        w.resize(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i) w[i] = weights[indices[i]];
    }
    return loss_value(spec, preds, y, w);
}

}  // namespace detail

/// Mini-batch Adam training. `weights` holds g(y) per sample and is required
/// for WES. Runs epochs x ceil(N_train / batch) steps, the last batch of an
/// epoch possibly partial.
inline TrainedModel train(const FeatureMatrix& features, std::span<const double> labels, const LossSpec& loss,
                          const TrainConfig& config, std::span<const double> weights = {},
                          const Architecture& arch = Architecture{}) {
    config.validate();
    arch.validate();
    if (features.rows != labels.size()) throw ConfigError("train: features and labels are not aligned");
    if (features.cols != arch.input_size()) {
        throw ConfigError("train: feature width " + std::to_string(features.cols) + " does not match input layer " +
                          std::to_string(arch.input_size()));
    }
    if (is_wes(loss) && weights.size() != labels.size()) throw ConfigError("train: WES needs per-sample weights");

    TrainedModel model;
    model.arch = arch;
    model.params = init_params(arch, config.seed);
    model.split = make_split(labels.size(), config.holdout_fraction, config.split_seed.value_or(config.seed));

    const Eigen::MatrixXd inputs = to_column_major(features);
    const bool weighted = is_wes(loss);
    const auto& train_idx = model.split.train;
    const auto& holdout_idx = model.split.holdout;

    model.train_loss_history.push_back(
        detail::subset_loss(loss, model.params, inputs, labels, weights, train_idx));
    if (!holdout_idx.empty()) {
        model.holdout_loss_history.push_back(
            detail::subset_loss(loss, model.params, inputs, labels, weights, holdout_idx));
    }

    AdamState adam = AdamState::for_params(model.params);
    Rng shuffle_rng(combine_seed(config.seed, fnv1a64("shuffle")));
    std::vector<std::size_t> order = train_idx;

    Activations acts;
    Gradients grads = MlpParams::zeros(arch);
    std::vector<Eigen::MatrixXd> deltas;
    Eigen::MatrixXd batch;
    Eigen::RowVectorXd dj_da;

    const std::size_t n_train = order.size();
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.shuffle) shuffle_rng.shuffle(order.begin(), order.end());
        double epoch_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < n_train; start += config.batch_size, ++batch_no) {
            const std::size_t count = std::min(config.batch_size, n_train - start);
            const auto cols = static_cast<Eigen::Index>(count);
            batch.resize(inputs.rows(), cols);
            for (std::size_t c = 0; c < count; ++c)
                batch.col(static_cast<Eigen::Index>(c)) = inputs.col(static_cast<Eigen::Index>(order[start + c]));

            forward_into(model.params, batch, acts);

            const double inv_n = 1.0 / static_cast<double>(count);
            dj_da.resize(cols);
            double batch_loss = 0.0;
            for (std::size_t c = 0; c < count; ++c) {
                const std::size_t s = order[start + c];
                const double pred = acts.output()(0, static_cast<Eigen::Index>(c));
                const double w = weighted ? weights[s] : 1.0;
                batch_loss += element_loss(loss, pred, labels[s], w);
                dj_da(static_cast<Eigen::Index>(c)) = loss_grad(loss, pred, labels[s], w) * inv_n;
            }
            if (!std::isfinite(batch_loss)) {
                std::ostringstream msg;
                msg << "train: non-finite loss " << batch_loss * inv_n << " at epoch " << epoch << ", batch "
                    << batch_no;
                throw NumericError(msg.str());
            }
            epoch_sum += batch_loss;

            backward_into(model.params, acts, dj_da, grads, deltas);
            adam_step(adam, model.params, grads, config.learning_rate);
        }
        model.train_loss_history.push_back(epoch_sum / static_cast<double>(n_train));
        if (!holdout_idx.empty()) {
            const double h = detail::subset_loss(loss, model.params, inputs, labels, weights, holdout_idx);
            if (!std::isfinite(h)) {
                throw NumericError("train: non-finite holdout loss at epoch " + std::to_string(epoch));
            }
            model.holdout_loss_history.push_back(h);
        }
    }
    model.train_loss_final = detail::subset_loss(loss, model.params, inputs, labels, weights, train_idx);
    return model;
}

/// Convenience overload on a label curve; WES weights are built from the
/// curve with the default histogram and polynomial degree.
inline TrainedModel train(const FeatureMatrix& features, const LabelCurve& labels, const LossSpec& loss,
                          const TrainConfig& config, const Architecture& arch = Architecture{}) {
    std::vector<double> weights;
    if (const auto beta = wes_beta(loss)) weights = make_weighting_curve(labels.values, *beta).weights_at(labels.values);
    return train(features, labels.values, loss, config, weights, arch);
}

inline std::vector<double> predict(const MlpParams& params, const FeatureMatrix& features) {
    if (params.weights.empty()) throw ConfigError("predict: empty network");
    if (static_cast<Eigen::Index>(features.cols) != params.weights.front().cols()) {
        throw ConfigError("predict: feature width does not match the input layer");
    }
    std::vector<std::size_t> all(features.rows);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return detail::predict_columns(params, to_column_major(features), all);
}

inline std::vector<double> predict(const TrainedModel& model, const FeatureMatrix& features) {
    return predict(model.params, features);
}

// Text model format:
//   wes-mlp 1
//   layers <n_1> ... <n_L>
//   then per transition: n_{i+1} lines of W_i rows, one line of b_i.
inline void save_model(std::ostream& out, const Architecture& arch, const MlpParams& params) {
    out << "wes-mlp 1\nlayers";
    for (auto n : arch.layer_sizes) out << ' ' << n;
    out << '\n';
    out.precision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < params.num_transitions(); ++i) {
        const auto& w = params.weights[i];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) out << (c ? " " : "") << w(r, c);
            out << '\n';
        }
        for (Eigen::Index r = 0; r < params.biases[i].size(); ++r) out << (r ? " " : "") << params.biases[i](r);
        out << '\n';
    }
    if (!out) throw NumericError("save_model: write failed");
}

inline std::pair<Architecture, MlpParams> load_model(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "wes-mlp" || version != 1) {
        throw ConfigError("load_model: not a wes-mlp v1 model");
    }
    std::string line;
    std::getline(in, line);
    if (!std::getline(in, line)) throw ConfigError("load_model: missing layer line");
    std::istringstream header(line);
    std::string tag;
    header >> tag;
    if (tag != "layers") throw ConfigError("load_model: missing layer line");
    Architecture arch;
    arch.layer_sizes.clear();
    for (std::size_t n; header >> n;) arch.layer_sizes.push_back(n);
    arch.validate();
    MlpParams params = MlpParams::zeros(arch);
    for (std::size_t i = 0; i < params.num_transitions(); ++i) {
        auto& w = params.weights[i];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                if (!(in >> w(r, c))) throw ConfigError("load_model: truncated weights");
        for (Eigen::Index r = 0; r < params.biases[i].size(); ++r)
            if (!(in >> params.biases[i](r))) throw ConfigError("load_model: truncated biases");
    }
    return {arch, params};
}

}  // namespace wes
