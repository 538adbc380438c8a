#pragma once

// Experiment grid: distributions x noise levels x losses (WES expanded over
// beta) x ensemble members. Every run is a pure function of the config and
// its key, so results do not depend on scheduling or worker count.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <type_traits>
#include <vector>

#include "wes/curvegen.hpp"
#include "wes/error.hpp"
#include "wes/io.hpp"
#include "wes/losses.hpp"
#include "wes/metrics.hpp"
#include "wes/network.hpp"
#include "wes/rng.hpp"
#include "wes/signals.hpp"
#include "wes/weighting.hpp"

#ifndef WES_VERSION
#define WES_VERSION "0.0.0"
#endif

namespace wes {

inline constexpr std::string_view kToolName = "wes-bench";
inline constexpr std::string_view kToolVersion = WES_VERSION;
inline constexpr const char* kWorkersEnv = "WES_WORKERS";

inline const std::vector<double> kDefaultSigmas = {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
inline const std::vector<double> kDefaultBetas = {1.5, 2, 2.5, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 25, 30};
inline const std::vector<std::string> kBenchmarkLosses = {"mse",     "mae",           "huber:0.5",    "huber:5",
                                                          "huber:10", "logcosh", "quantile:0.25", "quantile:0.75"};

struct ExperimentConfig {
    std::vector<DistributionKind> distributions{kAllDistributions.begin(), kAllDistributions.end()};
    std::vector<double> sigmas = kDefaultSigmas;
    std::vector<double> betas = kDefaultBetas;
    /// Loss ids; a bare "wes" expands over `betas`, "wes:<beta>" pins one value.
    std::vector<std::string> losses = [] {
        auto l = kBenchmarkLosses;
        l.emplace_back("wes");
        return l;
    }();
    std::size_t ensemble_size = 10;
    std::uint64_t master_seed = 20200903;
    bool fresh_noise_per_member = true;
    std::filesystem::path output_dir = "wes-out";

    // data pipeline
    std::size_t basis_points = kDefaultBasisPoints;
    std::size_t pair_repeats = kDefaultPairRepeats;
    double domain_length = kDefaultDomainLength;
    std::size_t harmonic_order = kDefaultHarmonicOrder;
    std::size_t feature_count = kDefaultFeatureCount;
    std::size_t pdf_bins = kDefaultPdfBins;
    std::size_t poly_degree = kDefaultPolyDegree;
    std::size_t overlap_bins = kDefaultOverlapBins;
    double tail_prob = kExtremeTailProbability;

    TrainConfig train;
    Architecture arch;

    void validate() const {
        if (distributions.empty()) throw ConfigError("config: no distributions");
        if (sigmas.empty()) throw ConfigError("config: no noise levels");
        for (double s : sigmas) {
            if (!(s >= 0.0)) throw ConfigError("config: sigmas must be >= 0");
        }
        for (double b : betas) {
            if (!(b >= 1.0)) throw ConfigError("config: betas must be >= 1 (the lower weight bound c)");
        }
        if (losses.empty()) throw ConfigError("config: no losses");
        for (const auto& id : losses) {
            if (id != "wes") parse_loss(id);
        }
        if (std::find(losses.begin(), losses.end(), "wes") != losses.end() && betas.empty()) {
            throw ConfigError("config: loss 'wes' requested with an empty beta list");
        }
        if (ensemble_size < 1) throw ConfigError("config: ensemble_size must be >= 1");
        if (feature_count != arch.input_size()) {
            throw ConfigError("config: feature_count must equal the input layer width");
        }
        if (!(tail_prob > 0.0 && tail_prob < 0.5)) throw ConfigError("config: tail_prob must lie in (0, 0.5)");
        train.validate();
        arch.validate();
    }

    /// Restores the 100-member ensembles used for the full-size study.
    void apply_full_scale() { ensemble_size = 100; }
};

// ---------------------------------------------------------------------------
// Config file (INI: key = value with [sections])

namespace detail {

template <typename T>
std::string join_values(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        if constexpr (std::is_same_v<T, double>) out += io::format_full(values[i]);
        else if constexpr (std::is_same_v<T, std::string>) out += values[i];
        else out += std::to_string(values[i]);
    }
    return out;
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    for (auto& field : io::split(text, ',')) {
        auto t = io::trim(field);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<double> parse_double_list(const std::string& text, std::string_view what) {
    std::vector<double> out;
    for (const auto& f : split_list(text)) out.push_back(parse_number(f, what));
    return out;
}

inline std::size_t parse_count(const std::string& text, std::string_view what) {
    const double v = parse_number(io::trim(text), what);
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) {
        throw ConfigError("config: " + std::string(what) + " must be a non-negative integer");
    }
    return static_cast<std::size_t>(v);
}

inline std::uint64_t parse_u64(const std::string& text, std::string_view what) {
    const auto t = io::trim(text);
    std::uint64_t v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc{} || res.ptr != t.data() + t.size()) {
        throw ConfigError("config: cannot parse " + std::string(what) + " from '" + t + "'");
    }
    return v;
}

inline bool parse_bool(const std::string& text, std::string_view what) {
    const auto t = io::trim(text);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw ConfigError("config: " + std::string(what) + " must be true or false");
}

}  // namespace detail

/// Canonical INI text of the effective configuration.
inline std::string config_to_ini(const ExperimentConfig& c) {
    std::ostringstream out;
    out << "[experiment]\n";
    out << "distributions = " << [&] {
        std::string s;
        for (std::size_t i = 0; i < c.distributions.size(); ++i) {
            if (i) s += ", ";
            s += to_string(c.distributions[i]);
        }
        return s;
    }() << '\n';
    out << "sigmas = " << detail::join_values(c.sigmas) << '\n';
    out << "betas = " << detail::join_values(c.betas) << '\n';
    out << "losses = " << detail::join_values(c.losses) << '\n';
    out << "ensemble_size = " << c.ensemble_size << '\n';
    out << "master_seed = " << c.master_seed << '\n';
    out << "fresh_noise_per_member = " << (c.fresh_noise_per_member ? "true" : "false") << '\n';
    out << "output_dir = " << c.output_dir.string() << '\n';
    out << "\n[data]\n";
    out << "basis_points = " << c.basis_points << '\n';
    out << "pair_repeats = " << c.pair_repeats << '\n';
    out << "domain_length = " << io::format_full(c.domain_length) << '\n';
    out << "harmonic_order = " << c.harmonic_order << '\n';
    out << "feature_count = " << c.feature_count << '\n';
    out << "pdf_bins = " << c.pdf_bins << '\n';
    out << "poly_degree = " << c.poly_degree << '\n';
    out << "overlap_bins = " << c.overlap_bins << '\n';
    out << "tail_prob = " << io::format_full(c.tail_prob) << '\n';
    out << "\n[train]\n";
    out << "layers = " << detail::join_values(c.arch.layer_sizes) << '\n';
    out << "learning_rate = " << io::format_full(c.train.learning_rate) << '\n';
    out << "batch_size = " << c.train.batch_size << '\n';
    out << "epochs = " << c.train.epochs << '\n';
    out << "shuffle = " << (c.train.shuffle ? "true" : "false") << '\n';
    out << "holdout_fraction = " << io::format_full(c.train.holdout_fraction) << '\n';
    return out.str();
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(config_to_ini(c)); }

inline std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

/// Reads an INI config; every key is optional and unknown keys are rejected.
inline ExperimentConfig parse_config(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw ConfigError("config: key '" + section + "' must live inside a [section]");
        }
        for (const auto& [key, node] : body) {
            const std::string v = node.data();
            const std::string where = section + "." + key;
            if (section == "experiment") {
                if (key == "distributions") {
                    c.distributions.clear();
                    for (const auto& d : detail::split_list(v)) c.distributions.push_back(parse_distribution(d));
                } else if (key == "sigmas") c.sigmas = detail::parse_double_list(v, where);
                else if (key == "betas") c.betas = detail::parse_double_list(v, where);
                else if (key == "losses") c.losses = detail::split_list(v);
                else if (key == "ensemble_size") c.ensemble_size = detail::parse_count(v, where);
                else if (key == "master_seed") c.master_seed = detail::parse_u64(v, where);
                else if (key == "fresh_noise_per_member") c.fresh_noise_per_member = detail::parse_bool(v, where);
                else if (key == "output_dir") c.output_dir = io::trim(v);
                else throw ConfigError("config: unknown key " + where);
            } else if (section == "data") {
                if (key == "basis_points") c.basis_points = detail::parse_count(v, where);
                else if (key == "pair_repeats") c.pair_repeats = detail::parse_count(v, where);
                else if (key == "domain_length") c.domain_length = parse_number(io::trim(v), where);
                else if (key == "harmonic_order") c.harmonic_order = detail::parse_count(v, where);
                else if (key == "feature_count") c.feature_count = detail::parse_count(v, where);
                else if (key == "pdf_bins") c.pdf_bins = detail::parse_count(v, where);
                else if (key == "poly_degree") c.poly_degree = detail::parse_count(v, where);
                else if (key == "overlap_bins") c.overlap_bins = detail::parse_count(v, where);
                else if (key == "tail_prob") c.tail_prob = parse_number(io::trim(v), where);
                else throw ConfigError("config: unknown key " + where);
            } else if (section == "train") {
                if (key == "layers") {
                    c.arch.layer_sizes.clear();
                    for (const auto& f : detail::split_list(v)) c.arch.layer_sizes.push_back(detail::parse_count(f, where));
                } else if (key == "learning_rate") c.train.learning_rate = parse_number(io::trim(v), where);
                else if (key == "batch_size") c.train.batch_size = detail::parse_count(v, where);
                else if (key == "epochs") c.train.epochs = detail::parse_count(v, where);
                else if (key == "shuffle") c.train.shuffle = detail::parse_bool(v, where);
                else if (key == "holdout_fraction") c.train.holdout_fraction = parse_number(io::trim(v), where);
                else throw ConfigError("config: unknown key " + where);
            } else {
                throw ConfigError("config: unknown section [" + section + "]");
            }
        }
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    return parse_config(in);
}

// ---------------------------------------------------------------------------
// Grid keys and seeds

struct RunKey {
    DistributionKind distribution = DistributionKind::Unimodal;
    double sigma = 0.0;
    std::string loss;             // "mse", "huber:0.5", ..., "wes"
    std::optional<double> beta;   // set for WES only
    std::size_t member = 0;

    LossSpec spec() const { return beta ? LossSpec{loss::Wes{*beta}} : parse_loss(loss); }

    std::string canonical() const {
        return std::string(to_string(distribution)) + "|" + io::format_full(sigma) + "|" + loss + "|" +
               (beta ? io::format_full(*beta) : std::string("-")) + "|" + std::to_string(member);
    }

    /// Identifies the (distribution, sigma, loss, beta) cell, ignoring the member.
    std::string cell() const {
        return std::string(to_string(distribution)) + "|" + io::format_full(sigma) + "|" + loss + "|" +
               (beta ? io::format_full(*beta) : std::string("-"));
    }
};

inline std::uint64_t member_seed(std::uint64_t master_seed, const RunKey& key) {
    return combine_seed(master_seed, fnv1a64(key.canonical()));
}

inline std::uint64_t noise_seed(const ExperimentConfig& config, std::size_t member) {
    return config.fresh_noise_per_member ? combine_seed(config.master_seed, member) : config.master_seed;
}

inline std::uint64_t split_seed(std::uint64_t master_seed) { return combine_seed(master_seed, fnv1a64("split")); }

/// Every run of the grid in canonical order.
inline std::vector<RunKey> enumerate_runs(const ExperimentConfig& config) {
    std::vector<RunKey> keys;
    for (auto dist : config.distributions) {
        for (double sigma : config.sigmas) {
            for (const auto& id : config.losses) {
                std::vector<std::optional<double>> betas;
                std::string name = id;
                if (id == "wes") {
                    for (double b : config.betas) betas.emplace_back(b);
                } else if (const auto beta = wes_beta(parse_loss(id))) {
                    name = "wes";
                    betas.emplace_back(*beta);
                } else {
                    betas.emplace_back(std::nullopt);
                }
                for (const auto& beta : betas) {
                    for (std::size_t m = 0; m < config.ensemble_size; ++m) {
                        keys.push_back(RunKey{dist, sigma, name, beta, m});
                    }
                }
            }
        }
    }
    return keys;
}

/// Throws if two runs would share a member seed.
inline void check_seed_uniqueness(const ExperimentConfig& config, std::span<const RunKey> keys) {
    std::vector<std::uint64_t> seeds;
    seeds.reserve(keys.size());
    for (const auto& k : keys) seeds.push_back(member_seed(config.master_seed, k));
    std::sort(seeds.begin(), seeds.end());
    if (std::adjacent_find(seeds.begin(), seeds.end()) != seeds.end()) {
        throw ConfigError("member seed collision in the experiment grid; choose another master_seed");
    }
}

// ---------------------------------------------------------------------------
// Per-distribution data, built once and shared read-only by all runs

struct Dataset {
    LabelCurve label;
    CosineSpectrum spectrum;
    HarmonicSet harmonics;
    FeatureMatrix clean_features;
    double l1 = 0.0;
    double l2 = 1.0;
    std::map<double, WeightingCurve> curves;        // by beta
    std::map<double, std::vector<double>> weights;  // g(y_j) per sample, by beta
    PdfEstimate pdf;
    PolynomialFit pdf_fit;
};

inline Dataset prepare_dataset(DistributionKind kind, const ExperimentConfig& config,
                               std::span<const double> betas) {
    Dataset d;
    d.label = build_label_curve(generate_basis(kind, config.basis_points), config.pair_repeats, config.domain_length);
    d.spectrum = cosine_coefficients(d.label, config.harmonic_order);
    d.harmonics = select_harmonics(d.spectrum, config.feature_count);
    d.clean_features = synthesize_features(d.harmonics, d.label.time_grid(), d.label.domain_length);
    std::tie(d.l1, d.l2) = extreme_thresholds(d.label.values, config.tail_prob);
    d.pdf = empirical_pdf(d.label.values, config.pdf_bins);
    d.pdf_fit = fit_pdf_polynomial(d.pdf, config.poly_degree);
    for (double beta : betas) {
        if (d.curves.count(beta)) continue;
        WeightingCurve curve = make_weighting_curve(d.label.values, beta, config.pdf_bins, config.poly_degree);
        d.weights.emplace(beta, curve.weights_at(d.label.values));
        d.curves.emplace(beta, std::move(curve));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Results

inline constexpr std::size_t kPlotHistogramBins = 100;
inline constexpr double kPlotHistogramLo = -0.25;
inline constexpr double kPlotHistogramHi = 1.25;
inline constexpr std::size_t kScatterPoints = 200;

struct ExperimentResult {
    RunKey key;
    std::uint64_t seed = 0;
    std::uint64_t noise_seed = 0;
    MetricReport metrics;
    double train_loss_final = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
    std::string status = "ok";

    bool ok() const { return status == "ok"; }
};

/// Per-run plot material: prediction histogram on a fixed range and a
/// decimated prediction sample at fixed evaluation positions.
struct RunPlotData {
    std::vector<std::uint32_t> histogram;
    std::vector<double> scatter_predictions;
};

struct ResultSet {
    std::vector<ExperimentResult> rows;
    std::vector<RunPlotData> plots;  // parallel to rows; may be empty when loaded from disk
};

inline void write_header_comment(std::ostream& out, const ExperimentConfig& config) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    out << "# " << kToolName << ' ' << kToolVersion << " config_hash=" << hex64(config_hash(config))
        << " rng=" << kRngAlgorithm << '\n';
    out << "# generated: " << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << '\n';
}

inline constexpr std::string_view kResultsHeader =
    "distribution,sigma,loss,beta,member,seed,rmse,cc,overlap,extreme_rmse,p1_tail_mean,p99_tail_mean,"
    "train_loss_final,wall_seconds,status";

inline void write_results_csv(std::ostream& out, const ExperimentConfig& config, std::span<const ExperimentResult> rows) {
    write_header_comment(out, config);
    out << kResultsHeader << '\n';
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out << to_string(r.key.distribution) << ',' << io::format_full(r.key.sigma) << ',' << r.key.loss << ','
            << (r.key.beta ? io::format_full(*r.key.beta) : "") << ',' << r.key.member << ',' << r.seed << ','
            << io::format_full(m.rmse) << ',' << io::format_full(m.cc) << ',' << io::format_full(m.overlap) << ','
            << io::format_full(m.extreme_rmse) << ',' << io::format_full(m.p1_tail_mean) << ','
            << io::format_full(m.p99_tail_mean) << ',' << io::format_full(r.train_loss_final) << ','
            << io::format_full(r.wall_seconds) << ',' << r.status << '\n';
    }
}

inline std::vector<ExperimentResult> read_results_csv(std::istream& in) {
    std::vector<ExperimentResult> rows;
    std::string line;
    bool header_seen = false;
    std::size_t line_no = 0;
    auto num = [&](const std::string& s) {
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        return parse_number(s, "results.csv field");
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (!header_seen) {
            if (line != kResultsHeader) throw ConfigError("results.csv: unexpected header");
            header_seen = true;
            continue;
        }
        const auto f = io::split(line, ',');
        if (f.size() != 15) throw ConfigError("results.csv: line " + std::to_string(line_no) + " has wrong field count");
        ExperimentResult r;
        r.key.distribution = parse_distribution(f[0]);
        r.key.sigma = num(f[1]);
        r.key.loss = f[2];
        if (!f[3].empty()) r.key.beta = num(f[3]);
        r.key.member = detail::parse_count(f[4], "member");
        r.seed = detail::parse_u64(f[5], "seed");
        r.metrics.rmse = num(f[6]);
        r.metrics.cc = num(f[7]);
        r.metrics.overlap = num(f[8]);
        r.metrics.extreme_rmse = num(f[9]);
        r.metrics.p1_tail_mean = num(f[10]);
        r.metrics.p99_tail_mean = num(f[11]);
        r.train_loss_final = num(f[12]);
        r.wall_seconds = num(f[13]);
        r.status = f[14];
        rows.push_back(std::move(r));
    }
    if (!header_seen) throw ConfigError("results.csv: missing header");
    return rows;
}

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
    std::size_t workers = 1;
    /// Called after each completed run (serialized); may be empty.
    std::function<void(std::size_t done, std::size_t total, const ExperimentResult&)> progress;
};

inline std::size_t default_worker_count() {
    if (const char* env = std::getenv(kWorkersEnv)) {
        try {
            const auto n = detail::parse_count(env, kWorkersEnv);
            if (n > 0) return n;
        } catch (const ConfigError&) {
        }
        throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer");
    }
    return 1;
}

/// Everything one member run produces; the sweep keeps only metrics and plot data.
struct MemberRun {
    FeatureMatrix features;
    TrainedModel model;
    std::vector<std::size_t> eval_indices;  // holdout, or every sample without one
    std::vector<double> eval_predictions;
    std::vector<double> eval_labels;
};

inline MemberRun train_member(const ExperimentConfig& config, const Dataset& data, const RunKey& key) {
    MemberRun run;
    run.features = add_noise(data.clean_features, key.sigma, noise_seed(config, key.member));
    std::span<const double> weights;
    if (key.beta) weights = data.weights.at(*key.beta);

    TrainConfig tc = config.train;
    tc.seed = member_seed(config.master_seed, key);
    tc.split_seed = split_seed(config.master_seed);
    run.model = train(run.features, data.label.values, key.spec(), tc, weights, config.arch);

    run.eval_indices = run.model.split.holdout;
    if (run.eval_indices.empty()) {
        run.eval_indices.resize(data.label.size());
        std::iota(run.eval_indices.begin(), run.eval_indices.end(), std::size_t{0});
    }
    run.eval_predictions = detail::predict_columns(run.model.params, to_column_major(run.features), run.eval_indices);
    run.eval_labels.resize(run.eval_indices.size());
    for (std::size_t i = 0; i < run.eval_indices.size(); ++i) run.eval_labels[i] = data.label.values[run.eval_indices[i]];
    return run;
}

/// Runs one grid cell member against a prepared dataset.
inline std::pair<ExperimentResult, RunPlotData> run_single(const ExperimentConfig& config, const Dataset& data,
                                                          const RunKey& key) {
    ExperimentResult result;
    result.key = key;
    result.seed = member_seed(config.master_seed, key);
    result.noise_seed = noise_seed(config, key.member);
    RunPlotData plot;

    const auto start = std::chrono::steady_clock::now();
    try {
        const MemberRun run = train_member(config, data, key);
        result.train_loss_final = run.model.train_loss_final;
        const auto& preds = run.eval_predictions;
        const auto& labels = run.eval_labels;
        result.metrics = evaluate(preds, labels, data.l1, data.l2, config.overlap_bins);
        for (double v : {result.metrics.rmse, result.metrics.cc, result.metrics.overlap,
                         result.metrics.extreme_rmse, result.metrics.p1_tail_mean, result.metrics.p99_tail_mean}) {
            if (!std::isfinite(v)) throw NumericError("non-finite metric");
        }

        plot.histogram.assign(kPlotHistogramBins, 0);
        const double width = (kPlotHistogramHi - kPlotHistogramLo) / static_cast<double>(kPlotHistogramBins);
        for (double p : preds) {
            const double pos = std::floor((p - kPlotHistogramLo) / width);
            const auto bin = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(kPlotHistogramBins - 1)));
            ++plot.histogram[bin];
        }
        const std::size_t stride = std::max<std::size_t>(1, preds.size() / kScatterPoints);
        for (std::size_t i = 0; i < preds.size() && plot.scatter_predictions.size() < kScatterPoints; i += stride) {
            plot.scatter_predictions.push_back(preds[i]);
        }
    } catch (const NumericError&) {
        result.status = "nonfinite";
        result.metrics.rmse = result.metrics.cc = result.metrics.overlap = result.metrics.extreme_rmse =
            result.metrics.p1_tail_mean = result.metrics.p99_tail_mean = std::numeric_limits<double>::quiet_NaN();
    } catch (const DomainError&) {
        // Constant predictions leave the correlation undefined.
        result.status = "degenerate";
        result.metrics.rmse = result.metrics.cc = result.metrics.overlap = result.metrics.extreme_rmse =
            result.metrics.p1_tail_mean = result.metrics.p99_tail_mean = std::numeric_limits<double>::quiet_NaN();
    }
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(result), std::move(plot)};
}

/// Prepares one dataset per distribution (with WES weights for every beta in the grid).
inline std::map<DistributionKind, Dataset> prepare_datasets(const ExperimentConfig& config,
                                                           std::span<const RunKey> keys) {
    std::set<double> betas;
    for (const auto& k : keys) {
        if (k.beta) betas.insert(*k.beta);
    }
    const std::vector<double> beta_list(betas.begin(), betas.end());
    std::map<DistributionKind, Dataset> data;
    for (auto kind : config.distributions) {
        if (!data.count(kind)) data.emplace(kind, prepare_dataset(kind, config, beta_list));
    }
    return data;
}

/// Executes the whole grid. Output order is the canonical key order regardless
/// of worker count.
inline ResultSet run_experiment(const ExperimentConfig& config, const RunOptions& options = {}) {
    config.validate();
    const auto keys = enumerate_runs(config);
    check_seed_uniqueness(config, keys);
    const auto data = prepare_datasets(config, keys);

    ResultSet set;
    set.rows.resize(keys.size());
    set.plots.resize(keys.size());

    std::atomic<std::size_t> next{0};
    std::mutex sink;
    std::size_t done = 0;
    std::exception_ptr failure;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= keys.size()) return;
            try {
                auto [row, plot] = run_single(config, data.at(keys[i].distribution), keys[i]);
                std::lock_guard lock(sink);
                set.rows[i] = std::move(row);
                set.plots[i] = std::move(plot);
                ++done;
                if (options.progress) options.progress(done, keys.size(), set.rows[i]);
            } catch (...) {
                std::lock_guard lock(sink);
                if (!failure) failure = std::current_exception();
                next.store(keys.size());
                return;
            }
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, keys.size()));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    return set;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Metric { Rmse, Cc, Overlap, ExtremeRmse, P1TailMean, P99TailMean };

inline constexpr std::array<Metric, 6> kAllMetrics = {Metric::Rmse,        Metric::Cc,         Metric::Overlap,
                                                      Metric::ExtremeRmse, Metric::P1TailMean, Metric::P99TailMean};

inline std::string_view metric_name(Metric m) {
    switch (m) {
        case Metric::Rmse: return "rmse";
        case Metric::Cc: return "cc";
        case Metric::Overlap: return "overlap";
        case Metric::ExtremeRmse: return "extreme_rmse";
        case Metric::P1TailMean: return "p1_tail_mean";
        case Metric::P99TailMean: return "p99_tail_mean";
    }
    return "?";
}

/// Larger is better for cc, overlap and the right-tail mean.
inline bool higher_is_better(Metric m) {
    return m == Metric::Cc || m == Metric::Overlap || m == Metric::P99TailMean;
}

inline double metric_value(const MetricReport& r, Metric m) {
    switch (m) {
        case Metric::Rmse: return r.rmse;
        case Metric::Cc: return r.cc;
        case Metric::Overlap: return r.overlap;
        case Metric::ExtremeRmse: return r.extreme_rmse;
        case Metric::P1TailMean: return r.p1_tail_mean;
        case Metric::P99TailMean: return r.p99_tail_mean;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

struct MetricStats {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    double best = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> best_beta;  // WES group rows only
};

struct SummaryRow {
    DistributionKind distribution = DistributionKind::Unimodal;
    double sigma = 0.0;
    std::string loss;
    /// Set for a single WES cell; empty with loss == "wes" for the group over all betas.
    std::optional<double> beta;
    bool beta_group = false;
    std::size_t members = 0;
    std::size_t failed = 0;
    std::array<MetricStats, kAllMetrics.size()> stats;

    const MetricStats& at(Metric m) const { return stats[static_cast<std::size_t>(m)]; }
};

inline double mean_of(std::span<const double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation; 0 for a single value.
inline double sd_of(std::span<const double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double best_of(std::span<const double> v, Metric m) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return higher_is_better(m) ? *std::max_element(v.begin(), v.end()) : *std::min_element(v.begin(), v.end());
}

/// Member statistics per (distribution, sigma, loss, beta) cell, then one
/// group row per (distribution, sigma) for WES over beta: mean and sd of the
/// per-beta means, best per-beta mean, and the beta attaining it.
inline std::vector<SummaryRow> aggregate(std::span<const ExperimentResult> results) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const ExperimentResult*>> cells;
    for (const auto& r : results) {
        const auto cell = r.key.cell();
        auto [it, inserted] = cells.try_emplace(cell);
        if (inserted) order.push_back(cell);
        it->second.push_back(&r);
    }

    std::vector<SummaryRow> rows;
    std::vector<std::string> group_order;
    std::map<std::string, std::vector<std::size_t>> groups;  // wes cell rows per (dist, sigma)
    for (const auto& cell : order) {
        const auto& members = cells.at(cell);
        const auto& key = members.front()->key;
        SummaryRow row;
        row.distribution = key.distribution;
        row.sigma = key.sigma;
        row.loss = key.loss;
        row.beta = key.beta;
        for (const auto* r : members) {
            if (r->ok()) ++row.members;
            else ++row.failed;
        }
        for (auto m : kAllMetrics) {
            std::vector<double> values;
            for (const auto* r : members) {
                if (r->ok()) values.push_back(metric_value(r->metrics, m));
            }
            auto& s = row.stats[static_cast<std::size_t>(m)];
            s.mean = mean_of(values);
            s.sd = sd_of(values);
            s.best = best_of(values, m);
        }
        if (key.beta) {
            const std::string g = std::string(to_string(key.distribution)) + "|" + io::format_full(key.sigma);
            auto [it, inserted] = groups.try_emplace(g);
            if (inserted) group_order.push_back(g);
            it->second.push_back(rows.size());
        }
        rows.push_back(std::move(row));
    }

    for (const auto& g : group_order) {
        const auto& idx = groups.at(g);
        const auto& first = rows[idx.front()];
        SummaryRow group;
        group.distribution = first.distribution;
        group.sigma = first.sigma;
        group.loss = "wes";
        group.beta_group = true;
        for (auto i : idx) {
            group.members += rows[i].members;
            group.failed += rows[i].failed;
        }
        for (auto m : kAllMetrics) {
            std::vector<double> means;
            std::optional<double> arg;
            double best = std::numeric_limits<double>::quiet_NaN();
            for (auto i : idx) {
                const double v = rows[i].at(m).mean;
                if (std::isnan(v)) continue;
                means.push_back(v);
                const bool better = std::isnan(best) || (higher_is_better(m) ? v > best : v < best);
                if (better) {
                    best = v;
                    arg = rows[i].beta;
                }
            }
            auto& s = group.stats[static_cast<std::size_t>(m)];
            s.mean = mean_of(means);
            s.sd = sd_of(means);
            s.best = best;
            s.best_beta = arg;
        }
        rows.push_back(std::move(group));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Reports

inline void write_summary_csv(std::ostream& out, const ExperimentConfig& config, std::span<const SummaryRow> rows) {
    write_header_comment(out, config);
    out << "distribution,sigma,loss,beta,members,failed";
    for (auto m : kAllMetrics) {
        const auto n = metric_name(m);
        out << ',' << n << "_mean," << n << "_sd," << n << "_best," << n << "_best_beta";
    }
    out << '\n';
    for (const auto& r : rows) {
        out << to_string(r.distribution) << ',' << io::format_full(r.sigma) << ',' << r.loss << ','
            << (r.beta_group ? "all" : (r.beta ? io::format_full(*r.beta) : "")) << ',' << r.members << ','
            << r.failed;
        for (auto m : kAllMetrics) {
            const auto& s = r.at(m);
            out << ',' << io::format_full(s.mean) << ',' << io::format_full(s.sd) << ',' << io::format_full(s.best)
                << ',' << (s.best_beta ? io::format_full(*s.best_beta) : "");
        }
        out << '\n';
    }
}

/// Tail-mean comparison laid out per (tail, sigma, distribution): WES mean
/// and sd over betas, best beta mean, and best/worst benchmark loss.
inline void write_table2_csv(std::ostream& out, const ExperimentConfig& config, std::span<const SummaryRow> rows) {
    write_header_comment(out, config);
    out << "tail,sigma,distribution,wes_mean,wes_std,wes_best,wes_best_beta,others_best,others_best_loss,"
           "others_worst,others_worst_loss\n";
    for (auto metric : {Metric::P1TailMean, Metric::P99TailMean}) {
        const bool higher = higher_is_better(metric);
        for (double sigma : config.sigmas) {
            for (auto dist : config.distributions) {
                const SummaryRow* group = nullptr;
                const SummaryRow* best = nullptr;
                const SummaryRow* worst = nullptr;
                for (const auto& r : rows) {
                    if (r.distribution != dist || r.sigma != sigma) continue;
                    if (r.beta_group) {
                        group = &r;
                        continue;
                    }
                    if (r.beta) continue;
                    const double v = r.at(metric).mean;
                    if (std::isnan(v)) continue;
                    if (!best || (higher ? v > best->at(metric).mean : v < best->at(metric).mean)) best = &r;
                    if (!worst || (higher ? v < worst->at(metric).mean : v > worst->at(metric).mean)) worst = &r;
                }
                if (!group && !best) continue;
                out << (metric == Metric::P1TailMean ? "left_p1" : "right_p99") << ',' << io::format_full(sigma) << ','
                    << to_string(dist) << ',';
                if (group) {
                    const auto& s = group->at(metric);
                    out << io::format_full(s.mean) << ',' << io::format_full(s.sd) << ',' << io::format_full(s.best)
                        << ',' << (s.best_beta ? io::format_full(*s.best_beta) : "");
                } else {
                    out << ",,,";
                }
                out << ',';
                if (best) {
                    out << io::format_full(best->at(metric).mean) << ',' << best->loss << ','
                        << io::format_full(worst->at(metric).mean) << ',' << worst->loss;
                } else {
                    out << ",,,";
                }
                out << '\n';
            }
        }
    }
}

/// Metric-versus-sigma series: each benchmark loss, the WES beta group
/// ("wes", with its best beta), the best WES cell ("wes_best") and the mean
/// over benchmark losses ("others").
inline void write_fig3_csv(std::ostream& out, const ExperimentConfig& config, std::span<const SummaryRow> rows) {
    write_header_comment(out, config);
    out << "distribution,sigma,metric,series,mean,sd,best_beta\n";
    for (auto dist : config.distributions) {
        for (double sigma : config.sigmas) {
            for (auto m : kAllMetrics) {
                std::vector<double> others;
                for (const auto& r : rows) {
                    if (r.distribution != dist || r.sigma != sigma) continue;
                    const auto& s = r.at(m);
                    if (r.beta_group) {
                        out << to_string(dist) << ',' << io::format_full(sigma) << ',' << metric_name(m) << ",wes,"
                            << io::format_full(s.mean) << ',' << io::format_full(s.sd) << ','
                            << (s.best_beta ? io::format_full(*s.best_beta) : "") << '\n';
                        out << to_string(dist) << ',' << io::format_full(sigma) << ',' << metric_name(m)
                            << ",wes_best," << io::format_full(s.best) << ",,"
                            << (s.best_beta ? io::format_full(*s.best_beta) : "") << '\n';
                    } else if (!r.beta) {
                        others.push_back(s.mean);
                        out << to_string(dist) << ',' << io::format_full(sigma) << ',' << metric_name(m) << ','
                            << r.loss << ',' << io::format_full(s.mean) << ',' << io::format_full(s.sd) << ",\n";
                    }
                }
                if (!others.empty()) {
                    out << to_string(dist) << ',' << io::format_full(sigma) << ',' << metric_name(m) << ",others,"
                        << io::format_full(mean_of(others)) << ',' << io::format_full(sd_of(others)) << ",\n";
                }
            }
        }
    }
}

/// Label PDF histogram, its polynomial fit and g(x) for every beta.
inline void write_fig1_files(const std::filesystem::path& dir, const ExperimentConfig& config,
                             const std::map<DistributionKind, Dataset>& data) {
    {
        const auto path = dir / "fig1_pdf.csv";
        auto out = io::open_for_write(path);
        write_header_comment(out, config);
        out << "distribution,bin_center,density\n";
        for (auto dist : config.distributions) {
            const auto& d = data.at(dist);
            for (std::size_t b = 0; b < d.pdf.bin_centers.size(); ++b) {
                out << to_string(dist) << ',' << io::format_full(d.pdf.bin_centers[b]) << ','
                    << io::format_full(d.pdf.densities[b]) << '\n';
            }
        }
        io::close_checked(out, path);
    }
    const auto path = dir / "fig1_weighting.csv";
    auto out = io::open_for_write(path);
    write_header_comment(out, config);
    out << "distribution,beta,x,pdf_fit,g\n";
    for (auto dist : config.distributions) {
        for (const auto& [beta, curve] : data.at(dist).curves) {
            for (int i = 0; i <= 100; ++i) {
                const double x = i / 100.0;
                out << to_string(dist) << ',' << io::format_full(beta) << ',' << io::format_full(x) << ','
                    << io::format_full(curve.density(x)) << ',' << io::format_full(curve(x)) << '\n';
            }
        }
    }
    io::close_checked(out, path);
}

/// Prediction histograms (summed over members, normalized to unit area) and
/// ensemble-mean scatter samples per cell, plus the label reference.
inline void write_fig4_files(const std::filesystem::path& dir, const ExperimentConfig& config, const ResultSet& set,
                             const std::map<DistributionKind, Dataset>& data) {
    struct Accum {
        DistributionKind dist;
        double sigma;
        std::string series;
        std::vector<double> hist;
        std::vector<double> scatter;
        std::size_t n = 0;
    };
    std::vector<std::string> order;
    std::map<std::string, Accum> acc;
    for (std::size_t i = 0; i < set.rows.size() && i < set.plots.size(); ++i) {
        const auto& r = set.rows[i];
        const auto& p = set.plots[i];
        if (!r.ok() || p.histogram.empty()) continue;
        const std::string series = r.key.beta ? "wes:" + io::format_full(*r.key.beta) : r.key.loss;
        const std::string cell = r.key.cell();
        auto [it, inserted] = acc.try_emplace(cell, Accum{r.key.distribution, r.key.sigma, series,
                                                          std::vector<double>(kPlotHistogramBins, 0.0),
                                                          std::vector<double>(p.scatter_predictions.size(), 0.0), 0});
        if (inserted) order.push_back(cell);
        auto& a = it->second;
        for (std::size_t b = 0; b < kPlotHistogramBins; ++b) a.hist[b] += p.histogram[b];
        for (std::size_t s = 0; s < a.scatter.size() && s < p.scatter_predictions.size(); ++s)
            a.scatter[s] += p.scatter_predictions[s];
        ++a.n;
    }

    const double width = (kPlotHistogramHi - kPlotHistogramLo) / static_cast<double>(kPlotHistogramBins);
    {
        const auto path = dir / "fig4_histograms.csv";
        auto out = io::open_for_write(path);
        write_header_comment(out, config);
        out << "distribution,sigma,series,bin_center,density\n";
        for (auto dist : config.distributions) {
            const auto& labels = data.at(dist).label.values;
            std::vector<double> h(kPlotHistogramBins, 0.0);
            for (double y : labels) {
                const double pos = std::floor((y - kPlotHistogramLo) / width);
                h[static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(kPlotHistogramBins - 1)))] += 1.0;
            }
            for (std::size_t b = 0; b < kPlotHistogramBins; ++b) {
                out << to_string(dist) << ",," << "label," << io::format_full(kPlotHistogramLo + (b + 0.5) * width)
                    << ',' << io::format_full(h[b] / (static_cast<double>(labels.size()) * width)) << '\n';
            }
        }
        for (const auto& cell : order) {
            const auto& a = acc.at(cell);
            const double total = std::accumulate(a.hist.begin(), a.hist.end(), 0.0);
            for (std::size_t b = 0; b < kPlotHistogramBins; ++b) {
                out << to_string(a.dist) << ',' << io::format_full(a.sigma) << ',' << a.series << ','
                    << io::format_full(kPlotHistogramLo + (b + 0.5) * width) << ','
                    << io::format_full(total > 0 ? a.hist[b] / (total * width) : 0.0) << '\n';
            }
        }
        io::close_checked(out, path);
    }

    const auto path = dir / "fig4_scatter.csv";
    auto out = io::open_for_write(path);
    write_header_comment(out, config);
    out << "distribution,sigma,series,label,mean_prediction\n";
    // Scatter positions follow the evaluation order used in run_single.
    const auto split = make_split(data.begin()->second.label.size(), config.train.holdout_fraction,
                                  split_seed(config.master_seed));
    for (const auto& cell : order) {
        const auto& a = acc.at(cell);
        const auto& labels = data.at(a.dist).label.values;
        std::vector<std::size_t> eval = split.holdout;
        if (eval.empty()) {
            eval.resize(labels.size());
            std::iota(eval.begin(), eval.end(), std::size_t{0});
        }
        const std::size_t stride = std::max<std::size_t>(1, eval.size() / kScatterPoints);
        for (std::size_t s = 0; s < a.scatter.size(); ++s) {
            out << to_string(a.dist) << ',' << io::format_full(a.sigma) << ',' << a.series << ','
                << io::format_full(labels[eval[s * stride]]) << ','
                << io::format_full(a.scatter[s] / static_cast<double>(a.n)) << '\n';
        }
    }
    io::close_checked(out, path);
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
    auto out = io::open_for_write(path);
    writer(out);
    io::close_checked(out, path);
}

/// Writes results.csv, summary.csv, table2.csv, fig3.csv, the fig1 PDF and
/// weighting tables, and (when plot data is present) the fig4 files.
/// The effective config is echoed as config.ini.
inline void emit_reports(const ExperimentConfig& config, const ResultSet& set, std::span<const SummaryRow> summary,
                         const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw NumericError("cannot create output directory " + dir.string() + ": " + ec.message());

    write_file(dir / "config.ini", [&](std::ostream& o) { o << config_to_ini(config); });
    write_file(dir / "results.csv", [&](std::ostream& o) { write_results_csv(o, config, set.rows); });
    write_file(dir / "summary.csv", [&](std::ostream& o) { write_summary_csv(o, config, summary); });
    write_file(dir / "table2.csv", [&](std::ostream& o) { write_table2_csv(o, config, summary); });
    write_file(dir / "fig3.csv", [&](std::ostream& o) { write_fig3_csv(o, config, summary); });

    const auto keys = enumerate_runs(config);
    const auto data = prepare_datasets(config, keys);
    write_fig1_files(dir, config, data);
    if (!set.plots.empty()) write_fig4_files(dir, config, set, data);
}

/// Regenerates reports from a directory holding config.ini and results.csv.
/// The fig4 files need per-run predictions and are left untouched.
inline std::vector<SummaryRow> regenerate_reports(const std::filesystem::path& dir) {
    const ExperimentConfig config = load_config(dir / "config.ini");
    std::ifstream in(dir / "results.csv");
    if (!in) throw ConfigError("cannot open " + (dir / "results.csv").string());
    ResultSet set;
    set.rows = read_results_csv(in);
    const auto summary = aggregate(set.rows);
    write_file(dir / "summary.csv", [&](std::ostream& o) { write_summary_csv(o, config, summary); });
    write_file(dir / "table2.csv", [&](std::ostream& o) { write_table2_csv(o, config, summary); });
    write_file(dir / "fig3.csv", [&](std::ostream& o) { write_fig3_csv(o, config, summary); });
    const auto data = prepare_datasets(config, enumerate_runs(config));
    write_fig1_files(dir, config, data);
    return summary;
}

}  // namespace wes
