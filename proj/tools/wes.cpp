// Command-line front end: generate, train, sweep, report.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "wes/runner.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

nlohmann::ordered_json metrics_json(const wes::MetricReport& m) {
    using wes::io::round_significant;
    nlohmann::ordered_json j;
    j["rmse"] = round_significant(m.rmse);
    j["cc"] = round_significant(m.cc);
    j["overlap"] = round_significant(m.overlap);
    j["extreme_rmse"] = round_significant(m.extreme_rmse);
    j["l1"] = round_significant(m.l1);
    j["l2"] = round_significant(m.l2);
    j["p1_tail_mean"] = round_significant(m.p1_tail_mean);
    j["p99_tail_mean"] = round_significant(m.p99_tail_mean);
    return j;
}

void cmd_generate(const std::string& dist_name, const fs::path& out, std::size_t order, std::size_t features,
                  double sigma, std::uint64_t seed, const std::vector<double>& betas) {
    const auto kind = wes::parse_distribution(dist_name);
    const auto label = wes::default_label_curve(kind);
    const auto spectrum = wes::cosine_coefficients(label, order);
    const auto harmonics = wes::select_harmonics(spectrum, features);
    auto feats = wes::synthesize_features(harmonics, label.time_grid(), label.domain_length);
    if (sigma > 0.0) feats = wes::add_noise(feats, sigma, seed);

    wes::io::write_columns(out / "label.tsv", std::vector<std::string>{"t", "label"},
                           std::vector<std::vector<double>>{label.time_grid(), label.values});

    std::vector<double> idx{0.0};
    std::vector<double> coef{spectrum.a0};
    for (std::size_t i = 1; i <= spectrum.order(); ++i) {
        idx.push_back(static_cast<double>(i));
        coef.push_back(spectrum.at(i));
    }
    wes::io::write_columns(out / "spectrum.tsv", std::vector<std::string>{"n", "a_n"},
                           std::vector<std::vector<double>>{idx, coef});

    std::vector<double> h_idx(harmonics.indices.begin(), harmonics.indices.end());
    wes::io::write_columns(out / "harmonics.tsv", std::vector<std::string>{"n", "a_n"},
                           std::vector<std::vector<double>>{h_idx, harmonics.coefficients});

    std::vector<std::string> headers;
    std::vector<std::vector<double>> columns;
    for (std::size_t k = 0; k < feats.cols; ++k) {
        headers.push_back("x" + std::to_string(harmonics.indices[k]));
        std::vector<double> col(feats.rows);
        for (std::size_t r = 0; r < feats.rows; ++r) col[r] = feats(r, k);
        columns.push_back(std::move(col));
    }
    wes::io::write_columns(out / "features.tsv", headers, columns);

    std::vector<std::string> w_headers{"x", "pdf_fit"};
    std::vector<std::vector<double>> w_cols(2);
    std::vector<wes::WeightingCurve> curves;
    for (double b : betas) {
        curves.push_back(wes::make_weighting_curve(label.values, b));
        w_headers.push_back("g_beta_" + wes::io::format_full(b));
        w_cols.emplace_back();
    }
    for (int i = 0; i <= 1000; ++i) {
        const double x = i / 1000.0;
        w_cols[0].push_back(x);
        w_cols[1].push_back(curves.empty() ? 0.0 : curves.front().density(x));
        for (std::size_t c = 0; c < curves.size(); ++c) w_cols[2 + c].push_back(curves[c](x));
    }
    wes::io::write_columns(out / "weighting.tsv", w_headers, w_cols);

    const auto [l1, l2] = wes::extreme_thresholds(label.values);
    nlohmann::ordered_json j;
    j["distribution"] = std::string(wes::to_string(kind));
    j["samples"] = label.size();
    j["harmonics"] = harmonics.indices;
    j["l1"] = wes::io::round_significant(l1);
    j["l2"] = wes::io::round_significant(l2);
    std::cout << j.dump(2) << '\n';
}

void cmd_train(const std::string& dist_name, std::string loss_id, double sigma, std::optional<double> beta,
               std::uint64_t seed, const fs::path& out, std::size_t epochs, double holdout) {
    wes::ExperimentConfig config;
    const auto kind = wes::parse_distribution(dist_name);
    config.distributions = {kind};
    config.sigmas = {sigma};
    config.master_seed = seed;
    config.ensemble_size = 1;
    config.train.epochs = epochs;
    config.train.holdout_fraction = holdout;
    config.output_dir = out;

    wes::RunKey key{kind, sigma, loss_id, std::nullopt, 0};
    if (loss_id == "wes") {
        if (!beta) throw wes::ConfigError("train: loss 'wes' needs --beta");
        key.beta = *beta;
    } else {
        const auto spec = wes::parse_loss(loss_id);
        if (const auto b = wes::wes_beta(spec)) {
            if (beta && *beta != *b) throw wes::ConfigError("train: --beta conflicts with the loss id");
            key.loss = "wes";
            key.beta = *b;
        } else if (beta) {
            throw wes::ConfigError("train: --beta only applies to the wes loss");
        }
    }
    config.losses = {key.beta ? "wes:" + wes::io::format_full(*key.beta) : key.loss};
    config.betas = key.beta ? std::vector<double>{*key.beta} : std::vector<double>{};
    config.validate();

    std::vector<double> betas;
    if (key.beta) betas.push_back(*key.beta);
    const auto data = wes::prepare_dataset(kind, config, betas);
    const auto run = wes::train_member(config, data, key);
    wes::MetricReport report =
        wes::evaluate(run.eval_predictions, run.eval_labels, data.l1, data.l2, config.overlap_bins);

    fs::create_directories(out);
    {
        auto f = wes::io::open_for_write(out / "model.txt");
        wes::save_model(f, run.model.arch, run.model.params);
        wes::io::close_checked(f, out / "model.txt");
    }
    {
        std::vector<double> epoch_idx(run.model.train_loss_history.size());
        for (std::size_t e = 0; e < epoch_idx.size(); ++e) epoch_idx[e] = static_cast<double>(e);
        std::vector<std::string> headers{"epoch", "train_loss"};
        std::vector<std::vector<double>> cols{epoch_idx, run.model.train_loss_history};
        if (!run.model.holdout_loss_history.empty()) {
            headers.emplace_back("holdout_loss");
            cols.push_back(run.model.holdout_loss_history);
        }
        wes::io::write_columns(out / "history.tsv", headers, cols);
    }
    {
        std::vector<double> index(run.eval_indices.begin(), run.eval_indices.end());
        wes::io::write_columns(out / "predictions.tsv", std::vector<std::string>{"index", "label", "prediction"},
                               std::vector<std::vector<double>>{index, run.eval_labels, run.eval_predictions});
    }
    {
        auto f = wes::io::open_for_write(out / "config.ini");
        f << wes::config_to_ini(config);
        wes::io::close_checked(f, out / "config.ini");
    }

    nlohmann::ordered_json j = metrics_json(report);
    j["train_loss_final"] = wes::io::round_significant(run.model.train_loss_final);
    j["seed"] = wes::member_seed(config.master_seed, key);
    {
        auto f = wes::io::open_for_write(out / "metrics.json");
        f << j.dump(2) << '\n';
        wes::io::close_checked(f, out / "metrics.json");
    }
    std::cout << j.dump(2) << '\n';
}

void cmd_sweep(const fs::path& config_path, std::optional<std::size_t> workers, bool full_scale,
               std::optional<fs::path> out_override, bool quiet) {
    auto config = wes::load_config(config_path);
    if (full_scale) config.apply_full_scale();
    if (out_override) config.output_dir = *out_override;
    config.validate();

    wes::RunOptions options;
    options.workers = workers ? *workers : wes::default_worker_count();
    if (options.workers == 0) throw wes::ConfigError("--workers must be positive");
    if (!quiet) {
        options.progress = [](std::size_t done, std::size_t total, const wes::ExperimentResult& r) {
            std::cerr << '[' << done << '/' << total << "] " << r.key.canonical() << ' ' << r.status
                      << " rmse=" << wes::io::format_short(r.metrics.rmse) << " ("
                      << wes::io::format_short(r.wall_seconds) << " s)\n";
        };
    }
    const auto set = wes::run_experiment(config, options);
    const auto summary = wes::aggregate(set.rows);
    wes::emit_reports(config, set, summary, config.output_dir);

    std::size_t failed = 0;
    for (const auto& r : set.rows) failed += r.ok() ? 0 : 1;
    std::cout << "runs: " << set.rows.size() << ", failed: " << failed << ", output: " << config.output_dir.string()
              << '\n';
}

void cmd_report(const fs::path& dir) {
    const auto summary = wes::regenerate_reports(dir);
    std::cout << "summary rows: " << summary.size() << ", output: " << dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weighted empirical stretching loss benchmark"};
    app.set_version_flag("--version", std::string(wes::kToolVersion));
    app.require_subcommand(1);

    std::string dist = "unimodal";
    fs::path out;
    std::size_t order = wes::kDefaultHarmonicOrder;
    std::size_t n_features = wes::kDefaultFeatureCount;
    double gen_sigma = 0.0;
    std::uint64_t seed = 1;
    std::vector<double> gen_betas{1.5, 8, 30};
    auto* gen = app.add_subcommand("generate", "Write label curve, spectrum, features and weighting curves");
    gen->add_option("--dist", dist, "Distribution kind")->required();
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--order", order, "Cosine expansion order K")->capture_default_str();
    gen->add_option("--features", n_features, "Number of harmonics N")->capture_default_str();
    gen->add_option("--sigma", gen_sigma, "Gaussian noise sd added to the features")->capture_default_str();
    gen->add_option("--seed", seed, "Noise seed")->capture_default_str();
    gen->add_option("--betas", gen_betas, "Betas for the weighting table")->capture_default_str();

    std::string loss = "mse";
    double sigma = 0.05;
    std::optional<double> beta;
    std::size_t epochs = 300;
    double holdout = 0.2;
    auto* tr = app.add_subcommand("train", "Train one network and print its metrics as JSON");
    tr->add_option("--dist", dist, "Distribution kind")->required();
    tr->add_option("--loss", loss, "Loss id: mse, mae, huber:<d>, logcosh, quantile:<g>, wes[:<beta>]")->required();
    tr->add_option("--sigma", sigma, "Feature noise sd")->required();
    tr->add_option("--beta", beta, "WES beta");
    tr->add_option("--seed", seed, "Master seed")->required();
    tr->add_option("--out", out, "Output directory")->required();
    tr->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    tr->add_option("--holdout", holdout, "Holdout fraction")->capture_default_str();

    fs::path config_path;
    std::optional<std::size_t> workers;
    bool full_scale = false;
    bool quiet = false;
    std::optional<fs::path> sweep_out;
    auto* sw = app.add_subcommand("sweep", "Run the experiment grid from a config file");
    sw->add_option("--config", config_path, "INI config file")->required();
    sw->add_option("--workers", workers, std::string("Worker threads (default from ") + wes::kWorkersEnv + ")");
    sw->add_flag("--paper-scale", full_scale, "Use 100 ensemble members");
    sw->add_option("--out", sweep_out, "Override output_dir");
    sw->add_flag("--quiet", quiet, "No per-run progress");

    fs::path results_dir;
    auto* rep = app.add_subcommand("report", "Regenerate summaries from stored results");
    rep->add_option("--results", results_dir, "Directory with config.ini and results.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gen) cmd_generate(dist, out, order, n_features, gen_sigma, seed, gen_betas);
        else if (*tr) cmd_train(dist, loss, sigma, beta, seed, out, epochs, holdout);
        else if (*sw) cmd_sweep(config_path, workers, full_scale, sweep_out, quiet);
        else if (*rep) cmd_report(results_dir);
    } catch (const wes::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
