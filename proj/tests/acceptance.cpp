// Acceptance checks, one PASS/FAIL line per criterion on stdout.
//
//   wes_acceptance [--group properties|reproduction|all] [--workers N] [--out DIR]
//
// The properties group (1-6) runs in seconds. The reproduction group (7-10)
// trains several hundred networks; --out keeps its report files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "wes/runner.hpp"

namespace fs = std::filesystem;
using namespace wes;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// Properties

Verdict gradient_correctness() {
    std::vector<std::string> ids = kBenchmarkLosses;
    for (const char* extra : {"huber:1", "quantile:0.5", "wes:1", "wes:1.5", "wes:8", "wes:30"}) ids.emplace_back(extra);
    double worst = 0.0;
    std::string worst_id;
    int compared = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto out = gradcheck::run(parse_loss(ids[i]), 1000 + i);
        if (out.draws == 0) return {false, ids[i] + ": every draw landed on a kink"};
        compared += out.draws;
        if (out.worst_rel >= worst) {
            worst = out.worst_rel;
            worst_id = ids[i];
        }
    }
    return {worst < 1e-5, std::to_string(ids.size()) + " losses, " + std::to_string(compared) +
                              " draws, worst relative error " + fmt(worst, 3) + " (" + worst_id + ")"};
}

Verdict wes_degeneracies() {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double half_mse_gap = 0.0, mode_gap = 0.0;
    bool bounded = true;
    for (auto kind : kAllDistributions) {
        const auto labels = default_label_curve(kind).values;
        const double c = make_weighting_curve(labels, 8.0).c();

        // beta = c collapses g to the constant c; c is 1 after normalization.
        const auto flat = make_weighting_curve(labels, c);
        std::vector<double> y(512), p(512);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = labels[static_cast<std::size_t>(unit(gen) * static_cast<double>(labels.size() - 1))];
            p[i] = y[i] + 0.3 * (unit(gen) - 0.5);
        }
        const auto w = flat.weights_at(y);
        const double wes = loss_value(loss::Wes{c}, p, y, w);
        const double mse = loss_value(loss::Mse{}, p, y);
        half_mse_gap = std::max(half_mse_gap, std::abs(wes - 0.5 * mse));

        for (double beta : {1.5, 8.0, 30.0}) {
            const auto g = make_weighting_curve(labels, beta);
            mode_gap = std::max(mode_gap, std::abs(g(g.mode()) - g.c()));
            for (std::size_t i = 0; i < kWeightGridPoints; ++i) {
                const double v = g(static_cast<double>(i) / static_cast<double>(kWeightGridPoints - 1));
                if (!(v >= g.c() && v <= beta)) bounded = false;
            }
        }
    }
    const bool pass = half_mse_gap <= 1e-12 && mode_gap <= 1e-9 && bounded;
    return {pass, "|WES(beta=c) - MSE/2| = " + fmt(half_mse_gap, 3) + ", |g(mode) - c| = " + fmt(mode_gap, 3) +
                      ", g within [c, beta] on grid: " + (bounded ? "yes" : "no")};
}

Verdict quantile_mae_identity() {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> n(0.0, 1.0);
    double gap = 0.0;
    for (int batch = 0; batch < 50; ++batch) {
        std::vector<double> p(64), y(64);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = n(gen);
            y[i] = n(gen);
        }
        gap = std::max(gap, std::abs(loss_value(loss::Quantile{0.5}, p, y) - 0.5 * loss_value(loss::Mae{}, p, y)));
    }
    return {gap <= 1e-12, "50 batches, max |Q(0.5) - MAE/2| = " + fmt(gap, 3)};
}

Verdict curve_pipeline() {
    bool shape = true;
    double worst = 0.0;
    for (auto kind : kAllDistributions) {
        const auto curve = default_label_curve(kind);
        const auto& v = curve.values;
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        if (v.size() != 40000 || *lo != 0.0 || *hi != 1.0) shape = false;
        constexpr std::size_t period = 4000;
        for (std::size_t start = 0; start + period <= v.size(); start += period) {
            for (std::size_t j = 0; j < period; ++j) {
                if (v[start + j] != v[start + period - 1 - j]) shape = false;
            }
        }
        const auto s = cosine_coefficients(curve, 300);
        const auto direct = oracle::cosine_partial_sum(s.a0, s.coefficients, curve.time_grid(), curve.domain_length);
        worst = std::max(worst, oracle::rmse(direct, v));
    }
    return {shape && worst < 0.05, std::string("extrema/length/palindromes ") + (shape ? "ok" : "broken") +
                                       ", worst K=300 reconstruction RMSE " + fmt(worst, 3)};
}

Verdict metric_axioms() {
    std::mt19937_64 gen(13);
    std::normal_distribution<double> n(0.5, 0.15);
    std::vector<double> a(4000), b(3000);
    for (auto& v : a) v = n(gen);
    for (auto& v : b) v = n(gen) + 0.1;
    std::vector<std::string> broken;

    const double ab = overlap_area(a, b);
    if (ab != overlap_area(b, a)) broken.emplace_back("overlap symmetry");
    if (!(ab >= 0.0 && ab <= 1.0)) broken.emplace_back("overlap range");
    if (std::abs(overlap_area(a, a) - 1.0) > 1e-12) broken.emplace_back("overlap self");
    std::vector<double> lo(200), hi(200);
    for (std::size_t i = 0; i < lo.size(); ++i) {
        lo[i] = 0.3 * static_cast<double>(i) / 199.0;
        hi[i] = 0.7 + 0.3 * static_cast<double>(i) / 199.0;
    }
    if (overlap_area(lo, hi) != 0.0) broken.emplace_back("overlap disjoint");

    std::vector<double> a2(a.begin(), a.begin() + 3000), b2(b);
    const double cc = pearson_cc(a2, b2);
    for (auto& v : a2) v = -4.0 * v + 2.0;
    for (auto& v : b2) v = 0.5 * v - 9.0;
    if (std::abs(pearson_cc(a2, b2) + cc) > 1e-12) broken.emplace_back("cc affine");

    const std::vector<double> y(a.begin(), a.begin() + 3000);
    const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
    if (std::abs(extreme_rmse(b, y, *ymax, *ymin) - rmse(b, y)) > 1e-15) broken.emplace_back("extreme_rmse span");

    if (broken.empty()) return {true, "overlap symmetry/range/self/disjoint, CC affine invariance, extreme_rmse span"};
    std::string d = "violated:";
    for (const auto& s : broken) d += " " + s;
    return {false, d};
}

/// results.csv with the generation stamp and wall-clock column removed.
std::string stable_results(const ExperimentConfig& config, const ResultSet& set) {
    std::ostringstream raw;
    write_results_csv(raw, config, set.rows);
    std::istringstream in(raw.str());
    std::ostringstream out;
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("# generated:", 0) == 0) continue;
        if (line.empty() || line[0] == '#') {
            out << line << '\n';
            continue;
        }
        auto fields = io::split(line, ',');
        fields.erase(fields.end() - 2);  // wall_seconds
        for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << fields[i];
        out << '\n';
    }
    return out.str();
}

Verdict determinism() {
    ExperimentConfig c;
    c.distributions = {DistributionKind::Unimodal, DistributionKind::SkewedBimodal};
    c.sigmas = {0.03};
    c.losses = {"mse", "huber:0.5", "wes"};
    c.betas = {2.0, 8.0};
    c.ensemble_size = 2;
    c.master_seed = 77;
    c.train.epochs = 3;
    const std::string one = stable_results(c, run_experiment(c, RunOptions{1, {}}));
    const std::string two = stable_results(c, run_experiment(c, RunOptions{2, {}}));
    const std::string three = stable_results(c, run_experiment(c, RunOptions{3, {}}));
    const bool pass = one == two && one == three;
    const auto rows = static_cast<std::size_t>(std::count(one.begin(), one.end(), '\n'));
    return {pass, std::to_string(rows) + " lines compared across 1, 2 and 3 workers" + (pass ? "" : ": files differ")};
}

// ---------------------------------------------------------------------------
// Reproduction

Verdict tail_thresholds() {
    struct Expect {
        DistributionKind kind;
        double l1, l2;
    };
    const Expect expected[] = {{DistributionKind::Unimodal, 0.200, 0.800},
                               {DistributionKind::SkewedUnimodal, 0.058, 0.540},
                               {DistributionKind::Bimodal, 0.094, 0.767},
                               {DistributionKind::SkewedBimodal, 0.039, 0.682}};
    bool pass = true;
    std::string detail;
    for (const auto& e : expected) {
        const auto [l1, l2] = extreme_thresholds(default_label_curve(e.kind).values);
        const bool ok = std::abs(l1 - e.l1) <= 0.02 && std::abs(l2 - e.l2) <= 0.02;
        pass = pass && ok;
        detail += std::string(detail.empty() ? "" : "; ") + std::string(to_string(e.kind)) + " " + fmt(l1, 3) + "/" +
                  fmt(l2, 3) + " vs " + fmt(e.l1, 3) + "/" + fmt(e.l2, 3) + (ok ? "" : " (off)");
    }
    return {pass, detail};
}

struct Block {
    ExperimentConfig config;
    std::vector<SummaryRow> summary;
};

Block run_block(const std::string& name, ExperimentConfig config, std::size_t workers, const std::string& out_dir) {
    const auto total = enumerate_runs(config).size();
    std::cerr << "[" << name << "] " << total << " runs on " << workers << " worker(s)\n";
    RunOptions options{workers, [&](std::size_t done, std::size_t n, const ExperimentResult& r) {
                           if (done % 10 == 0 || done == n) {
                               std::cerr << "[" << name << "] " << done << "/" << n << " (last " << r.key.canonical()
                                         << ", " << fmt(r.wall_seconds, 3) << " s)\n";
                           }
                       }};
    const auto set = run_experiment(config, options);
    Block b{config, aggregate(set.rows)};
    if (!out_dir.empty()) emit_reports(config, set, b.summary, fs::path(out_dir) / name);
    return b;
}

const SummaryRow* find_cell(const Block& b, DistributionKind kind, const std::string& loss, std::optional<double> beta) {
    for (const auto& r : b.summary) {
        if (!r.beta_group && r.distribution == kind && r.loss == loss && r.beta == beta) return &r;
    }
    return nullptr;
}

const SummaryRow* find_group(const Block& b, DistributionKind kind) {
    for (const auto& r : b.summary) {
        if (r.beta_group && r.distribution == kind) return &r;
    }
    return nullptr;
}

const std::vector<double> kDirectionalBetas = {1.5, 2, 2.5, 3, 4, 5, 8};

ExperimentConfig sigma005_config() {
    ExperimentConfig c;
    c.distributions = {kAllDistributions.begin(), kAllDistributions.end()};
    c.sigmas = {0.05};
    c.losses = {"mse", "wes"};
    c.betas = kDirectionalBetas;
    c.ensemble_size = 10;
    return c;
}

Verdict stretching_effect(const Block& b) {
    const auto kind = DistributionKind::Unimodal;
    const auto* mse = find_cell(b, kind, "mse", std::nullopt);
    const auto* wes8 = find_cell(b, kind, "wes", 8.0);
    if (!mse || !wes8) return {false, "missing cells"};
    double best = INFINITY, best_beta = 0.0;
    for (double beta : kDirectionalBetas) {
        if (beta > 5.0) continue;
        const auto* cell = find_cell(b, kind, "wes", beta);
        if (cell && cell->at(Metric::ExtremeRmse).mean < best) {
            best = cell->at(Metric::ExtremeRmse).mean;
            best_beta = beta;
        }
    }
    const double mse_ext = mse->at(Metric::ExtremeRmse).mean;
    const double mse_p99 = mse->at(Metric::P99TailMean).mean;
    const double wes_p99 = wes8->at(Metric::P99TailMean).mean;
    const bool pass = best <= mse_ext && wes_p99 > mse_p99;
    return {pass, "extreme RMSE WES(beta=" + fmt(best_beta, 2) + ") " + fmt(best) + " vs MSE " + fmt(mse_ext) +
                      "; P99 WES(8) " + fmt(wes_p99) + " vs MSE " + fmt(mse_p99)};
}

Verdict overlap_improvement(const Block& b) {
    int wins = 0;
    std::string detail;
    for (auto kind : kAllDistributions) {
        const auto* mse = find_cell(b, kind, "mse", std::nullopt);
        const auto* group = find_group(b, kind);
        if (!mse || !group) return {false, "missing cells for " + std::string(to_string(kind))};
        const auto& s = group->at(Metric::Overlap);
        const bool win = s.best >= mse->at(Metric::Overlap).mean;
        wins += win;
        detail += std::string(detail.empty() ? "" : "; ") + std::string(to_string(kind)) + " WES(beta=" +
                  fmt(s.best_beta.value_or(NAN), 2) + ") " + fmt(s.best) + (win ? " >= " : " < ") + "MSE " +
                  fmt(mse->at(Metric::Overlap).mean);
    }
    return {wins >= 3, std::to_string(wins) + "/4 distributions: " + detail};
}

Verdict tail_magnitude(std::size_t workers, const std::string& out_dir) {
    ExperimentConfig c;
    c.distributions = {DistributionKind::Unimodal};
    c.sigmas = {0.01};
    c.losses = {"wes"};
    c.betas = kDefaultBetas;
    c.ensemble_size = 10;

    auto judge = [](const Block& b, const std::string& mode) -> Verdict {
        const auto* g = find_group(b, DistributionKind::Unimodal);
        if (!g) return {false, "missing WES group"};
        const double p99 = g->at(Metric::P99TailMean).mean;
        const double p1 = g->at(Metric::P1TailMean).mean;
        const bool pass = std::abs(p99 - 0.895) <= 0.03 && std::abs(p1 - 0.062) <= 0.03;
        return {pass, mode + ": P99 " + fmt(p99) + " (target 0.895), P1 " + fmt(p1) + " (target 0.062)"};
    };

    auto fresh = judge(run_block("sigma0.01_fresh_noise", c, workers, out_dir), "fresh noise");
    if (fresh.pass) return fresh;
    c.fresh_noise_per_member = false;
    auto shared = judge(run_block("sigma0.01_shared_noise", c, workers, out_dir), "shared noise");
    return {shared.pass, fresh.detail + "; " + shared.detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"WES benchmark acceptance checks"};
    std::string group = "all";
    std::size_t workers = 0;
    std::string out_dir;
    app.add_option("--group", group, "properties, reproduction or all")
        ->check(CLI::IsMember({"properties", "reproduction", "all"}));
    app.add_option("--workers", workers, "parallel training runs (default: $WES_WORKERS or 1)");
    app.add_option("--out", out_dir, "keep reproduction reports under this directory");
    CLI11_PARSE(app, argc, argv);

    try {
        if (workers == 0) workers = default_worker_count();
        int failures = 0;
        auto report = [&](int id, const char* title, const std::function<Verdict()>& check) {
            const auto v = check();
            failures += !v.pass;
            std::cout << "criterion " << id << " [" << title << "]: " << (v.pass ? "PASS" : "FAIL") << " - "
                      << v.detail << std::endl;
        };

        if (group != "reproduction") {
            report(1, "gradient correctness", gradient_correctness);
            report(2, "WES degeneracies", wes_degeneracies);
            report(3, "quantile/MAE identity", quantile_mae_identity);
            report(4, "curve pipeline", curve_pipeline);
            report(5, "metric axioms", metric_axioms);
            report(6, "determinism", determinism);
        }
        if (group != "properties") {
            report(7, "tail thresholds", tail_thresholds);
            const Block sigma005 = run_block("sigma0.05", sigma005_config(), workers, out_dir);
            report(8, "stretching effect", [&] { return stretching_effect(sigma005); });
            report(9, "sigma=0.01 tail magnitude", [&] { return tail_magnitude(workers, out_dir); });
            report(10, "overlap improvement", [&] { return overlap_improvement(sigma005); });
        }
        return failures == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
