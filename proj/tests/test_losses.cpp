#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wes/losses.hpp"

using namespace wes;

namespace {

std::vector<LossSpec> all_specs() {
    return {loss::Mse{},          loss::Mae{},           loss::Huber{0.5},      loss::Huber{5},
            loss::Huber{10},      loss::LogCosh{},       loss::Quantile{0.25},  loss::Quantile{0.75},
            loss::Quantile{0.5},  loss::Wes{1.0},        loss::Wes{8.0}};
}

struct Batch {
    std::vector<double> preds, labels, weights;
};

Batch random_batch(std::mt19937_64& gen, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> w(1.0, 8.0);
    Batch b;
    for (std::size_t i = 0; i < n; ++i) {
        b.labels.push_back(u(gen));
        b.preds.push_back(b.labels.back() + 2.0 * (u(gen) - 0.5));
        b.weights.push_back(w(gen));
    }
    return b;
}

bool near_kink(const LossSpec& spec, double e) {
    if (std::holds_alternative<loss::Mae>(spec) || std::holds_alternative<loss::Quantile>(spec))
        return std::abs(e) < 1e-4;
    if (const auto* h = std::get_if<loss::Huber>(&spec)) return std::abs(std::abs(e) - h->delta) < 1e-4;
    return false;
}

}  // namespace

TEST(LossValue, ZeroOnPerfectPredictions) {
    const std::vector<double> y{0.1, 0.5, 0.9};
    const std::vector<double> w{1.0, 2.0, 3.0};
    for (const auto& spec : all_specs()) EXPECT_EQ(loss_value(spec, y, y, w), 0.0) << loss_id(spec);
}

TEST(LossValue, HandComputedElements) {
    EXPECT_DOUBLE_EQ(loss_value(loss::Huber{1.0}, std::vector<double>{2.0}, std::vector<double>{0.0}), 1.5);
    EXPECT_DOUBLE_EQ(loss_value(loss::Huber{1.0}, std::vector<double>{0.5}, std::vector<double>{0.0}), 0.125);
    EXPECT_DOUBLE_EQ(loss_value(loss::Mse{}, std::vector<double>{1.0, 3.0}, std::vector<double>{0.0, 0.0}), 5.0);
    EXPECT_DOUBLE_EQ(loss_value(loss::Mae{}, std::vector<double>{1.0, -3.0}, std::vector<double>{0.0, 0.0}), 2.0);
    // Over-prediction costs 1 - gamma, under-prediction gamma.
    EXPECT_DOUBLE_EQ(loss_value(loss::Quantile{0.25}, std::vector<double>{1.0}, std::vector<double>{0.0}), 0.75);
    EXPECT_DOUBLE_EQ(loss_value(loss::Quantile{0.25}, std::vector<double>{0.0}, std::vector<double>{1.0}), 0.25);
    EXPECT_DOUBLE_EQ(loss_value(loss::Wes{8}, std::vector<double>{1.0}, std::vector<double>{0.0}, std::vector<double>{4.0}),
                     2.0);
}

TEST(LossValue, LogCoshSmallAndLarge) {
    const double v = loss_value(loss::LogCosh{}, std::vector<double>{0.01}, std::vector<double>{0.0});
    EXPECT_NEAR(v, 5e-5, 5e-7);
    const double big = loss_value(loss::LogCosh{}, std::vector<double>{1000.0}, std::vector<double>{0.0});
    EXPECT_NEAR(big, 1000.0 - std::log(2.0), 1e-9);
    EXPECT_TRUE(std::isfinite(big));
}

TEST(LossValue, QuantileHalfIsHalfMae) {
    std::mt19937_64 gen(5);
    for (int rep = 0; rep < 50; ++rep) {
        const auto b = random_batch(gen, 64);
        EXPECT_NEAR(loss_value(loss::Quantile{0.5}, b.preds, b.labels), 0.5 * loss_value(loss::Mae{}, b.preds, b.labels),
                    1e-12);
    }
}

TEST(LossValue, WesWithUnitWeightsIsHalfMse) {
    std::mt19937_64 gen(6);
    const auto b = random_batch(gen, 100);
    const std::vector<double> ones(100, 1.0);
    EXPECT_NEAR(loss_value(loss::Wes{1.0}, b.preds, b.labels, ones), 0.5 * loss_value(loss::Mse{}, b.preds, b.labels),
                1e-12);
}

TEST(LossValue, SymmetryAndQuantileSwap) {
    std::mt19937_64 gen(7);
    const auto b = random_batch(gen, 40);
    std::vector<double> mirrored(b.preds.size());
    for (std::size_t i = 0; i < mirrored.size(); ++i) mirrored[i] = 2.0 * b.labels[i] - b.preds[i];
    for (LossSpec s : {LossSpec{loss::Mse{}}, LossSpec{loss::Mae{}}, LossSpec{loss::Huber{0.5}}, LossSpec{loss::LogCosh{}}}) {
        EXPECT_NEAR(loss_value(s, b.preds, b.labels), loss_value(s, mirrored, b.labels), 1e-12) << loss_id(s);
    }
    EXPECT_NEAR(loss_value(loss::Quantile{0.25}, b.preds, b.labels), loss_value(loss::Quantile{0.75}, mirrored, b.labels),
                1e-12);
}

TEST(LossValue, NonNegative) {
    std::mt19937_64 gen(8);
    for (int rep = 0; rep < 20; ++rep) {
        const auto b = random_batch(gen, 32);
        for (const auto& spec : all_specs()) EXPECT_GT(loss_value(spec, b.preds, b.labels, b.weights), 0.0);
    }
}

TEST(LossValue, WesPenalizesLowDensityLabelsMore) {
    // Same error, larger weight at the rarer label.
    const double rare = element_loss(loss::Wes{8}, 0.2, 0.0, 8.0);
    const double common = element_loss(loss::Wes{8}, 0.7, 0.5, 1.0);
    EXPECT_GE(rare, common);
}

TEST(LossValue, Errors) {
    EXPECT_THROW(loss_value(loss::Mse{}, std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ConfigError);
    EXPECT_THROW(loss_value(loss::Mse{}, std::vector<double>{}, std::vector<double>{}), ConfigError);
    EXPECT_THROW(loss_value(loss::Wes{8}, std::vector<double>{1.0}, std::vector<double>{1.0}), ConfigError);
}

TEST(LossGrad, SpecialValues) {
    EXPECT_EQ(loss_grad(loss::Wes{8}, 0.3, 0.3, 5.0), 0.0);
    EXPECT_NEAR(loss_grad(loss::LogCosh{}, 10.0, 0.0), 1.0, 1e-8);
    EXPECT_EQ(loss_grad(loss::Mae{}, 0.3, 0.3), 0.0);
    EXPECT_EQ(loss_grad(loss::Quantile{0.25}, 0.3, 0.3), 0.0);
    EXPECT_EQ(loss_grad(loss::Quantile{0.25}, 1.0, 0.0), 0.75);
    EXPECT_EQ(loss_grad(loss::Quantile{0.25}, 0.0, 1.0), -0.25);
    EXPECT_EQ(loss_grad(loss::Huber{0.5}, 3.0, 0.0), 0.5);
    EXPECT_EQ(loss_grad(loss::Huber{0.5}, -3.0, 0.0), -0.5);
    EXPECT_EQ(loss_grad(loss::Huber{0.5}, 0.2, 0.0), 0.2);
    EXPECT_EQ(loss_grad(loss::Mse{}, 0.5, 0.0), 1.0);
}

TEST(LossGrad, MatchesFiniteDifferences) {
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const double h = 1e-6;
    for (const auto& spec : all_specs()) {
        for (int rep = 0; rep < 200; ++rep) {
            const double y = u(gen) / 3.0;
            const double p = u(gen);
            if (near_kink(spec, p - y)) continue;
            const double w = 1.0 + std::abs(u(gen));
            const double fd = (element_loss(spec, p + h, y, w) - element_loss(spec, p - h, y, w)) / (2.0 * h);
            const double an = loss_grad(spec, p, y, w);
            EXPECT_LE(std::abs(fd - an), 1e-6 * std::max(1.0, std::abs(an))) << loss_id(spec) << " e=" << p - y;
        }
    }
}

TEST(LossGradient, BatchIsElementwiseOverN) {
    const std::vector<double> p{0.5, -1.0, 2.0, 0.25};
    const std::vector<double> y{0.0, 0.0, 1.0, 0.5};
    const std::vector<double> w{2.0, 1.0, 3.0, 1.5};
    for (const auto& spec : all_specs()) {
        const auto g = loss_gradient(spec, p, y, w);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double wi = is_wes(spec) ? w[i] : 1.0;
            EXPECT_DOUBLE_EQ(g[i], loss_grad(spec, p[i], y[i], wi) / 4.0);
        }
    }
}

TEST(LossIds, RoundTrip) {
    for (const auto& spec : all_specs()) {
        const auto id = loss_id(spec);
        EXPECT_EQ(loss_id(parse_loss(id)), id);
    }
    EXPECT_EQ(loss_id(loss::Huber{0.5}), "huber:0.5");
    EXPECT_EQ(loss_id(loss::Quantile{0.25}), "quantile:0.25");
    EXPECT_EQ(loss_id(loss::Wes{8}), "wes:8");
    EXPECT_EQ(wes_beta(parse_loss("wes:2.5")), 2.5);
    EXPECT_FALSE(wes_beta(parse_loss("mse")).has_value());
}

TEST(LossIds, Rejections) {
    for (const char* bad : {"", "mse:1", "huber:-1", "huber:x", "quantile:1", "quantile:0", "wes", "wes:0", "l2"}) {
        EXPECT_THROW(parse_loss(bad), ConfigError) << bad;
    }
}
