#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "backoff_lab/adapt.hpp"

using namespace backoff_lab;
using namespace backoff_lab::adapt;

namespace {

EstimatorConfig ratio_cfg(int n, double eps = 0.8)
{
    EstimatorConfig c;
    c.kind = EstimatorKind::Ratio;
    c.epsilon = eps;
    c.interval_s = 0.1;
    c.n_assoc = n;
    return c;
}

EstimatorConfig threshold_cfg(int n, double tau)
{
    EstimatorConfig c;
    c.kind = EstimatorKind::Threshold;
    c.tau_threshold = tau;
    c.interval_s = 0.1;
    c.n_assoc = n;
    return c;
}

// Published optima for N = 2..12 (expected window, penalty factor, rollback factor).
std::vector<analytic::OptimaRow> published_table()
{
    const double rows[][4] = {
        {2, 14.9, 1.18, 1.11},  {3, 27.3, 1.35, 1.25},  {4, 40.1, 1.45, 1.31},  {5, 55.2, 1.53, 1.38},
        {6, 71.2, 1.65, 1.45},  {7, 88.8, 1.67, 1.5},   {8, 107.8, 1.73, 1.55}, {9, 128.5, 1.78, 1.65},
        {10, 150.8, 1.85, 1.67}, {11, 174.8, 1.88, 1.69}, {12, 200.5, 1.95, 1.75},
    };
    std::vector<analytic::OptimaRow> out;
    for (const auto& r : rows)
        out.push_back({static_cast<int>(r[0]), r[1], r[2], r[3], 0.0});
    return out;
}

std::vector<analytic::OptimaRow> linear_table(int last)
{
    std::vector<analytic::OptimaRow> out;
    for (int n = 2; n <= last; ++n)
        out.push_back({n, 10.0 * n, 1.0 + 0.01 * n, 1.0 + 0.005 * n, 0.0});
    return out;
}

} // namespace

TEST(ChannelShare, Examples)
{
    EXPECT_EQ(channel_share({0, {}, 0.01}), 0.0);
    EXPECT_DOUBLE_EQ(channel_share({0, {{1000.0, 8000.0}}, 1.0}), 1.0);
    const double two = channel_share({0, {{1540.0, 54e6}, {1540.0, 54e6}}, 0.01});
    EXPECT_NEAR(two, 2.0 * 1540.0 * 8.0 / 54e6 / 0.01, 1e-12);
    EXPECT_NEAR(two, 0.0456, 1e-4);
}

TEST(ChannelShare, ClampsAndRejects)
{
    EXPECT_EQ(channel_share({0, {{1e6, 1e6}}, 1.0}), 1.0);
    EXPECT_THROW(channel_share({0, {}, 0.0}), ParameterError);
    EXPECT_THROW(channel_share({0, {{0.0, 1e6}}, 1.0}), ParameterError);
    EXPECT_THROW(channel_share({0, {{100.0, 0.0}}, 1.0}), ParameterError);
}

TEST(Threshold, Examples)
{
    EXPECT_EQ(estimate_threshold(std::vector{0.5, 0.01}, threshold_cfg(2, 0.05)), 1);
    EXPECT_EQ(estimate_threshold(std::vector{0.2, 0.3, 0.4}, threshold_cfg(3, 0.1)), 3);
    EXPECT_EQ(estimate_threshold(std::vector{0.01, 0.02, 0.03}, threshold_cfg(3, 0.1)), 1);
}

TEST(Threshold, RequiresTau)
{
    auto cfg = threshold_cfg(2, 0.1);
    cfg.tau_threshold.reset();
    EXPECT_THROW(cfg.validate(), ParameterError);
    EXPECT_THROW(estimate_threshold(std::vector{0.1, 0.2}, cfg), ParameterError);
    EXPECT_THROW(estimate_threshold(std::vector{0.1}, threshold_cfg(2, 0.1)), ParameterError);
}

TEST(Threshold, MonotoneInTau)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 12);
        std::vector<double> shares(n);
        for (auto& s : shares)
            s = u(rng) / n;
        int prev = n + 1;
        for (double tau = 0.0; tau <= 1.0; tau += 0.01) {
            const int est = estimate_threshold(shares, threshold_cfg(n, tau));
            EXPECT_LE(est, prev);
            EXPECT_GE(est, 1);
            prev = est;
        }
    }
}

TEST(Ratio, Examples)
{
    EXPECT_EQ(estimate_ratio(std::vector{0.25, 0.25, 0.25, 0.25}, ratio_cfg(4)), 4);
    EXPECT_EQ(estimate_ratio(std::vector{0.4, 0.4, 0.1, 0.1}, ratio_cfg(4)), 2);
    EXPECT_EQ(estimate_ratio(std::vector{0.4, 0.4, 0.15, 0.15}, ratio_cfg(4)), 3);
}

TEST(Ratio, NoTrafficKeepsCallerEstimate)
{
    EXPECT_FALSE(estimate_ratio(std::vector{0.0, 0.0, 0.0}, ratio_cfg(3)).has_value());
}

TEST(Ratio, EpsilonValidated)
{
    EXPECT_THROW(ratio_cfg(3, 0.0).validate(), ParameterError);
    EXPECT_THROW(ratio_cfg(3, 1.2).validate(), ParameterError);
    EXPECT_NO_THROW(ratio_cfg(3, 1.0).validate());
}

TEST(Ratio, ScaleInvariantAndBounded)
{
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 16);
        std::vector<double> shares(n);
        for (auto& s : shares)
            s = rng() % 4 == 0 ? 0.0 : u(rng);
        shares[0] += 1e-3;
        const auto cfg = ratio_cfg(n, 0.5 + 0.5 * u(rng));
        const auto base = estimate_ratio(shares, cfg);
        ASSERT_TRUE(base.has_value());
        EXPECT_GE(*base, 1);
        EXPECT_LE(*base, n);
        // power-of-two factors keep the arithmetic exact
        const double c = std::exp2(std::round(std::log2(scale(rng))));
        std::vector<double> scaled = shares;
        for (auto& s : scaled)
            s *= c;
        EXPECT_EQ(estimate_ratio(scaled, cfg), base);
    }
}

TEST(Estimators, ExactOnUniformTraffic)
{
    for (int n = 1; n <= 16; ++n)
        for (int m = 1; m <= n; ++m) {
            std::vector<double> shares(n, 0.0);
            const double each = 0.9 / m;
            for (int i = 0; i < m; ++i)
                shares[i] = each;
            EXPECT_EQ(estimate_ratio(shares, ratio_cfg(n)), m) << n << " " << m;
            EXPECT_EQ(estimate_threshold(shares, threshold_cfg(n, each / 2)), m);
        }
}

TEST(Broadcaster, PublishedRowLookup)
{
    UpdateBroadcaster b(published_table());
    const auto u = b.make_update(12);
    ASSERT_TRUE(u.has_value());
    EXPECT_EQ(u->seq, 1u);
    EXPECT_EQ(u->n_active, 12);
    EXPECT_DOUBLE_EQ(u->r_penalty, 1.95);
    EXPECT_DOUBLE_EQ(u->r_rollback, 1.75);
    EXPECT_FALSE(u->clamped);
}

TEST(Broadcaster, HysteresisAndSequence)
{
    UpdateBroadcaster b(linear_table(12));
    EXPECT_EQ(b.make_update(5)->seq, 1u);
    EXPECT_FALSE(b.make_update(5).has_value());
    EXPECT_EQ(b.last()->seq, 1u);
    EXPECT_EQ(b.make_update(7)->seq, 2u);
    EXPECT_EQ(b.make_update(5)->seq, 3u);
}

TEST(Broadcaster, ClampsOutOfRange)
{
    UpdateBroadcaster b(linear_table(50));
    const auto hi = b.make_update(200);
    ASSERT_TRUE(hi.has_value());
    EXPECT_TRUE(hi->clamped);
    EXPECT_DOUBLE_EQ(hi->r_penalty, 1.5);
    const auto lo = b.make_update(1);
    EXPECT_TRUE(lo->clamped);
    EXPECT_DOUBLE_EQ(lo->r_penalty, 1.02);
    EXPECT_THROW(UpdateBroadcaster({}), ParameterError);
}

TEST(Controller, UpdateStreamMonotone)
{
    std::mt19937_64 rng(8);
    AdaptController ctl(ratio_cfg(8), 1000, linear_table(12));
    std::uint64_t last_seq = 0;
    std::optional<int> prev;
    for (int k = 0; k < 500; ++k) {
        const int active = 1 + static_cast<int>(rng() % 8);
        std::vector<double> shares(8, 0.0);
        for (int i = 0; i < active; ++i)
            shares[i] = 0.9 / active;
        const auto u = ctl.on_interval(shares);
        if (u) {
            EXPECT_GT(u->seq, last_seq);
            EXPECT_NE(std::optional<int>(u->n_active), prev);
            last_seq = u->seq;
        } else {
            EXPECT_EQ(ctl.last_estimate(), prev);
        }
        prev = ctl.last_estimate();
    }
}

TEST(Controller, SilentIntervalsKeepEstimate)
{
    AdaptController ctl(ratio_cfg(3), 100, linear_table(12));
    EXPECT_FALSE(ctl.on_interval(std::vector{0.0, 0.0, 0.0}).has_value());
    EXPECT_FALSE(ctl.last_estimate().has_value());
    EXPECT_EQ(ctl.on_interval(std::vector{0.3, 0.3, 0.0})->n_active, 2);
    EXPECT_FALSE(ctl.on_interval(std::vector{0.0, 0.0, 0.0}).has_value());
    EXPECT_EQ(ctl.last_estimate(), 2);
}

TEST(Controller, PluggableEstimatorAndValidation)
{
    AdaptController pinned([](std::span<const double>) { return std::optional<int>(4); }, 10, linear_table(12));
    EXPECT_EQ(pinned.on_interval(std::vector{1.0})->n_active, 4);
    EXPECT_FALSE(pinned.on_interval(std::vector{0.0}).has_value());
    EXPECT_THROW(AdaptController(ratio_cfg(3), 0, linear_table(12)), ParameterError);
    EXPECT_THROW(AdaptController(threshold_cfg(3, 1.5), 10, linear_table(12)), ParameterError);
}
