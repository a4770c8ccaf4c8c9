#pragma once

// Access-point side of backoff-factor selection: per-station channel-time
// shares, active-station estimators, and the update broadcaster that maps an
// estimate onto a row of the optima table.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "analytic.hpp"
#include "errors.hpp"

namespace backoff_lab::adapt {

struct FrameSample {
    double bytes = 0.0;       // P
    double bitrate_bps = 0.0; // R
};

struct UsageRecord {
    std::uint32_t station = 0;
    std::vector<FrameSample> frames;
    double window_s = 0.0; // T
};

/// Busy time sum(8 P / R) normalized by the update interval, clamped to [0, 1].
inline double channel_share(const UsageRecord& rec)
{
    if (!(rec.window_s > 0.0))
        throw ParameterError("update interval must be positive");
    double busy = 0.0;
    for (const auto& f : rec.frames) {
        if (!(f.bytes > 0.0 && f.bitrate_bps > 0.0))
            throw ParameterError("frame size and bit rate must be positive");
        busy += 8.0 * f.bytes / f.bitrate_bps;
    }
    return std::clamp(busy / rec.window_s, 0.0, 1.0);
}

enum class EstimatorKind { Threshold, Ratio };

struct EstimatorConfig {
    EstimatorKind kind = EstimatorKind::Ratio;
    std::optional<double> tau_threshold; // required for Threshold, no default
    double epsilon = 0.8;
    double interval_s = 0.0;
    int n_assoc = 1;

    void validate() const
    {
        if (n_assoc < 1)
            throw ParameterError("n_assoc must be positive");
        if (!(epsilon > 0.0 && epsilon <= 1.0))
            throw ParameterError("epsilon must be in (0, 1]");
        if (kind == EstimatorKind::Threshold) {
            if (!tau_threshold)
                throw ParameterError("threshold estimator requires tau");
            if (!(*tau_threshold >= 0.0 && *tau_threshold <= 1.0))
                throw ParameterError("tau must be in [0, 1]");
        }
    }
};

namespace detail {

inline void check_shares(std::span<const double> shares, const EstimatorConfig& cfg)
{
    if (shares.size() != static_cast<std::size_t>(cfg.n_assoc))
        throw ParameterError("expected " + std::to_string(cfg.n_assoc) + " shares, got " +
                             std::to_string(shares.size()));
}

} // namespace detail

/// Stations with share >= tau; at least 1.
inline int estimate_threshold(std::span<const double> shares, const EstimatorConfig& cfg)
{
    detail::check_shares(shares, cfg);
    if (!cfg.tau_threshold)
        throw ParameterError("threshold estimator requires tau");
    const double tau = *cfg.tau_threshold;
    const auto active = std::count_if(shares.begin(), shares.end(), [tau](double s) { return s >= tau; });
    return std::max(1, static_cast<int>(active));
}

/**
 * Ratio estimate: with fair share x = sum(tau) / n_assoc, count stations at or
 * above eps * x, then add floor(sum of the remaining shares / x). Clamped to
 * [1, n_assoc]. Returns nullopt when there was no traffic at all; the caller
 * keeps its previous estimate.
 */
inline std::optional<int> estimate_ratio(std::span<const double> shares, const EstimatorConfig& cfg)
{
    detail::check_shares(shares, cfg);
    const double total = std::accumulate(shares.begin(), shares.end(), 0.0);
    if (!(total > 0.0))
        return std::nullopt;
    const double x = total / static_cast<double>(cfg.n_assoc);
    const double cut = cfg.epsilon * x;
    int counted = 0;
    double leftover = 0.0;
    for (double s : shares) {
        if (s >= cut)
            ++counted;
        else
            leftover += s;
    }
    // the 1e-9 keeps exact multiples of x from flooring one short
    const int extra = static_cast<int>(std::floor(leftover / x + 1e-9));
    return std::clamp(counted + extra, 1, cfg.n_assoc);
}

inline std::optional<int> estimate(std::span<const double> shares, const EstimatorConfig& cfg)
{
    if (cfg.kind == EstimatorKind::Threshold)
        return estimate_threshold(shares, cfg);
    return estimate_ratio(shares, cfg);
}

struct BackoffFactorUpdate {
    std::uint64_t seq = 0;
    int n_active = 0;
    double r_penalty = 0.0;
    double r_rollback = 0.0;
    bool clamped = false; // n_active fell outside the optima table
};

/**
 * Turns active-station estimates into broadcast updates. A new update (with
 * the next sequence number) is produced only when the estimate changes.
 */
class UpdateBroadcaster {
public:
    explicit UpdateBroadcaster(std::vector<analytic::OptimaRow> optima) : optima_(std::move(optima))
    {
        if (optima_.empty())
            throw ParameterError("optima table is empty");
        std::sort(optima_.begin(), optima_.end(), [](const auto& a, const auto& b) { return a.n < b.n; });
    }

    std::optional<BackoffFactorUpdate> make_update(int n_active)
    {
        if (last_ && last_->n_active == n_active)
            return std::nullopt;
        BackoffFactorUpdate u;
        u.seq = last_ ? last_->seq + 1 : 1;
        u.n_active = n_active;
        const auto& row = lookup(n_active, u.clamped);
        u.r_penalty = row.r_penalty;
        u.r_rollback = row.r_rollback;
        last_ = u;
        return u;
    }

    const std::optional<BackoffFactorUpdate>& last() const { return last_; }

    const analytic::OptimaRow& lookup(int n, bool& clamped) const
    {
        clamped = n < optima_.front().n || n > optima_.back().n;
        if (n <= optima_.front().n)
            return optima_.front();
        if (n >= optima_.back().n)
            return optima_.back();
        const auto it = std::lower_bound(optima_.begin(), optima_.end(), n,
                                         [](const analytic::OptimaRow& r, int v) { return r.n < v; });
        if (it->n != n)
            clamped = true; // gap in the table: take the next row up
        return *it;
    }

private:
    std::vector<analytic::OptimaRow> optima_;
    std::optional<BackoffFactorUpdate> last_;
};

/**
 * The access point's per-interval loop: shares in, optional update out.
 * The estimator is pluggable so experiments can pin the estimate.
 */
class AdaptController {
public:
    using Estimator = std::function<std::optional<int>(std::span<const double>)>;

    AdaptController(EstimatorConfig cfg, std::uint64_t interval_slots, std::vector<analytic::OptimaRow> optima)
        : interval_slots_(interval_slots), broadcaster_(std::move(optima))
    {
        cfg.validate();
        estimator_ = [cfg](std::span<const double> shares) { return estimate(shares, cfg); };
        check_interval();
    }

    AdaptController(Estimator estimator, std::uint64_t interval_slots, std::vector<analytic::OptimaRow> optima)
        : interval_slots_(interval_slots), broadcaster_(std::move(optima)), estimator_(std::move(estimator))
    {
        check_interval();
    }

    std::uint64_t interval_slots() const { return interval_slots_; }

    std::optional<BackoffFactorUpdate> on_interval(std::span<const double> shares)
    {
        const auto n = estimator_(shares);
        if (n)
            last_estimate_ = *n;
        if (!last_estimate_)
            return std::nullopt;
        return broadcaster_.make_update(*last_estimate_);
    }

    std::optional<int> last_estimate() const { return last_estimate_; }

private:
    void check_interval() const
    {
        if (interval_slots_ == 0)
            throw ParameterError("update interval must be positive");
    }

    std::uint64_t interval_slots_;
    UpdateBroadcaster broadcaster_;
    Estimator estimator_;
    std::optional<int> last_estimate_;
};

} // namespace backoff_lab::adapt
