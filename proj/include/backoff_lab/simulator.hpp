#pragma once

// Slotted DCF simulator: N stations contend for one access point under a
// chosen backoff policy. Carrier sensing follows a symmetric sensing graph,
// backoff counters freeze in busy slots, overlapping hidden transmissions are
// resolved at the receiver by a power-gap capture rule, and sole transmissions
// are subject to Bernoulli loss.
//
// Air-time model per attempt starting at slot s:
//   data frame  [s, s + collision_slots)
//   ACK (on success, heard by every station)  [s + collision_slots, s + tx_slots)
// so a clean exchange keeps the channel busy for tx_slots and a failure for
// collision_slots.

#include <algorithm>
#include <cstdint>
#include <future>
#include <limits>
#include <optional>
#include <vector>

#include "adapt.hpp"
#include "backoff.hpp"
#include "metrics.hpp"
#include "random.hpp"
#include "scenario.hpp"
#include "trace_io.hpp"

namespace backoff_lab {

namespace detail {

class SlotEngine {
public:
    SlotEngine(const ScenarioConfig& cfg, adapt::AdaptController* controller)
        : cfg_(cfg), controller_(controller), channel_rng_(cfg.seed, 0xC4A77E1ull)
    {
        cfg_.validate();
        stations_.reserve(cfg_.n_stations);
        for (std::size_t i = 0; i < cfg_.n_stations; ++i) {
            Station s{.policy = cfg_.policy_for(i), .rng = RandomWords(cfg_.seed, i + 1)};
            s.table = build_cw_table(s.policy);
            s.st = initial_state(s.policy);
            s.traffic = cfg_.traffic_for(i);
            stations_.push_back(std::move(s));
        }
        result_.per_station.resize(cfg_.n_stations);
        interval_successes_.assign(cfg_.n_stations, 0);
        budgeted_ = std::any_of(stations_.begin(), stations_.end(), [](const Station& s) {
            return s.traffic.budget_bytes > 0;
        });
    }

    SimResult run()
    {
        const bool trace = cfg_.record_slot_trace;
        std::uint64_t t = 0;
        while (t < cfg_.duration_slots) {
            resolve_finished(t);
            if (budgeted_ && all_budgets_met()) {
                result_.elapsed_slots = std::max(t, ack_until_);
                return std::move(result_);
            }
            if (controller_ && t > 0 && t % controller_->interval_slots() == 0)
                run_controller(t);
            for (std::size_t i = 0; i < stations_.size(); ++i)
                maybe_enqueue(i, t);

            bool progressed = false;
            starters_.clear();
            for (std::size_t i = 0; i < stations_.size(); ++i) {
                auto& s = stations_[i];
                const bool contending = s.has_frame && !s.transmitting && t >= s.busy_until;
                SlotSample sample{t, static_cast<std::uint32_t>(i), false, contending, s.st.backoff_slots,
                                  s.st.backoff_slots, false};
                if (contending) {
                    sample.sensed_busy = senses_busy(i, t);
                    if (!sample.sensed_busy) {
                        progressed = true;
                        if (s.st.backoff_slots == 0) {
                            starters_.push_back(i);
                            sample.started_tx = true;
                        } else {
                            --s.st.backoff_slots;
                        }
                    }
                    sample.counter_after = s.st.backoff_slots;
                }
                if (trace)
                    result_.slot_trace.push_back(sample);
            }
            start_transmissions(t);
            t = (progressed || trace) ? t + 1 : next_event_after(t);
        }
        result_.elapsed_slots = cfg_.duration_slots;
        return std::move(result_);
    }

private:
    struct Station {
        BackoffPolicy policy;
        RandomWords rng;
        CwTable table{};
        std::optional<BackoffPolicy> pending{};
        StationState st{};
        Traffic traffic{};
        bool has_frame = false;
        bool transmitting = false;
        bool done = false;
        std::uint32_t cw = 0;
        std::uint64_t busy_until = 0;
        std::uint64_t delivered = 0;
    };

    struct Transmission {
        std::size_t station = 0;
        std::uint64_t start = 0;
        std::uint64_t end = 0;
        std::uint32_t cw = 0;
        bool audible_overlap = false;
        bool hidden_overlap = false;
        double strongest_rival_dbm = -std::numeric_limits<double>::infinity();
    };

    bool senses_busy(std::size_t i, std::uint64_t t) const
    {
        if (t < ack_until_)
            return true;
        for (const auto& tx : active_)
            if (tx.station != i && cfg_.hears(i, tx.station))
                return true;
        return false;
    }

    void draw(Station& s)
    {
        s.cw = window_for_next_attempt(s.st, s.table, s.policy);
        s.st.backoff_slots = draw_backoff(s.cw, s.rng);
    }

    // Frame boundary: pick up any broadcast backoff factor, then queue the next frame if traffic allows.
    void next_frame(std::size_t i, std::uint64_t t)
    {
        auto& s = stations_[i];
        if (s.pending) {
            s.policy = *s.pending;
            s.table = build_cw_table(s.policy);
            s.pending.reset();
        }
        s.has_frame = !s.done && s.traffic.on_at(t);
        if (s.has_frame)
            draw(s);
    }

    void maybe_enqueue(std::size_t i, std::uint64_t t)
    {
        auto& s = stations_[i];
        if (!s.has_frame && !s.transmitting && !s.done && s.traffic.on_at(t))
            next_frame(i, t);
    }

    void start_transmissions(std::uint64_t t)
    {
        for (std::size_t idx : starters_) {
            auto& s = stations_[idx];
            s.transmitting = true;
            Transmission tx{idx, t, t + cfg_.collision_slots, s.cw};
            for (auto& other : active_)
                mark_overlap(tx, other);
            for (auto& other : pending_start_)
                mark_overlap(tx, other);
            pending_start_.push_back(tx);
        }
        for (auto& tx : pending_start_)
            active_.push_back(tx);
        pending_start_.clear();
    }

    void mark_overlap(Transmission& a, Transmission& b) const
    {
        if (cfg_.hears(a.station, b.station)) {
            a.audible_overlap = b.audible_overlap = true;
            return;
        }
        a.hidden_overlap = b.hidden_overlap = true;
        a.strongest_rival_dbm = std::max(a.strongest_rival_dbm, cfg_.power_for(b.station));
        b.strongest_rival_dbm = std::max(b.strongest_rival_dbm, cfg_.power_for(a.station));
    }

    Outcome decide(const Transmission& tx)
    {
        if (tx.audible_overlap)
            return Outcome::Collision;
        if (tx.hidden_overlap) {
            const double gap = cfg_.power_for(tx.station) - tx.strongest_rival_dbm;
            return gap >= cfg_.capture_threshold_db ? Outcome::Success : Outcome::Collision;
        }
        if (cfg_.loss_prob > 0.0 && channel_rng_.next_unit() < cfg_.loss_prob)
            return Outcome::ChannelLoss;
        return Outcome::Success;
    }

    void resolve_finished(std::uint64_t t)
    {
        if (active_.empty())
            return;
        // all data frames last collision_slots, so finishing order == start order
        std::size_t kept = 0;
        for (std::size_t k = 0; k < active_.size(); ++k) {
            if (active_[k].end == t)
                resolve(active_[k], t);
            else
                active_[kept++] = active_[k];
        }
        active_.resize(kept);
    }

    void resolve(const Transmission& tx, std::uint64_t t)
    {
        const std::size_t i = tx.station;
        auto& s = stations_[i];
        auto& c = result_.per_station[i];
        s.transmitting = false;
        ++c.attempts;
        const Outcome outcome = decide(tx);
        result_.events.push_back(
            {tx.start, static_cast<std::uint32_t>(i), outcome, s.st.retry, tx.cw, cfg_.payload_bytes});

        if (outcome == Outcome::Success) {
            ++c.successes;
            c.success_bytes += cfg_.payload_bytes;
            s.delivered += cfg_.payload_bytes;
            ++interval_successes_[i];
            const std::uint64_t ack_end = tx.start + cfg_.tx_slots;
            s.busy_until = ack_end;
            ack_until_ = std::max(ack_until_, ack_end);
            s.st = on_success(s.st, s.policy);
            if (s.traffic.budget_bytes > 0 && s.delivered >= s.traffic.budget_bytes && !s.done) {
                s.done = true;
                c.completion_slot = ack_end;
            }
            next_frame(i, t);
            return;
        }

        if (outcome == Outcome::Collision)
            ++c.collisions;
        else
            ++c.losses;
        s.busy_until = t;
        const auto [next, discarded] = on_failure(s.st, s.policy);
        s.st = next;
        if (discarded) {
            ++c.discards;
            result_.events.push_back(
                {tx.start, static_cast<std::uint32_t>(i), Outcome::Discard, kMaxRetry, tx.cw, cfg_.payload_bytes});
            next_frame(i, t);
        } else {
            draw(s);
        }
    }

    bool all_budgets_met() const
    {
        for (const auto& s : stations_)
            if (s.traffic.budget_bytes > 0 && !s.done)
                return false;
        return true;
    }

    void run_controller(std::uint64_t t)
    {
        const std::uint64_t interval = controller_->interval_slots();
        const double window_s = static_cast<double>(interval) * cfg_.slot_us * 1e-6;
        // effective rate: one payload per successful exchange of tx_slots
        const double rate_bps = 8.0 * cfg_.payload_bytes / (cfg_.tx_slots * cfg_.slot_us * 1e-6);
        std::vector<double> shares(stations_.size());
        for (std::size_t i = 0; i < stations_.size(); ++i) {
            adapt::UsageRecord rec{static_cast<std::uint32_t>(i), {}, window_s};
            rec.frames.assign(interval_successes_[i], {static_cast<double>(cfg_.payload_bytes), rate_bps});
            shares[i] = adapt::channel_share(rec);
            interval_successes_[i] = 0;
        }
        const auto update = controller_->on_interval(shares);
        if (!update)
            return;
        result_.updates.push_back(
            {t, update->seq, update->n_active, update->r_penalty, update->r_rollback, update->clamped});
        for (auto& s : stations_) {
            BackoffPolicy next = s.pending.value_or(s.policy);
            if (next.kind == Protocol::Penalty)
                next.r = update->r_penalty;
            else if (next.kind == Protocol::Rollback)
                next.r = update->r_rollback;
            else
                continue;
            s.pending = next;
        }
    }

    std::uint64_t next_event_after(std::uint64_t t) const
    {
        std::uint64_t next = cfg_.duration_slots;
        auto consider = [&](std::uint64_t v) {
            if (v > t)
                next = std::min(next, v);
        };
        for (const auto& tx : active_)
            consider(tx.end);
        consider(ack_until_);
        for (const auto& s : stations_) {
            consider(s.busy_until);
            if (s.traffic.kind == Traffic::Kind::OnOff)
                consider((t / s.traffic.period_slots + 1) * s.traffic.period_slots);
        }
        if (controller_)
            consider((t / controller_->interval_slots() + 1) * controller_->interval_slots());
        return std::max(next, t + 1);
    }

    ScenarioConfig cfg_;
    adapt::AdaptController* controller_;
    RandomWords channel_rng_;
    std::vector<Station> stations_;
    std::vector<Transmission> active_;
    std::vector<Transmission> pending_start_;
    std::vector<std::size_t> starters_;
    std::vector<std::uint64_t> interval_successes_;
    std::uint64_t ack_until_ = 0;
    bool budgeted_ = false;
    SimResult result_;
};

} // namespace detail

/// Simulates the scenario. Identical configs (seed included) give identical results.
inline SimResult run(const ScenarioConfig& config)
{
    return detail::SlotEngine(config, nullptr).run();
}

/// Like run(), with the access point re-estimating active stations every
/// controller.interval_slots() slots and broadcasting backoff-factor updates
/// that stations adopt at their next frame boundary.
inline SimResult run_adaptive(const ScenarioConfig& config, adapt::AdaptController& controller)
{
    return detail::SlotEngine(config, &controller).run();
}

struct RunMetrics {
    double throughput_mbps = 0.0;
    double jain_median = 0.0;          // sliding window of jain_window successes
    double collision_rate = 0.0;       // all retries, whole run
    double collision_rate_median = 0.0; // all retries, median over 100 ms bins
};

/// Pushes a simulator result through the metrics pipeline (synthetic beacons, no truncation).
inline RunMetrics evaluate(const SimResult& result, const ScenarioConfig& cfg, std::size_t jain_window,
                           std::size_t beacons_per_bin = 10)
{
    RunMetrics m;
    m.throughput_mbps = aggregate_throughput_mbps(result, cfg.slot_us);
    const auto trace =
        metrics::align({metrics::synthesize_log(result.events, cfg.slot_us, 10.0, result.elapsed_slots)});
    const auto jain = metrics::jain_fairness(trace, cfg.n_stations, jain_window);
    m.jain_median = jain.empty() ? std::numeric_limits<double>::quiet_NaN() : metrics::median(jain);
    m.collision_rate = trace.entries.empty() ? 0.0 : metrics::collision_rate(trace);
    const auto per_bin = metrics::collision_rate_per_bin(trace, cfg.n_stations, beacons_per_bin);
    m.collision_rate_median = per_bin.empty() ? 0.0 : metrics::median(per_bin);
    return m;
}

struct SweepRow {
    double r = 0.0;
    double throughput_mbps = 0.0;
    double jain_index = 0.0;
    double collision_fraction = 0.0;
};

/**
 * One run per backoff factor (seed + index), every station's r replaced.
 * Runs execute concurrently; rows come back in input order. The Jain window
 * defaults to 10 N successes.
 */
inline std::vector<SweepRow> sweep_r(const ScenarioConfig& base, const std::vector<double>& r_values,
                                     std::size_t jain_window = 0)
{
    if (r_values.empty())
        throw ParameterError("sweep needs at least one r value");
    const std::size_t w = jain_window == 0 ? 10 * base.n_stations : jain_window;
    std::vector<std::future<SweepRow>> jobs;
    jobs.reserve(r_values.size());
    for (std::size_t k = 0; k < r_values.size(); ++k) {
        ScenarioConfig cfg = base;
        cfg.seed = base.seed + k;
        for (auto& p : cfg.policies)
            p.r = r_values[k];
        cfg.validate();
        jobs.push_back(std::async(std::launch::async, [cfg, w, r = r_values[k]] {
            const auto result = run(cfg);
            const auto m = evaluate(result, cfg, w);
            return SweepRow{r, m.throughput_mbps, m.jain_median, m.collision_rate};
        }));
    }
    std::vector<SweepRow> rows;
    rows.reserve(jobs.size());
    for (auto& j : jobs)
        rows.push_back(j.get());
    return rows;
}

} // namespace backoff_lab
