#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "backoff.hpp"
#include "errors.hpp"

namespace backoff_lab {

enum class Outcome { Success, Collision, ChannelLoss, Discard };

inline std::string_view to_string(Outcome o)
{
    switch (o) {
    case Outcome::Success: return "success";
    case Outcome::Collision: return "collision";
    case Outcome::ChannelLoss: return "loss";
    case Outcome::Discard: return "discard";
    }
    return "?";
}

inline std::optional<Outcome> outcome_from_string(std::string_view s)
{
    if (s == "success") return Outcome::Success;
    if (s == "collision") return Outcome::Collision;
    if (s == "loss") return Outcome::ChannelLoss;
    if (s == "discard") return Outcome::Discard;
    return std::nullopt;
}

inline bool is_attempt(Outcome o) { return o != Outcome::Discard; }
inline bool is_failure(Outcome o) { return o == Outcome::Collision || o == Outcome::ChannelLoss; }

/// One transmission attempt (or the discard that closes a frame).
/// `slot` is the slot the attempt started in; a Discard carries the slot of
/// the failed 7th attempt.
struct TxEvent {
    std::uint64_t slot = 0;
    std::uint32_t station = 0;
    Outcome outcome = Outcome::Success;
    int retry = 0;
    std::uint32_t cw = 0;
    std::uint32_t bytes = 0;

    friend bool operator==(const TxEvent&, const TxEvent&) = default;
};

struct Traffic {
    enum class Kind { Saturated, OnOff };
    Kind kind = Kind::Saturated;
    std::uint64_t period_slots = 0; // OnOff: on during even periods, off during odd ones
    std::uint64_t budget_bytes = 0; // 0 = unlimited; otherwise the station stops once delivered

    static Traffic saturated(std::uint64_t budget = 0) { return {Kind::Saturated, 0, budget}; }
    static Traffic on_off(std::uint64_t period, std::uint64_t budget = 0) { return {Kind::OnOff, period, budget}; }

    bool on_at(std::uint64_t slot) const
    {
        return kind == Kind::Saturated || (slot / period_slots) % 2 == 0;
    }
};

/// Who can carrier-sense whom. Symmetric, diagonal always true.
class SensingGraph {
public:
    SensingGraph() = default;
    explicit SensingGraph(std::size_t n) : n_(n), hears_(n * n, 1) {}

    static SensingGraph fully_connected(std::size_t n) { return SensingGraph(n); }

    /// Every pair mutually hidden; all stations still reach the access point.
    static SensingGraph all_hidden(std::size_t n)
    {
        SensingGraph g(n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b)
                g.hears_[a * n + b] = a == b;
        return g;
    }

    /// Stations spread evenly around the access point: each one senses only
    /// the `reach` nearest neighbours on either side of the ring.
    static SensingGraph ring(std::size_t n, std::size_t reach)
    {
        SensingGraph g(n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t d = a > b ? a - b : b - a;
                g.hears_[a * n + b] = std::min(d, n - d) <= reach;
            }
        return g;
    }

    void set(std::size_t a, std::size_t b, bool audible)
    {
        if (a == b)
            return;
        hears_[a * n_ + b] = audible;
        hears_[b * n_ + a] = audible;
    }

    bool hears(std::size_t a, std::size_t b) const { return hears_[a * n_ + b] != 0; }
    std::size_t size() const { return n_; }
    bool empty() const { return n_ == 0; }

    bool fully_connected_graph() const
    {
        for (auto v : hears_)
            if (!v)
                return false;
        return true;
    }

    void validate() const
    {
        for (std::size_t a = 0; a < n_; ++a) {
            if (!hears(a, a))
                throw ParameterError("sensing matrix diagonal must be true");
            for (std::size_t b = 0; b < n_; ++b)
                if (hears(a, b) != hears(b, a))
                    throw ParameterError("sensing matrix must be symmetric");
        }
    }

    friend bool operator==(const SensingGraph&, const SensingGraph&) = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint8_t> hears_;
};

struct SlotTiming {
    std::uint32_t tx_slots = 36;
    std::uint32_t collision_slots = 32;
};

/// Quantizes exchange durations to idle-slot units: round(t_s/t_n), round(t_c/t_n).
inline SlotTiming slots_from_timing(double t_s, double t_c, double t_n)
{
    if (!(t_n > 0.0))
        throw ParameterError("slot duration must be positive");
    return {static_cast<std::uint32_t>(std::lround(t_s / t_n)), static_cast<std::uint32_t>(std::lround(t_c / t_n))};
}

struct ScenarioConfig {
    std::size_t n_stations = 1;
    std::vector<BackoffPolicy> policies;   // one entry (shared) or one per station
    std::uint64_t duration_slots = 0;
    double slot_us = 9.0;
    std::uint32_t tx_slots = 36;
    std::uint32_t collision_slots = 32;
    std::uint32_t payload_bytes = 1540;
    double loss_prob = 0.0;
    SensingGraph sensing;                  // empty = fully connected
    std::vector<double> power_dbm;         // empty = equal powers
    double capture_threshold_db = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 1;
    std::vector<Traffic> traffic;          // empty = all saturated; one entry = shared
    bool record_slot_trace = false;

    const BackoffPolicy& policy_for(std::size_t i) const { return policies.size() == 1 ? policies[0] : policies.at(i); }

    Traffic traffic_for(std::size_t i) const
    {
        if (traffic.empty())
            return Traffic::saturated();
        return traffic.size() == 1 ? traffic[0] : traffic.at(i);
    }

    double power_for(std::size_t i) const { return power_dbm.empty() ? 0.0 : power_dbm.at(i); }

    bool hears(std::size_t a, std::size_t b) const { return sensing.empty() || sensing.hears(a, b); }

    void set_policy(const BackoffPolicy& p) { policies.assign(1, p); }

    void validate() const
    {
        if (n_stations == 0)
            throw ParameterError("n_stations must be positive");
        if (duration_slots == 0)
            throw ParameterError("duration_slots must be positive");
        if (policies.size() != 1 && policies.size() != n_stations)
            throw ParameterError("policies must have 1 or n_stations entries");
        for (const auto& p : policies)
            p.validate();
        if (!(slot_us > 0.0))
            throw ParameterError("slot_us must be positive");
        if (!(collision_slots >= 1 && tx_slots >= collision_slots))
            throw ParameterError("need tx_slots >= collision_slots >= 1");
        if (payload_bytes == 0)
            throw ParameterError("payload_bytes must be positive");
        if (!(loss_prob >= 0.0 && loss_prob <= 1.0))
            throw ParameterError("loss_prob must be in [0, 1]");
        if (!sensing.empty()) {
            if (sensing.size() != n_stations)
                throw ParameterError("sensing matrix size must equal n_stations");
            sensing.validate();
        }
        if (!power_dbm.empty() && power_dbm.size() != n_stations)
            throw ParameterError("power_dbm must have n_stations entries");
        if (std::isnan(capture_threshold_db))
            throw ParameterError("capture_threshold_db must not be NaN");
        if (traffic.size() > 1 && traffic.size() != n_stations)
            throw ParameterError("traffic must have 0, 1 or n_stations entries");
        for (const auto& t : traffic)
            if (t.kind == Traffic::Kind::OnOff && t.period_slots == 0)
                throw ParameterError("on/off traffic needs a positive period");
    }
};

struct StationCounters {
    std::uint64_t attempts = 0;
    std::uint64_t successes = 0;
    std::uint64_t collisions = 0;
    std::uint64_t losses = 0;
    std::uint64_t discards = 0;
    std::uint64_t success_bytes = 0;
    std::optional<std::uint64_t> completion_slot; // budgeted stations: slot the budget was met

    std::uint64_t failures() const { return collisions + losses; }
};

/// Debug view of one station in one slot (record_slot_trace).
struct SlotSample {
    std::uint64_t slot = 0;
    std::uint32_t station = 0;
    bool sensed_busy = false;
    bool contending = false;    // had a frame and was not transmitting / awaiting ACK
    std::uint32_t counter_before = 0;
    std::uint32_t counter_after = 0;
    bool started_tx = false;
};

struct UpdateRecord {
    std::uint64_t slot = 0;
    std::uint64_t seq = 0;
    int n_active = 0;
    double r_penalty = 0.0;
    double r_rollback = 0.0;
    bool clamped = false;
};

struct SimResult {
    std::vector<TxEvent> events;
    std::vector<StationCounters> per_station;
    std::uint64_t elapsed_slots = 0;
    std::vector<UpdateRecord> updates;
    std::vector<SlotSample> slot_trace;
};

} // namespace backoff_lab
