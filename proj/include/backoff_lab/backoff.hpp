#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "errors.hpp"
#include "random.hpp"

namespace backoff_lab {

inline constexpr int kBackoffStates = 7;   // states 0..6
inline constexpr int kMaxRetry = 6;        // a frame gets at most 7 attempts
inline constexpr int kCwMinMultiplier = 16;
inline constexpr double kMinFactor = 1.0;
inline constexpr double kMaxFactor = 4.0;
inline constexpr std::uint32_t kMaxWindow = 65535;

enum class Protocol { Standard, Penalty, Rollback, FixedCW };

/// How a penalized station leaves the penalty state.
///  Firmware: stays in state 6 as long as it keeps succeeding on the first attempt.
///  Markov:   one penalized frame (all attempts at the largest window), then back to 0.
enum class PenaltySemantics { Firmware, Markov };

inline std::string_view to_string(Protocol p)
{
    switch (p) {
    case Protocol::Standard: return "standard";
    case Protocol::Penalty: return "penalty";
    case Protocol::Rollback: return "rollback";
    case Protocol::FixedCW: return "fixed";
    }
    return "?";
}

inline Protocol protocol_from_string(std::string_view s)
{
    if (s == "standard") return Protocol::Standard;
    if (s == "penalty") return Protocol::Penalty;
    if (s == "rollback") return Protocol::Rollback;
    if (s == "fixed" || s == "fixedcw" || s == "fixed_cw") return Protocol::FixedCW;
    throw ParameterError("unknown protocol '" + std::string(s) + "'");
}

struct BackoffPolicy {
    Protocol kind = Protocol::Standard;
    double r = 2.0;
    std::uint32_t fixed_cw = 0;
    PenaltySemantics penalty_semantics = PenaltySemantics::Firmware;

    static BackoffPolicy standard(double r = 2.0) { return {Protocol::Standard, r, 0, PenaltySemantics::Firmware}; }
    static BackoffPolicy penalty(double r, PenaltySemantics sem = PenaltySemantics::Firmware)
    {
        return {Protocol::Penalty, r, 0, sem};
    }
    static BackoffPolicy rollback(double r) { return {Protocol::Rollback, r, 0, PenaltySemantics::Firmware}; }
    static BackoffPolicy fixed(std::uint32_t cw) { return {Protocol::FixedCW, 1.0, cw, PenaltySemantics::Firmware}; }

    void validate() const
    {
        if (kind == Protocol::FixedCW) {
            if (fixed_cw < 1 || fixed_cw > kMaxWindow)
                throw ParameterError("fixed_cw must be in [1, 65535], got " + std::to_string(fixed_cw));
            return;
        }
        if (!(r >= kMinFactor && r <= kMaxFactor))
            throw ParameterError("backoff factor r must be in [1.0, 4.0], got " + std::to_string(r));
    }

    friend bool operator==(const BackoffPolicy&, const BackoffPolicy&) = default;
};

/// Smallest 2^x - 1 that is >= value.
constexpr std::uint32_t mask_for(std::uint32_t value)
{
    std::uint32_t m = 0;
    while (m < value)
        m = (m << 1) | 1u;
    return m;
}

struct CwTable {
    std::array<std::uint32_t, kBackoffStates> windows{};
    std::array<std::uint32_t, kBackoffStates> masks{};

    friend bool operator==(const CwTable&, const CwTable&) = default;
};

/**
 * Precomputes the contention window ladder for a policy.
 *
 * windows[i] = floor(16 * r^i - 1); r = 2 yields the 802.11 ladder 15..1023.
 * There is no CW_max clamp: r = 4 tops out at exactly 65535.
 */
inline CwTable build_cw_table(const BackoffPolicy& policy)
{
    policy.validate();
    CwTable table;
    for (int i = 0; i < kBackoffStates; ++i) {
        std::uint32_t w;
        if (policy.kind == Protocol::FixedCW) {
            w = policy.fixed_cw;
        } else if (policy.r == 2.0) {
            w = (static_cast<std::uint32_t>(kCwMinMultiplier) << i) - 1u;
        } else {
            const double exact = kCwMinMultiplier * std::pow(policy.r, i) - 1.0;
            // one-ulp nudge: an integer-valued product must not floor to the integer below
            w = static_cast<std::uint32_t>(std::floor(std::nextafter(exact, std::numeric_limits<double>::infinity())));
        }
        table.windows[i] = w;
        table.masks[i] = mask_for(w);
    }
    return table;
}

/**
 * Uniform backoff in [0, cw] by masked rejection sampling.
 *
 * Takes a 16-bit word, ANDs it with the smallest 2^x - 1 >= cw and redraws
 * while the result exceeds cw. Words are consumed strictly in order, so a
 * given source yields a reproducible sequence of draws.
 */
template <WordSource Source>
std::uint32_t draw_backoff(std::uint32_t cw, Source& rng)
{
    if (cw > kMaxWindow)
        throw ParameterError("contention window exceeds 16-bit range: " + std::to_string(cw));
    const std::uint32_t mask = mask_for(cw);
    for (int guard = 0; guard < 1'000'000; ++guard) {
        const std::uint32_t h = static_cast<std::uint32_t>(rng.next_word()) & mask;
        if (h <= cw)
            return h;
    }
    throw std::logic_error("draw_backoff: rejection loop did not terminate (broken random source?)");
}

struct StationState {
    int state_index = 0;
    int retry = 0;
    bool penalized = false;
    std::uint32_t backoff_slots = 0;

    friend bool operator==(const StationState&, const StationState&) = default;
};

inline StationState initial_state(const BackoffPolicy& policy)
{
    StationState st;
    if (policy.kind == Protocol::Rollback)
        st.state_index = kBackoffStates - 1;
    return st;
}

/// Transition after the current frame was acknowledged.
inline StationState on_success(StationState st, const BackoffPolicy& policy)
{
    switch (policy.kind) {
    case Protocol::Standard:
    case Protocol::FixedCW:
        st.state_index = 0;
        break;
    case Protocol::Penalty:
        if (policy.penalty_semantics == PenaltySemantics::Markov && st.penalized) {
            st.state_index = 0;
            st.penalized = false;
        } else if (st.retry == 0) {
            st.state_index = kBackoffStates - 1;
            st.penalized = true;
        } else {
            st.state_index = 0;
            st.penalized = false;
        }
        break;
    case Protocol::Rollback:
        st.state_index = kBackoffStates - 1;
        break;
    }
    st.retry = 0;
    return st;
}

struct FailureTransition {
    StationState state;
    bool discarded = false;
};

/// Transition after an unacknowledged attempt. The 7th failure discards the frame.
inline FailureTransition on_failure(StationState st, const BackoffPolicy& policy)
{
    ++st.retry;
    if (st.retry > kMaxRetry) {
        st.retry = 0;
        st.penalized = false;
        st.state_index = policy.kind == Protocol::Rollback ? kBackoffStates - 1 : 0;
        return {st, true};
    }
    switch (policy.kind) {
    case Protocol::Standard:
    case Protocol::FixedCW:
        st.state_index = std::min(st.retry, kMaxRetry);
        break;
    case Protocol::Penalty:
        if (policy.penalty_semantics == PenaltySemantics::Markov && st.penalized) {
            st.state_index = kBackoffStates - 1;
        } else {
            st.state_index = std::min(st.retry, kMaxRetry);
            st.penalized = false;
        }
        break;
    case Protocol::Rollback:
        st.state_index = kMaxRetry - st.retry;
        break;
    }
    return {st, false};
}

inline std::uint32_t window_for_next_attempt(const StationState& st, const CwTable& table, const BackoffPolicy& policy)
{
    if (policy.kind == Protocol::Penalty && st.penalized && st.retry == 0)
        return table.windows[kBackoffStates - 1];
    return table.windows[static_cast<std::size_t>(st.state_index)];
}

} // namespace backoff_lab
