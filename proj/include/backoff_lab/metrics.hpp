#pragma once

// Measurement pipeline: multi-source log alignment on reference beacons,
// all-active truncation, beacon-count binning, sliding-window Jain fairness,
// per-bin throughput and the two collision-rate conventions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "scenario.hpp"

namespace backoff_lab::metrics {

struct TraceEntry {
    double time_us = 0.0;
    std::uint32_t station = 0;
    Outcome outcome = Outcome::Success;
    int retry = 0;
    std::uint32_t cw = 0;
    std::uint32_t bytes = 0;

    friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

/// One machine's log on its own clock.
struct RawLog {
    std::uint32_t source_id = 0;
    std::vector<TraceEntry> entries; // local time, non-decreasing
    std::vector<double> beacons;     // local time of each received beacon
};

struct AlignedTrace {
    std::vector<TraceEntry> entries; // global time, sorted
    std::vector<double> bin_edges;   // global beacon times
    double window_start = -std::numeric_limits<double>::infinity();
    double window_end = std::numeric_limits<double>::infinity();

    friend bool operator==(const AlignedTrace&, const AlignedTrace&) = default;
};

inline double median(std::vector<double> v)
{
    if (v.empty())
        return std::numeric_limits<double>::quiet_NaN();
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1)
        return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/**
 * Fabricates a single-source log for a simulator trace: event times are
 * slot * slot_us and beacons are placed exactly every interval from 0 until
 * past the last event, so the pipeline treats synthetic and recorded logs alike.
 */
inline RawLog synthesize_log(const std::vector<TxEvent>& events, double slot_us, double beacon_interval_ms = 10.0,
                             std::uint64_t end_slot = 0)
{
    RawLog log;
    log.entries.reserve(events.size());
    double last = static_cast<double>(end_slot) * slot_us;
    for (const auto& e : events) {
        const double t = static_cast<double>(e.slot) * slot_us;
        log.entries.push_back({t, e.station, e.outcome, e.retry, e.cw, e.bytes});
        last = std::max(last, t);
    }
    const double interval_us = beacon_interval_ms * 1000.0;
    const auto count = static_cast<std::size_t>(std::floor(last / interval_us)) + 2;
    log.beacons.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        log.beacons.push_back(static_cast<double>(i) * interval_us);
    return log;
}

/// Treats an aligned trace as a single already-global source.
inline RawLog as_raw_log(const AlignedTrace& trace)
{
    return {0, trace.entries, trace.bin_edges};
}

/**
 * Maps every source onto the first source's beacon axis.
 *
 * Beacon j of each source is pinned to (b_j - b_0) of the reference; local
 * times in between are interpolated linearly, and times outside the beacon
 * range extend the nearest segment. Beacon counts may differ by at most one;
 * the shorter count is used. Reference beacon spacing must stay within
 * `jitter_tolerance` (fraction) of the nominal interval.
 */
inline AlignedTrace align(const std::vector<RawLog>& logs, double beacon_interval_ms = 10.0,
                          double jitter_tolerance = 0.5)
{
    if (logs.empty())
        throw AlignmentError("no logs to align");
    std::size_t min_count = std::numeric_limits<std::size_t>::max();
    std::size_t max_count = 0;
    for (const auto& log : logs) {
        if (log.beacons.size() < 2)
            throw AlignmentError("source " + std::to_string(log.source_id) + " has fewer than 2 beacons");
        min_count = std::min(min_count, log.beacons.size());
        max_count = std::max(max_count, log.beacons.size());
    }
    if (max_count - min_count > 1) {
        std::string names;
        for (const auto& log : logs)
            if (log.beacons.size() == min_count || log.beacons.size() == max_count)
                names += (names.empty() ? "" : ", ") + std::to_string(log.source_id) + " (" +
                         std::to_string(log.beacons.size()) + " beacons)";
        throw AlignmentError("beacon count mismatch > 1 between sources: " + names);
    }

    const auto& ref = logs.front().beacons;
    std::vector<double> global(min_count);
    for (std::size_t j = 0; j < min_count; ++j)
        global[j] = ref[j] - ref[0];

    const double nominal = beacon_interval_ms * 1000.0;
    for (std::size_t j = 1; j < min_count; ++j) {
        const double gap = global[j] - global[j - 1];
        if (std::abs(gap - nominal) > jitter_tolerance * nominal)
            throw AlignmentError("beacon interval " + std::to_string(gap) + " us outside jitter tolerance");
    }

    AlignedTrace out;
    for (const auto& log : logs) {
        const auto& b = log.beacons;
        for (std::size_t i = 1; i < log.entries.size(); ++i)
            if (log.entries[i].time_us < log.entries[i - 1].time_us)
                throw DataError("source " + std::to_string(log.source_id) + " timestamps decrease");
        for (const auto& e : log.entries) {
            auto it = std::upper_bound(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(min_count), e.time_us);
            std::size_t seg = it == b.begin() ? 0 : static_cast<std::size_t>(it - b.begin()) - 1;
            seg = std::min(seg, min_count - 2);
            const double scale = (global[seg + 1] - global[seg]) / (b[seg + 1] - b[seg]);
            TraceEntry g = e;
            g.time_us = global[seg] + (e.time_us - b[seg]) * scale;
            out.entries.push_back(g);
        }
    }
    std::stable_sort(out.entries.begin(), out.entries.end(),
                     [](const TraceEntry& a, const TraceEntry& b) { return a.time_us < b.time_us; });
    out.bin_edges = std::move(global);
    return out;
}

/**
 * Keeps only the period in which every station was provably contending:
 * from the latest first full-size packet to the earliest last one.
 */
inline AlignedTrace truncate_all_active(const AlignedTrace& trace, std::size_t n_stations,
                                        std::uint32_t full_size_bytes = 1540)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> first(n_stations, inf);
    std::vector<double> last(n_stations, -inf);
    for (const auto& e : trace.entries) {
        if (e.bytes != full_size_bytes || e.station >= n_stations)
            continue;
        first[e.station] = std::min(first[e.station], e.time_us);
        last[e.station] = std::max(last[e.station], e.time_us);
    }
    for (std::size_t s = 0; s < n_stations; ++s)
        if (first[s] == inf)
            throw DataError("station " + std::to_string(s) + " has no full-size packet");
    const double start = *std::max_element(first.begin(), first.end());
    const double end = *std::min_element(last.begin(), last.end());
    if (start > end)
        throw DataError("no all-active period");

    AlignedTrace out;
    out.window_start = std::max(start, trace.window_start);
    out.window_end = std::min(end, trace.window_end);
    for (const auto& e : trace.entries)
        if (e.time_us >= start && e.time_us <= end)
            out.entries.push_back(e);
    for (double edge : trace.bin_edges)
        if (edge >= start && edge <= end)
            out.bin_edges.push_back(edge);
    return out;
}

// ---- binning --------------------------------------------------------------

struct StationBin {
    std::uint64_t successes = 0;
    std::uint64_t failures = 0;
    std::uint64_t attempts = 0;
};

struct BinStats {
    std::vector<double> start_us;
    std::vector<double> end_us;
    std::vector<std::vector<StationBin>> stations; // [bin][station]
    std::vector<std::uint64_t> success_bytes;      // per bin
    std::uint64_t unbinned = 0;                    // entries outside [first edge, last edge)

    std::size_t size() const { return start_us.size(); }

    double bytes_per_second(std::size_t bin) const
    {
        return static_cast<double>(success_bytes[bin]) / ((end_us[bin] - start_us[bin]) * 1e-6);
    }
};

/**
 * Groups `beacons_per_bin` consecutive beacon intervals into one bin. Bins are
 * half-open [start, end); a trailing group with fewer beacons is kept.
 */
inline BinStats bin_stats(const AlignedTrace& trace, std::size_t n_stations, std::size_t beacons_per_bin = 10)
{
    if (beacons_per_bin == 0)
        throw ParameterError("beacons_per_bin must be positive");
    BinStats out;
    const auto& edges = trace.bin_edges;
    if (edges.size() < 2) {
        out.unbinned = trace.entries.size();
        return out;
    }
    for (std::size_t i = 0; i + 1 < edges.size(); i += beacons_per_bin) {
        out.start_us.push_back(edges[i]);
        out.end_us.push_back(edges[std::min(i + beacons_per_bin, edges.size() - 1)]);
    }
    out.stations.assign(out.size(), std::vector<StationBin>(n_stations));
    out.success_bytes.assign(out.size(), 0);

    for (const auto& e : trace.entries) {
        if (e.time_us < out.start_us.front() || e.time_us >= out.end_us.back()) {
            ++out.unbinned;
            continue;
        }
        const auto it = std::upper_bound(out.start_us.begin(), out.start_us.end(), e.time_us);
        const auto bin = static_cast<std::size_t>(it - out.start_us.begin()) - 1;
        if (e.station >= n_stations)
            throw DataError("station id " + std::to_string(e.station) + " out of range");
        auto& sb = out.stations[bin][e.station];
        if (!is_attempt(e.outcome))
            continue;
        ++sb.attempts;
        if (e.outcome == Outcome::Success) {
            ++sb.successes;
            out.success_bytes[bin] += e.bytes;
        } else {
            ++sb.failures;
        }
    }
    return out;
}

struct BinThroughput {
    std::size_t bin = 0;
    double start_us = 0.0;
    double end_us = 0.0;
    double bytes_per_second = 0.0;
};

struct ThroughputSeries {
    std::vector<BinThroughput> bins;
    double median_bytes_per_second = 0.0;
};

inline ThroughputSeries throughput_per_bin(const AlignedTrace& trace, std::size_t beacons_per_bin = 10)
{
    std::uint32_t max_station = 0;
    for (const auto& e : trace.entries)
        max_station = std::max(max_station, e.station);
    const auto stats = bin_stats(trace, static_cast<std::size_t>(max_station) + 1, beacons_per_bin);
    ThroughputSeries out;
    std::vector<double> values;
    for (std::size_t b = 0; b < stats.size(); ++b) {
        const double bps = stats.bytes_per_second(b);
        out.bins.push_back({b, stats.start_us[b], stats.end_us[b], bps});
        values.push_back(bps);
    }
    out.median_bytes_per_second = values.empty() ? 0.0 : median(values);
    return out;
}

// ---- fairness -------------------------------------------------------------

enum class FairnessBasis { Successes, Attempts };

/**
 * Jain's index F = (sum tau)^2 / (n * sum tau^2) over a window of w
 * consecutive packets sliding one packet at a time. tau_j is station j's share
 * of the window. Returns one value per window position; empty if the trace
 * holds fewer than w packets.
 */
inline std::vector<double> jain_fairness(const AlignedTrace& trace, std::size_t n, std::size_t w,
                                         FairnessBasis basis = FairnessBasis::Successes)
{
    if (n == 0)
        throw ParameterError("station count must be positive");
    if (w < n)
        throw ParameterError("window must hold at least n packets");
    std::vector<std::uint32_t> seq;
    for (const auto& e : trace.entries) {
        const bool counted = basis == FairnessBasis::Successes ? e.outcome == Outcome::Success : is_attempt(e.outcome);
        if (!counted)
            continue;
        if (e.station >= n)
            throw DataError("station id " + std::to_string(e.station) + " out of range");
        seq.push_back(e.station);
    }
    std::vector<double> out;
    if (seq.size() < w)
        return out;
    out.reserve(seq.size() - w + 1);

    std::vector<std::int64_t> counts(n, 0);
    std::int64_t sum_sq = 0;
    auto bump = [&](std::uint32_t s, std::int64_t d) {
        sum_sq -= counts[s] * counts[s];
        counts[s] += d;
        sum_sq += counts[s] * counts[s];
    };
    for (std::size_t i = 0; i < w; ++i)
        bump(seq[i], 1);
    const double total_sq = static_cast<double>(w) * static_cast<double>(w);
    out.push_back(total_sq / (static_cast<double>(n) * static_cast<double>(sum_sq)));
    for (std::size_t i = w; i < seq.size(); ++i) {
        bump(seq[i - w], -1);
        bump(seq[i], 1);
        out.push_back(total_sq / (static_cast<double>(n) * static_cast<double>(sum_sq)));
    }
    return out;
}

/// Jain's index of an explicit share vector.
inline double jain_index(const std::vector<double>& shares)
{
    if (shares.empty())
        throw ParameterError("empty share vector");
    double sum = 0.0, sq = 0.0;
    for (double t : shares) {
        sum += t;
        sq += t * t;
    }
    if (sq == 0.0)
        throw ParameterError("all-zero share vector");
    return sum * sum / (static_cast<double>(shares.size()) * sq);
}

// ---- collisions -----------------------------------------------------------

enum class CollisionMode {
    PacketsWithRetry, // frames that needed more than one attempt
    AllRetries        // failed attempts / all attempts
};

inline double collision_rate(const std::vector<TraceEntry>& entries, CollisionMode mode = CollisionMode::AllRetries)
{
    std::uint64_t attempts = 0, failures = 0, frames = 0, retried = 0;
    for (const auto& e : entries) {
        switch (e.outcome) {
        case Outcome::Success:
            ++attempts;
            ++frames;
            if (e.retry > 0)
                ++retried;
            break;
        case Outcome::Collision:
        case Outcome::ChannelLoss:
            ++attempts;
            ++failures;
            break;
        case Outcome::Discard:
            ++frames;
            ++retried;
            break;
        }
    }
    if (mode == CollisionMode::AllRetries)
        return attempts == 0 ? 0.0 : static_cast<double>(failures) / static_cast<double>(attempts);
    return frames == 0 ? 0.0 : static_cast<double>(retried) / static_cast<double>(frames);
}

inline double collision_rate(const AlignedTrace& trace, CollisionMode mode = CollisionMode::AllRetries)
{
    if (trace.entries.empty())
        throw DataError("collision rate of an empty trace");
    return collision_rate(trace.entries, mode);
}

/// AllRetries collision rate per bin (bins without attempts are skipped).
inline std::vector<double> collision_rate_per_bin(const AlignedTrace& trace, std::size_t n_stations,
                                                  std::size_t beacons_per_bin = 10)
{
    const auto stats = bin_stats(trace, n_stations, beacons_per_bin);
    std::vector<double> out;
    for (const auto& bin : stats.stations) {
        std::uint64_t a = 0, f = 0;
        for (const auto& sb : bin) {
            a += sb.attempts;
            f += sb.failures;
        }
        if (a > 0)
            out.push_back(static_cast<double>(f) / static_cast<double>(a));
    }
    return out;
}

} // namespace backoff_lab::metrics
