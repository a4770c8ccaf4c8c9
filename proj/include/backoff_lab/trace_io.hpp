#pragma once

// Stable on-disk formats for simulator output.
//
// Trace file: optional '#' comment lines, a header row, then one event per line
//   slot,station,outcome,retry,cw,bytes
// where outcome is one of success|collision|loss|discard.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "scenario.hpp"

namespace backoff_lab {

inline constexpr std::string_view kTraceHeader = "slot,station,outcome,retry,cw,bytes";

/// 64-bit FNV-1a, hex encoded. Used as the `#config-hash` provenance tag.
inline std::string config_hash(std::string_view text)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline void write_trace(std::ostream& os, const std::vector<TxEvent>& events, const std::string& hash)
{
    os << "#config-hash " << hash << '\n' << kTraceHeader << '\n';
    for (const auto& e : events)
        os << e.slot << ',' << e.station << ',' << to_string(e.outcome) << ',' << e.retry << ',' << e.cw << ','
           << e.bytes << '\n';
}

struct ParsedTrace {
    std::vector<TxEvent> events;
    std::size_t dropped = 0; // malformed lines skipped
};

namespace detail {

template <typename T>
bool parse_field(std::string_view field, T& out)
{
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

inline std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        fields.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return fields;
}

} // namespace detail

inline std::optional<TxEvent> parse_trace_line(std::string_view line)
{
    if (!line.empty() && line.back() == '\r')
        line.remove_suffix(1);
    const auto f = detail::split_commas(line);
    if (f.size() != 6)
        return std::nullopt;
    TxEvent e;
    const auto outcome = outcome_from_string(f[2]);
    if (!outcome || !detail::parse_field(f[0], e.slot) || !detail::parse_field(f[1], e.station) ||
        !detail::parse_field(f[3], e.retry) || !detail::parse_field(f[4], e.cw) || !detail::parse_field(f[5], e.bytes))
        return std::nullopt;
    if (e.retry < 0 || e.retry > kMaxRetry)
        return std::nullopt;
    e.outcome = *outcome;
    return e;
}

/// Reads a trace, dropping (and counting) lines that do not parse.
inline ParsedTrace read_trace(std::istream& is)
{
    ParsedTrace out;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        if (!header_seen && line.rfind("slot,", 0) == 0) {
            header_seen = true;
            continue;
        }
        if (auto e = parse_trace_line(line))
            out.events.push_back(*e);
        else
            ++out.dropped;
    }
    return out;
}

inline ParsedTrace read_trace(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open trace '" + path.string() + "'");
    return read_trace(in);
}

inline double aggregate_throughput_mbps(const SimResult& result, double slot_us)
{
    if (result.elapsed_slots == 0)
        return 0.0;
    std::uint64_t bytes = 0;
    for (const auto& c : result.per_station)
        bytes += c.success_bytes;
    return static_cast<double>(bytes) * 8.0 / (static_cast<double>(result.elapsed_slots) * slot_us);
}

/// failures / attempts over the whole run.
inline double collision_fraction(const SimResult& result)
{
    std::uint64_t attempts = 0, failures = 0;
    for (const auto& c : result.per_station) {
        attempts += c.attempts;
        failures += c.failures();
    }
    return attempts == 0 ? 0.0 : static_cast<double>(failures) / static_cast<double>(attempts);
}

inline nlohmann::ordered_json summary_json(const SimResult& result, const ScenarioConfig& cfg, const std::string& hash)
{
    nlohmann::ordered_json j;
    j["config_hash"] = hash;
    j["n_stations"] = cfg.n_stations;
    j["seed"] = cfg.seed;
    j["elapsed_slots"] = result.elapsed_slots;
    j["slot_us"] = cfg.slot_us;
    j["events"] = result.events.size();
    j["aggregate_throughput_mbps"] = aggregate_throughput_mbps(result, cfg.slot_us);
    j["collision_fraction"] = collision_fraction(result);
    auto stations = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < result.per_station.size(); ++i) {
        const auto& c = result.per_station[i];
        nlohmann::ordered_json s;
        s["station"] = i;
        s["attempts"] = c.attempts;
        s["successes"] = c.successes;
        s["collisions"] = c.collisions;
        s["losses"] = c.losses;
        s["discards"] = c.discards;
        s["success_bytes"] = c.success_bytes;
        if (c.completion_slot)
            s["completion_slot"] = *c.completion_slot;
        else
            s["completion_slot"] = nullptr;
        stations.push_back(std::move(s));
    }
    j["stations"] = std::move(stations);
    j["updates"] = result.updates.size();
    return j;
}

inline void write_update_log(std::ostream& os, const std::vector<UpdateRecord>& updates, const std::string& hash)
{
    os << "#config-hash " << hash << '\n' << "slot,seq,n_active,r_penalty,r_rollback\n";
    os << std::setprecision(10);
    for (const auto& u : updates)
        os << u.slot << ',' << u.seq << ',' << u.n_active << ',' << u.r_penalty << ',' << u.r_rollback << '\n';
}

/// Writes through a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out)
            throw DataError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

} // namespace backoff_lab
