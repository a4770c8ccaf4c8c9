#pragma once

// Experiment files: YAML with strict key checking. Every diagnostic carries
// the line number and the dotted field path, e.g.
//   line 7: scenario.policy.r: backoff factor r must be in [1.0, 4.0], got 0.5
//
// scenario:
//   stations: 12
//   duration_slots: 1000000
//   seed: 1
//   policy: { kind: penalty, r: 1.72, penalty_semantics: firmware }
//   sensing: { hidden_pairs: [[0, 1]] }      # or matrix / ring_reach / all_hidden
//   traffic: { on_off_stations: [6, 7], period_slots: 1000000,
//              budget_stations: [0, 1], budget_bytes: 8000000 }
// sweep: [1.2, 1.4, 1.6]
// metrics: { window: 120, beacons_per_bin: 10 }
// adapt: { estimator: ratio, epsilon: 0.8, interval_slots: 100000 }

#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "adapt.hpp"
#include "backoff.hpp"
#include "errors.hpp"
#include "scenario.hpp"

namespace backoff_lab::config {

class ConfigError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

struct MetricsOptions {
    std::size_t window = 0; // 0 = 10 * stations
    std::size_t beacons_per_bin = 10;
    std::uint32_t full_size_bytes = 1540;
};

struct AdaptOptions {
    adapt::EstimatorKind estimator = adapt::EstimatorKind::Ratio;
    double epsilon = 0.8;
    std::optional<double> tau;
    std::uint64_t interval_slots = 100000;
    std::string optima_path; // empty = solve for 2..stations with default constants
};

struct ExperimentSpec {
    ScenarioConfig scenario;
    std::optional<std::vector<double>> sweep;
    MetricsOptions metrics;
    AdaptOptions adapt;
};

namespace detail {

inline std::string where(const YAML::Node& node, const std::string& path)
{
    const auto mark = node.Mark();
    const std::string line = mark.line >= 0 ? "line " + std::to_string(mark.line + 1) + ": " : "";
    return line + path;
}

[[noreturn]] inline void fail(const YAML::Node& node, const std::string& path, const std::string& msg)
{
    throw ConfigError(where(node, path) + ": " + msg);
}

inline void require_map(const YAML::Node& node, const std::string& path)
{
    if (!node.IsMap())
        fail(node, path, "expected a mapping");
}

inline void reject_unknown(const YAML::Node& node, const std::string& path, const std::set<std::string>& known)
{
    require_map(node, path);
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!known.count(key))
            fail(kv.first, path.empty() ? key : path + "." + key, "unknown key");
    }
}

template <typename T>
T get(const YAML::Node& node, const std::string& path)
{
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        fail(node, path, "invalid value '" + (node.IsScalar() ? node.Scalar() : std::string("<non-scalar>")) + "'");
    }
}

template <typename T>
void read_opt(const YAML::Node& parent, const std::string& key, const std::string& path, T& out)
{
    if (const auto n = parent[key])
        out = get<T>(n, path + "." + key);
}

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline BackoffPolicy parse_policy(const YAML::Node& node, const std::string& path)
{
    reject_unknown(node, path, {"kind", "r", "fixed_cw", "penalty_semantics"});
    if (!node["kind"])
        fail(node, path + ".kind", "missing required key");
    BackoffPolicy p;
    try {
        p.kind = protocol_from_string(get<std::string>(node["kind"], path + ".kind"));
    } catch (const ConfigError&) {
        throw;
    } catch (const ParameterError& e) {
        fail(node["kind"], path + ".kind", e.what());
    }
    read_opt(node, "r", path, p.r);
    if (const auto n = node["fixed_cw"]) {
        const auto v = get<std::int64_t>(n, path + ".fixed_cw");
        if (v < 1 || v > kMaxWindow)
            fail(n, path + ".fixed_cw", "must be in [1, 65535]");
        p.fixed_cw = static_cast<std::uint32_t>(v);
    }
    if (const auto n = node["penalty_semantics"]) {
        const auto s = get<std::string>(n, path + ".penalty_semantics");
        if (s == "firmware")
            p.penalty_semantics = PenaltySemantics::Firmware;
        else if (s == "markov")
            p.penalty_semantics = PenaltySemantics::Markov;
        else
            fail(n, path + ".penalty_semantics", "expected firmware|markov");
    }
    try {
        p.validate();
    } catch (const ParameterError& e) {
        const auto field = p.kind == Protocol::FixedCW ? "fixed_cw" : "r";
        const auto n = node[field];
        fail(n ? n : node, path + "." + field, e.what());
    }
    return p;
}

inline std::vector<std::size_t> station_list(const YAML::Node& node, const std::string& path, std::size_t n)
{
    if (!node.IsSequence())
        fail(node, path, "expected a list of station ids");
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < node.size(); ++k) {
        const auto id = get<std::int64_t>(node[k], path + "[" + std::to_string(k) + "]");
        if (id < 0 || static_cast<std::size_t>(id) >= n)
            fail(node[k], path + "[" + std::to_string(k) + "]", "station id out of range");
        out.push_back(static_cast<std::size_t>(id));
    }
    return out;
}

inline SensingGraph parse_sensing(const YAML::Node& node, const std::string& path, std::size_t n)
{
    if (node.IsScalar()) {
        const auto s = get<std::string>(node, path);
        if (s == "full")
            return SensingGraph::fully_connected(n);
        if (s == "all_hidden")
            return SensingGraph::all_hidden(n);
        fail(node, path, "expected full|all_hidden or a mapping");
    }
    reject_unknown(node, path, {"hidden_pairs", "matrix", "ring_reach"});
    if (const auto m = node["matrix"]) {
        const auto mp = path + ".matrix";
        if (!m.IsSequence() || m.size() != n)
            fail(m, mp, "expected " + std::to_string(n) + " rows");
        SensingGraph g(n);
        for (std::size_t a = 0; a < n; ++a) {
            if (!m[a].IsSequence() || m[a].size() != n)
                fail(m[a], mp, "row " + std::to_string(a) + " must have " + std::to_string(n) + " entries");
            for (std::size_t b = 0; b < n; ++b) {
                const bool v = get<int>(m[a][b], mp) != 0;
                if (a == b && !v)
                    fail(m[a][b], mp, "diagonal must be 1");
                if (b > a)
                    g.set(a, b, v);
                else if (b < a && g.hears(a, b) != v)
                    fail(m[a][b], mp, "matrix must be symmetric");
            }
        }
        return g;
    }
    if (const auto r = node["ring_reach"])
        return SensingGraph::ring(n, get<std::size_t>(r, path + ".ring_reach"));
    SensingGraph g(n);
    if (const auto pairs = node["hidden_pairs"]) {
        const auto pp = path + ".hidden_pairs";
        if (!pairs.IsSequence())
            fail(pairs, pp, "expected a list of [a, b] pairs");
        for (const auto& pair : pairs) {
            const auto ids = station_list(pair, pp, n);
            if (ids.size() != 2)
                fail(pair, pp, "each pair needs exactly two station ids");
            g.set(ids[0], ids[1], false);
        }
    }
    return g;
}

inline void parse_traffic(const YAML::Node& node, const std::string& path, ScenarioConfig& sc)
{
    reject_unknown(node, path, {"on_off_stations", "period_slots", "budget_stations", "budget_bytes"});
    const std::size_t n = sc.n_stations;
    std::vector<Traffic> traffic(n, Traffic::saturated());
    std::uint64_t period = 0;
    read_opt(node, "period_slots", path, period);
    if (const auto on = node["on_off_stations"]) {
        if (period == 0)
            fail(node, path + ".period_slots", "required (and positive) when on_off_stations is set");
        for (auto id : station_list(on, path + ".on_off_stations", n))
            traffic[id] = Traffic::on_off(period);
    }
    std::uint64_t budget = 0;
    read_opt(node, "budget_bytes", path, budget);
    if (const auto b = node["budget_stations"]) {
        if (budget == 0)
            fail(node, path + ".budget_bytes", "required (and positive) when budget_stations is set");
        for (auto id : station_list(b, path + ".budget_stations", n))
            traffic[id].budget_bytes = budget;
    } else if (budget > 0) {
        for (auto& t : traffic)
            t.budget_bytes = budget;
    }
    sc.traffic = std::move(traffic);
}

inline ScenarioConfig parse_scenario(const YAML::Node& node, const std::string& path)
{
    reject_unknown(node, path,
                   {"stations", "duration_slots", "slot_us", "tx_slots", "collision_slots", "payload_bytes",
                    "loss_prob", "seed", "capture_threshold_db", "power_dbm", "sensing", "policy", "policies",
                    "traffic"});
    ScenarioConfig sc;
    for (const char* key : {"stations", "duration_slots"})
        if (!node[key])
            fail(node, join(path, key), "missing required key");
    const auto stations = get<std::int64_t>(node["stations"], join(path, "stations"));
    if (stations < 1)
        fail(node["stations"], join(path, "stations"), "must be positive");
    sc.n_stations = static_cast<std::size_t>(stations);
    const auto duration = get<std::int64_t>(node["duration_slots"], join(path, "duration_slots"));
    if (duration < 1)
        fail(node["duration_slots"], join(path, "duration_slots"), "must be positive");
    sc.duration_slots = static_cast<std::uint64_t>(duration);
    read_opt(node, "slot_us", path, sc.slot_us);
    read_opt(node, "tx_slots", path, sc.tx_slots);
    read_opt(node, "collision_slots", path, sc.collision_slots);
    read_opt(node, "payload_bytes", path, sc.payload_bytes);
    read_opt(node, "loss_prob", path, sc.loss_prob);
    read_opt(node, "seed", path, sc.seed);
    read_opt(node, "capture_threshold_db", path, sc.capture_threshold_db);
    if (const auto p = node["power_dbm"]) {
        sc.power_dbm = get<std::vector<double>>(p, join(path, "power_dbm"));
        if (sc.power_dbm.size() != sc.n_stations)
            fail(p, join(path, "power_dbm"), "needs one entry per station");
    }
    if (const auto s = node["sensing"])
        sc.sensing = parse_sensing(s, join(path, "sensing"), sc.n_stations);

    const auto pol = node["policy"];
    const auto pols = node["policies"];
    if (pol && pols)
        fail(pols, join(path, "policies"), "give either policy or policies, not both");
    if (pols) {
        if (!pols.IsSequence() || pols.size() != sc.n_stations)
            fail(pols, join(path, "policies"), "needs one entry per station");
        for (std::size_t i = 0; i < pols.size(); ++i)
            sc.policies.push_back(parse_policy(pols[i], join(path, "policies") + "[" + std::to_string(i) + "]"));
    } else if (pol) {
        sc.policies.push_back(parse_policy(pol, join(path, "policy")));
    } else {
        fail(node, join(path, "policy"), "missing required key");
    }
    if (const auto t = node["traffic"])
        parse_traffic(t, join(path, "traffic"), sc);

    try {
        sc.validate();
    } catch (const ParameterError& e) {
        fail(node, path, e.what());
    }
    return sc;
}

} // namespace detail

inline ExperimentSpec parse_experiment(const std::string& text)
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": parse error: " + e.msg);
    }
    if (!root || root.IsNull())
        throw ConfigError("empty configuration");
    using namespace detail;
    reject_unknown(root, "", {"scenario", "sweep", "metrics", "adapt"});
    if (!root["scenario"])
        fail(root, "scenario", "missing required key");

    ExperimentSpec spec;
    spec.scenario = parse_scenario(root["scenario"], "scenario");

    if (const auto s = root["sweep"]) {
        auto values = get<std::vector<double>>(s, "sweep");
        if (values.empty())
            fail(s, "sweep", "needs at least one value");
        for (double r : values)
            if (!(r >= kMinFactor && r <= kMaxFactor))
                fail(s, "sweep", "values must lie in [1.0, 4.0], got " + std::to_string(r));
        spec.sweep = std::move(values);
    }
    if (const auto m = root["metrics"]) {
        reject_unknown(m, "metrics", {"window", "beacons_per_bin", "full_size_bytes"});
        read_opt(m, "window", "metrics", spec.metrics.window);
        read_opt(m, "beacons_per_bin", "metrics", spec.metrics.beacons_per_bin);
        read_opt(m, "full_size_bytes", "metrics", spec.metrics.full_size_bytes);
        if (spec.metrics.beacons_per_bin == 0)
            fail(m["beacons_per_bin"], "metrics.beacons_per_bin", "must be positive");
    }
    if (const auto a = root["adapt"]) {
        reject_unknown(a, "adapt", {"estimator", "epsilon", "tau", "interval_slots", "optima"});
        if (const auto e = a["estimator"]) {
            const auto s = get<std::string>(e, "adapt.estimator");
            if (s == "ratio")
                spec.adapt.estimator = adapt::EstimatorKind::Ratio;
            else if (s == "threshold")
                spec.adapt.estimator = adapt::EstimatorKind::Threshold;
            else
                fail(e, "adapt.estimator", "expected ratio|threshold");
        }
        read_opt(a, "epsilon", "adapt", spec.adapt.epsilon);
        if (const auto t = a["tau"])
            spec.adapt.tau = get<double>(t, "adapt.tau");
        read_opt(a, "interval_slots", "adapt", spec.adapt.interval_slots);
        read_opt(a, "optima", "adapt", spec.adapt.optima_path);
        if (!(spec.adapt.epsilon > 0.0 && spec.adapt.epsilon <= 1.0))
            fail(a["epsilon"], "adapt.epsilon", "must be in (0, 1]");
        if (spec.adapt.interval_slots == 0)
            fail(a["interval_slots"], "adapt.interval_slots", "must be positive");
    }
    return spec;
}

inline ExperimentSpec load_experiment(const std::string& path, std::string* text_out = nullptr)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    if (text_out)
        *text_out = ss.str();
    return parse_experiment(ss.str());
}

} // namespace backoff_lab::config
