// backoff_lab: simulate | solve | metrics | adapt
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "backoff_lab/adapt.hpp"
#include "backoff_lab/analytic.hpp"
#include "backoff_lab/config.hpp"
#include "backoff_lab/metrics.hpp"
#include "backoff_lab/simulator.hpp"
#include "backoff_lab/trace_io.hpp"

namespace fs = std::filesystem;
using namespace backoff_lab;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

enum class Format { Csv, Json };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    Format format = Format::Csv;
};

using Cell = std::variant<std::int64_t, double, std::string>;

/// A flat result table, emitted either as CSV (hash comment + header) or as JSON records.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<Cell>> rows;

    std::string render(Format fmt, const std::string& hash) const
    {
        std::ostringstream os;
        if (fmt == Format::Csv) {
            os << "#config-hash " << hash << '\n';
            for (std::size_t i = 0; i < header.size(); ++i)
                os << (i ? "," : "") << header[i];
            os << '\n' << std::setprecision(10);
            for (const auto& row : rows) {
                for (std::size_t i = 0; i < row.size(); ++i) {
                    if (i)
                        os << ',';
                    std::visit([&os](const auto& v) { os << v; }, row[i]);
                }
                os << '\n';
            }
            return os.str();
        }
        nlohmann::ordered_json j;
        j["config_hash"] = hash;
        auto records = nlohmann::ordered_json::array();
        for (const auto& row : rows) {
            nlohmann::ordered_json rec;
            for (std::size_t i = 0; i < row.size(); ++i)
                std::visit([&](const auto& v) { rec[header[i]] = v; }, row[i]);
            records.push_back(std::move(rec));
        }
        j["rows"] = std::move(records);
        return j.dump(2) + "\n";
    }
};

std::string extension(Format f) { return f == Format::Csv ? ".csv" : ".json"; }

void emit(const fs::path& dir, const std::string& stem, const Table& t, Format fmt, const std::string& hash)
{
    write_file_atomic(dir / (stem + extension(fmt)), t.render(fmt, hash));
}

fs::path prepare_out(const std::string& out)
{
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out))
        throw config::ConfigError("output directory '" + out + "' is not writable");
    return fs::path(out);
}

std::pair<int, int> parse_range(const std::string& s)
{
    const auto dots = s.find("..");
    try {
        if (dots == std::string::npos) {
            const int v = std::stoi(s);
            return {v, v};
        }
        return {std::stoi(s.substr(0, dots)), std::stoi(s.substr(dots + 2))};
    } catch (const std::exception&) {
        throw ParameterError("--n: expected a range like 2..12, got '" + s + "'");
    }
}

std::string trace_text(const SimResult& r, const std::string& hash)
{
    std::ostringstream os;
    write_trace(os, r.events, hash);
    return os.str();
}

std::optional<std::uint64_t> completion(const SimResult& r)
{
    std::optional<std::uint64_t> last;
    for (const auto& c : r.per_station)
        if (c.completion_slot)
            last = std::max(last.value_or(0), *c.completion_slot);
    return last;
}

void add_common(CLI::App* cmd, Common& c, bool needs_config)
{
    auto* opt = cmd->add_option("--config", c.config, "experiment YAML file")->check(CLI::ExistingFile);
    if (needs_config)
        opt->required();
    cmd->add_option("--seed", c.seed, "override scenario seed");
    cmd->add_option("--out", c.out, "output directory")->capture_default_str();
    cmd->add_option("--format", c.format, "table format")
        ->transform(CLI::CheckedTransformer(std::map<std::string, Format>{{"csv", Format::Csv}, {"json", Format::Json}}));
}

config::ExperimentSpec load(const Common& c, std::string& hash_input)
{
    std::string text;
    auto spec = config::load_experiment(c.config, &text);
    hash_input = text;
    if (c.seed) {
        spec.scenario.seed = *c.seed;
        hash_input += "\n#seed=" + std::to_string(*c.seed);
    }
    return spec;
}

// ---- simulate --------------------------------------------------------------

int cmd_simulate(const Common& c, const std::vector<double>& r_override)
{
    std::string hash_input;
    auto spec = load(c, hash_input);
    if (!r_override.empty()) {
        for (double r : r_override)
            if (!(r >= kMinFactor && r <= kMaxFactor))
                throw config::ConfigError("--r: values must lie in [1.0, 4.0], got " + std::to_string(r));
        spec.sweep = r_override;
        std::ostringstream os;
        for (double r : r_override)
            os << r << ' ';
        hash_input += "\n#r=" + os.str();
    }
    const auto dir = prepare_out(c.out);
    const auto hash = config_hash(hash_input);

    const auto result = run(spec.scenario);
    write_file_atomic(dir / "trace.csv", trace_text(result, hash));
    write_file_atomic(dir / "summary.json", summary_json(result, spec.scenario, hash).dump(2) + "\n");

    if (spec.sweep) {
        Table t{{"r", "throughput_mbps", "jain_median", "collision_fraction"}, {}};
        for (const auto& row : sweep_r(spec.scenario, *spec.sweep, spec.metrics.window))
            t.rows.push_back({row.r, row.throughput_mbps, row.jain_index, row.collision_fraction});
        emit(dir, "sweep", t, c.format, hash);
    }
    std::cout << "simulate: " << result.events.size() << " events over " << result.elapsed_slots << " slots -> "
              << dir.string() << '\n';
    return kOk;
}

// ---- solve -----------------------------------------------------------------

struct SolveArgs {
    std::string n_range = "2..12";
    std::optional<double> t_s, t_c, t_n, payload;
};

int cmd_solve(const Common& c, const SolveArgs& a, bool to_stdout)
{
    analytic::AnalyticParams p;
    const double ack = p.t_s - p.t_c;
    if (a.t_c)
        p.t_c = *a.t_c;
    // t_s and t_c differ only by the ACK; keep that gap unless t_s is given
    p.t_s = a.t_s ? *a.t_s : p.t_c + ack;
    if (a.t_n)
        p.t_n = *a.t_n;
    if (a.payload)
        p.payload_bytes = *a.payload;
    const auto [lo, hi] = parse_range(a.n_range);
    p.n = lo;
    p.validate();

    std::ostringstream key;
    key << std::setprecision(17) << "solve t_s=" << p.t_s << " t_c=" << p.t_c << " t_n=" << p.t_n
        << " payload=" << p.payload_bytes << " n=" << lo << ".." << hi;
    const auto hash = config_hash(key.str());
    const auto rows = analytic::table_of_optima(p, lo, hi);

    if (c.format == Format::Csv) {
        std::ostringstream os;
        analytic::write_optima_csv(os, rows, hash);
        if (to_stdout)
            std::cout << os.str();
        else
            write_file_atomic(prepare_out(c.out) / "optima.csv", os.str());
        return kOk;
    }
    Table t{{"N", "E_cw", "r_penalty", "r_rollback", "cw_fixed"}, {}};
    for (const auto& r : rows)
        t.rows.push_back({static_cast<std::int64_t>(r.n), r.e_cw, r.r_penalty, r.r_rollback, r.cw_fixed});
    if (to_stdout)
        std::cout << t.render(Format::Json, hash);
    else
        emit(prepare_out(c.out), "optima", t, Format::Json, hash);
    return kOk;
}

// ---- metrics ---------------------------------------------------------------

struct MetricsArgs {
    std::string trace;
    std::string beacons;
    bool beacon_synth = false;
    std::size_t n = 0;
    std::size_t window = 0;
    std::size_t beacons_per_bin = 10;
    double slot_us = 9.0;
    double beacon_interval_ms = 10.0;
    std::uint32_t full_size = 1540;
    bool truncate = true;
};

std::vector<double> read_beacons(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw config::ConfigError("cannot open beacon file '" + path + "'");
    std::vector<double> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        try {
            out.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw DataError("beacon file: bad line '" + line + "'");
        }
    }
    return out;
}

int cmd_metrics(const Common& c, const MetricsArgs& a)
{
    if (a.beacon_synth == !a.beacons.empty())
        throw config::ConfigError("metrics: give exactly one of --beacon-synth or --beacons <file>");
    const auto parsed = read_trace(fs::path(a.trace));
    if (parsed.dropped > 0)
        std::cerr << "metrics: skipped " << parsed.dropped << " malformed trace lines\n";
    if (parsed.events.empty())
        throw DataError("trace '" + a.trace + "' holds no events");

    std::size_t n = a.n;
    if (n == 0)
        for (const auto& e : parsed.events)
            n = std::max<std::size_t>(n, e.station + 1);
    const std::size_t w = a.window == 0 ? 10 * n : a.window;

    metrics::RawLog log = metrics::synthesize_log(parsed.events, a.slot_us, a.beacon_interval_ms);
    if (!a.beacons.empty())
        log.beacons = read_beacons(a.beacons);
    auto trace = metrics::align({log}, a.beacon_interval_ms);
    if (a.truncate)
        trace = metrics::truncate_all_active(trace, n, a.full_size);

    std::ostringstream key;
    key << "metrics " << config_hash(std::string(std::istreambuf_iterator<char>(std::ifstream(a.trace).rdbuf()), {}))
        << " n=" << n << " w=" << w << " bpb=" << a.beacons_per_bin << " slot_us=" << a.slot_us
        << " truncate=" << a.truncate << " beacons=" << a.beacons;
    const auto hash = config_hash(key.str());
    const auto dir = prepare_out(c.out);

    const auto jain = metrics::jain_fairness(trace, n, w);
    Table jt{{"window_start", "jain"}, {}};
    for (std::size_t k = 0; k < jain.size(); ++k)
        jt.rows.push_back({static_cast<std::int64_t>(k), jain[k]});
    emit(dir, "jain", jt, c.format, hash);

    const auto stats = metrics::bin_stats(trace, n, a.beacons_per_bin);
    Table bt{{"bin", "station", "successes", "failures"}, {}};
    Table ct{{"bin", "start_us", "end_us", "attempts", "failures", "collision_rate"}, {}};
    Table tt{{"bin", "start_us", "end_us", "bytes_per_second"}, {}};
    for (std::size_t b = 0; b < stats.size(); ++b) {
        std::uint64_t att = 0, fail = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& sb = stats.stations[b][s];
            bt.rows.push_back({static_cast<std::int64_t>(b), static_cast<std::int64_t>(s),
                               static_cast<std::int64_t>(sb.successes), static_cast<std::int64_t>(sb.failures)});
            att += sb.attempts;
            fail += sb.failures;
        }
        const double rate = att == 0 ? 0.0 : static_cast<double>(fail) / static_cast<double>(att);
        ct.rows.push_back({static_cast<std::int64_t>(b), stats.start_us[b], stats.end_us[b],
                           static_cast<std::int64_t>(att), static_cast<std::int64_t>(fail), rate});
        tt.rows.push_back({static_cast<std::int64_t>(b), stats.start_us[b], stats.end_us[b], stats.bytes_per_second(b)});
    }
    emit(dir, "bins", bt, c.format, hash);
    emit(dir, "collisions", ct, c.format, hash);
    emit(dir, "throughput", tt, c.format, hash);

    nlohmann::ordered_json s;
    s["config_hash"] = hash;
    s["n_stations"] = n;
    s["window"] = w;
    s["entries"] = trace.entries.size();
    s["dropped_lines"] = parsed.dropped;
    s["jain_windows"] = jain.size();
    s["jain_median"] = jain.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(metrics::median(jain));
    if (!trace.entries.empty()) {
        s["collision_rate_all_retries"] = metrics::collision_rate(trace, metrics::CollisionMode::AllRetries);
        s["collision_rate_packets_with_retry"] = metrics::collision_rate(trace, metrics::CollisionMode::PacketsWithRetry);
    }
    s["throughput_median_bytes_per_second"] = metrics::throughput_per_bin(trace, a.beacons_per_bin).median_bytes_per_second;
    s["unbinned"] = stats.unbinned;
    write_file_atomic(dir / "metrics.json", s.dump(2) + "\n");
    std::cout << "metrics: " << jain.size() << " Jain windows, " << stats.size() << " bins -> " << dir.string() << '\n';
    return kOk;
}

// ---- adapt -----------------------------------------------------------------

struct AdaptArgs {
    std::optional<std::string> estimator;
    std::optional<double> epsilon, tau;
    std::optional<std::uint64_t> interval;
};

int cmd_adapt(const Common& c, const AdaptArgs& a)
{
    std::string hash_input;
    auto spec = load(c, hash_input);
    auto& opts = spec.adapt;
    if (a.estimator)
        opts.estimator = *a.estimator == "ratio" ? adapt::EstimatorKind::Ratio : adapt::EstimatorKind::Threshold;
    if (a.epsilon)
        opts.epsilon = *a.epsilon;
    if (a.tau)
        opts.tau = *a.tau;
    if (a.interval)
        opts.interval_slots = *a.interval;
    std::ostringstream extra;
    extra << std::setprecision(17) << "\n#adapt estimator=" << static_cast<int>(opts.estimator)
          << " eps=" << opts.epsilon << " tau=" << opts.tau.value_or(-1) << " T=" << opts.interval_slots;
    hash_input += extra.str();

    const auto& sc = spec.scenario;
    for (std::size_t i = 0; i < sc.n_stations; ++i) {
        const auto k = sc.policy_for(i).kind;
        if (k != Protocol::Penalty && k != Protocol::Rollback)
            throw config::ConfigError("scenario.policy.kind: adapt needs penalty or rollback stations");
    }
    if (sc.n_stations < 2)
        throw config::ConfigError("scenario.stations: adapt needs at least 2 stations");

    adapt::EstimatorConfig ec;
    ec.kind = opts.estimator;
    ec.tau_threshold = opts.tau;
    ec.epsilon = opts.epsilon;
    ec.interval_s = static_cast<double>(opts.interval_slots) * sc.slot_us * 1e-6;
    ec.n_assoc = static_cast<int>(sc.n_stations);
    try {
        ec.validate();
    } catch (const ParameterError& e) {
        throw config::ConfigError(std::string("adapt: ") + e.what());
    }

    const auto optima = opts.optima_path.empty()
                            ? analytic::table_of_optima({}, 2, static_cast<int>(std::max<std::size_t>(2, sc.n_stations)))
                            : analytic::read_optima_csv(opts.optima_path);

    const auto dir = prepare_out(c.out);
    const auto hash = config_hash(hash_input);

    adapt::AdaptController controller(ec, opts.interval_slots, optima);
    const auto adaptive = run_adaptive(sc, controller);

    ScenarioConfig baseline_cfg = sc;
    baseline_cfg.set_policy(BackoffPolicy::standard(2.0));
    const auto baseline = run(baseline_cfg);

    write_file_atomic(dir / "trace.csv", trace_text(adaptive, hash));
    std::ostringstream upd;
    write_update_log(upd, adaptive.updates, hash);
    write_file_atomic(dir / "updates.csv", upd.str());

    nlohmann::ordered_json summary;
    summary["config_hash"] = hash;
    summary["adaptive"] = summary_json(adaptive, sc, hash);
    summary["baseline"] = summary_json(baseline, baseline_cfg, hash);
    write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");

    Table t{{"variant", "completion_slot", "elapsed_slots", "throughput_mbps", "collision_fraction", "updates"}, {}};
    auto row = [&](const std::string& name, const SimResult& r) {
        const auto done = completion(r);
        t.rows.push_back({name, done ? Cell(static_cast<std::int64_t>(*done)) : Cell(std::string("")),
                          static_cast<std::int64_t>(r.elapsed_slots), aggregate_throughput_mbps(r, sc.slot_us),
                          collision_fraction(r), static_cast<std::int64_t>(r.updates.size())});
    };
    row("standard_r2", baseline);
    row(std::string(to_string(sc.policy_for(0).kind)) + "_adaptive", adaptive);
    emit(dir, "comparison", t, c.format, hash);

    std::cout << "adapt: " << adaptive.updates.size() << " updates; adaptive " << adaptive.elapsed_slots
              << " slots vs standard " << baseline.elapsed_slots << " slots -> " << dir.string() << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Backoff-factor experiments: slotted DCF simulation, analytic optima, trace metrics, adaptation"};
    app.require_subcommand(1);

    Common common;

    std::vector<double> r_list;
    auto* sim = app.add_subcommand("simulate", "run a scenario (and an optional r sweep)");
    add_common(sim, common, true);
    sim->add_option("--r", r_list, "backoff factors to sweep (comma separated)")->delimiter(',');

    SolveArgs solve_args;
    auto* solve = app.add_subcommand("solve", "table of optimal backoff factors");
    add_common(solve, common, false);
    solve->add_option("--n", solve_args.n_range, "station range a..b")->capture_default_str();
    solve->add_option("--ts", solve_args.t_s, "successful exchange time [s]");
    solve->add_option("--tc", solve_args.t_c, "collision time [s]");
    solve->add_option("--tn", solve_args.t_n, "idle slot time [s]");
    solve->add_option("--payload", solve_args.payload, "payload bytes");

    MetricsArgs m_args;
    auto* met = app.add_subcommand("metrics", "fairness, collision and throughput series from a trace");
    met->add_option("--trace", m_args.trace, "trace CSV from simulate or adapt")->required()->check(CLI::ExistingFile);
    met->add_option("--out", common.out, "output directory")->capture_default_str();
    met->add_option("--format", common.format, "table format")
        ->transform(CLI::CheckedTransformer(std::map<std::string, Format>{{"csv", Format::Csv}, {"json", Format::Json}}));
    met->add_flag("--beacon-synth", m_args.beacon_synth, "fabricate exact beacons every beacon interval");
    met->add_option("--beacons", m_args.beacons, "recorded beacon times (us), one per line")->check(CLI::ExistingFile);
    met->add_option("--n", m_args.n, "station count (default: highest id + 1)");
    met->add_option("--window", m_args.window, "Jain window in packets (default 10 N)");
    met->add_option("--beacons-per-bin", m_args.beacons_per_bin)->capture_default_str()->check(CLI::PositiveNumber);
    met->add_option("--slot-us", m_args.slot_us)->capture_default_str()->check(CLI::PositiveNumber);
    met->add_option("--beacon-interval-ms", m_args.beacon_interval_ms)->capture_default_str()->check(CLI::PositiveNumber);
    met->add_option("--full-size", m_args.full_size, "bytes of a full-size packet")->capture_default_str();
    met->add_flag("--truncate,!--no-truncate", m_args.truncate, "restrict to the all-active period")
        ->capture_default_str();

    AdaptArgs a_args;
    auto* ad = app.add_subcommand("adapt", "adaptive run plus a standard r=2 baseline");
    add_common(ad, common, true);
    ad->add_option("--estimator", a_args.estimator)->check(CLI::IsMember({"threshold", "ratio"}));
    ad->add_option("--epsilon", a_args.epsilon);
    ad->add_option("--tau", a_args.tau);
    ad->add_option("--interval-slots", a_args.interval);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*sim)
            return cmd_simulate(common, r_list);
        if (*solve)
            return cmd_solve(common, solve_args, solve->count("--out") == 0);
        if (*met)
            return cmd_metrics(common, m_args);
        return cmd_adapt(common, a_args);
    } catch (const ParameterError& e) { // includes config errors
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
}
