#pragma once

// Saturation model for penalty and rollback backoff: expected contention
// windows as functions of (r, p_c), the slotted-contention probability
// system, throughput F(p_t), and the solvers that turn the throughput
// optimum into an optimal backoff factor per station count.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace backoff_lab::analytic {

struct AnalyticParams {
    double t_s = 3.22e-4;          // seconds, successful exchange
    double t_c = 2.92e-4;          // seconds, collision
    double t_n = 9e-6;             // seconds, idle slot
    double payload_bytes = 1540.0; // S
    int cw_min = 16;
    int k = 7;                     // maximum transmissions per frame
    int n = 12;                    // contending stations

    void validate() const
    {
        if (!(t_n > 0.0 && t_c > t_n && t_s >= t_c))
            throw ParameterError("timing must satisfy t_s >= t_c > t_n > 0");
        if (!(payload_bytes > 0.0))
            throw ParameterError("payload size must be positive");
        if (cw_min < 1 || k < 1)
            throw ParameterError("cw_min and k must be positive");
        if (n < 1)
            throw ParameterError("station count must be positive");
    }
};

/// 802.11-style composition t_s = DIFS + TX(S) + SIFS + ACK, t_c = DIFS + TX(S) + SIFS.
/// All durations in seconds, rate in bits per second.
inline AnalyticParams with_phy_timing(AnalyticParams base, double rate_bps, double difs, double sifs, double ack)
{
    if (!(rate_bps > 0.0))
        throw ParameterError("rate must be positive");
    const double tx = base.payload_bytes * 8.0 / rate_bps;
    base.t_c = difs + tx + sifs;
    base.t_s = base.t_c + ack;
    return base;
}

struct ProbabilityPoint {
    double p_t = 0.0;
    double p_n = 0.0;
    double p_s = 0.0;
    double p_c = 0.0;
};

enum class Variant { Penalty, Rollback };

namespace detail {

inline void check_pc(double r, double p_c)
{
    if (!(r > 0.0))
        throw ParameterError("r must be positive");
    if (!(p_c >= 0.0 && p_c < 1.0))
        throw ParameterError("p_c must be in [0, 1)");
}

// sum_{i=0}^{k-1} a^i b^(k-1-i) == (a^k - b^k) / (a - b)
inline double mixed_geometric(double a, double b, int k)
{
    double sum = 0.0;
    for (int i = 0; i < k; ++i)
        sum += std::pow(a, i) * std::pow(b, k - 1 - i);
    return sum;
}

inline bool near(double a, double b) { return std::abs(a - b) <= 1e-7 * std::max(1.0, std::abs(b)); }

} // namespace detail

/// Expected window for rollback backoff,
/// (CW_min - 1)(1 - p_c)(p_c^k - r^k) / (2 (1 - p_c^k)(p_c - r)).
/// Near r == p_c the quotient is replaced by its finite-sum form.
inline double expected_cw_rollback(double r, double p_c, const AnalyticParams& params)
{
    detail::check_pc(r, p_c);
    const int k = params.k;
    const double scale = (params.cw_min - 1.0) * (1.0 - p_c) / (2.0 * (1.0 - std::pow(p_c, k)));
    if (detail::near(p_c, r))
        return scale * detail::mixed_geometric(p_c, r, k);
    return scale * (std::pow(p_c, k) - std::pow(r, k)) / (p_c - r);
}

/// Expected window for backoff with penalty: the unpenalized ladder and the
/// pinned largest window, weighted by the stationary distribution
/// {1/(2 - p_c), (1 - p_c)/(2 - p_c)} of the two-state penalty chain.
inline double expected_cw_penalty(double r, double p_c, const AnalyticParams& params)
{
    detail::check_pc(r, p_c);
    const int k = params.k;
    const double pk = std::pow(p_c, k);
    const double lead = (1.0 / (2.0 - p_c)) * ((1.0 - p_c) / (1.0 - pk)) * ((params.cw_min - 1.0) / 2.0);
    const double x = p_c * r;
    const double ladder = detail::near(x, 1.0) ? detail::mixed_geometric(x, 1.0, k) : (std::pow(x, k) - 1.0) / (x - 1.0);
    return lead * (ladder - std::pow(r, k - 1) * (pk - 1.0));
}

inline double expected_cw(Variant v, double r, double p_c, const AnalyticParams& params)
{
    return v == Variant::Penalty ? expected_cw_penalty(r, p_c, params) : expected_cw_rollback(r, p_c, params);
}

inline ProbabilityPoint probabilities(double e_cw, int n)
{
    if (!(e_cw > 0.0))
        throw ParameterError("expected window must be positive");
    if (n < 1)
        throw ParameterError("station count must be >= 1");
    ProbabilityPoint pp;
    pp.p_t = 2.0 / (e_cw + 1.0);
    pp.p_n = std::pow(1.0 - pp.p_t, n);
    pp.p_s = n * pp.p_t * std::pow(1.0 - pp.p_t, n - 1);
    pp.p_c = 1.0 - pp.p_s - pp.p_n;
    return pp;
}

/// Same system, parameterized directly by the attempt probability.
inline ProbabilityPoint probabilities_at(double p_t, int n)
{
    ProbabilityPoint pp;
    pp.p_t = p_t;
    pp.p_n = std::pow(1.0 - p_t, n);
    pp.p_s = n * p_t * std::pow(1.0 - p_t, n - 1);
    pp.p_c = 1.0 - pp.p_s - pp.p_n;
    return pp;
}

/// Bytes per second.
inline double throughput(const ProbabilityPoint& pp, const AnalyticParams& params)
{
    const double denom = pp.p_s * params.t_s + pp.p_c * params.t_c + pp.p_n * params.t_n;
    if (pp.p_s == 0.0)
        return 0.0;
    return params.payload_bytes * pp.p_s / denom;
}

inline double throughput_at(double p_t, const AnalyticParams& params)
{
    return throughput(probabilities_at(p_t, params.n), params);
}

/**
 * Attempt probability maximizing throughput: the root in (0, 1/N] of
 *   (N p - 1) / (1 - p)^N = (t_n - t_c) / t_c.
 * Newton steps, kept inside a shrinking sign-change bracket.
 */
inline double solve_optimal_pt(const AnalyticParams& params)
{
    const int n = params.n;
    if (n < 2)
        throw ParameterError("optimization needs at least two stations");
    if (!(params.t_n > 0.0 && params.t_c >= params.t_n))
        throw ParameterError("timing must satisfy t_c >= t_n > 0");
    const double rhs = (params.t_n - params.t_c) / params.t_c;
    auto f = [&](double p) { return (n * p - 1.0) / std::pow(1.0 - p, n) - rhs; };
    auto df = [&](double p) {
        const double q = 1.0 - p;
        return n / std::pow(q, n) + n * (n * p - 1.0) / std::pow(q, n + 1);
    };

    const double exact = 1.0 / n;
    if (f(exact) == 0.0)
        return exact;

    double lo = 1e-6;
    double hi = std::min(exact + 0.1, 1.0 - 1e-9);
    double flo = f(lo);
    double fhi = f(hi);
    if (!(flo < 0.0 && fhi > 0.0))
        throw ModelDomainError("no sign change of the optimality condition in (1e-6, 1/N + 0.1)");

    double p = std::min(exact, hi);
    for (int it = 0; it < 200; ++it) {
        const double fp = f(p);
        if (std::abs(fp) < 1e-12)
            return p;
        if (fp < 0.0)
            lo = p;
        else
            hi = p;
        double next = p - fp / df(p);
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        if (next == p)
            return p;
        p = next;
    }
    throw ModelDomainError("optimal p_t solver did not converge");
}

inline double optimal_expected_cw(const AnalyticParams& params)
{
    return 2.0 / solve_optimal_pt(params) - 1.0;
}

/**
 * Self-consistent operating point for a fixed r: the E[CW] solving
 *   E = expected_cw(r, probabilities(E, N).p_c).
 * Used by the simultaneous solve mode and for sensitivity studies.
 */
inline double operating_point_cw(Variant v, double r, const AnalyticParams& params)
{
    auto g = [&](double e) { return e - expected_cw(v, r, probabilities(e, params.n).p_c, params); };
    // E = 1 means p_t = 1; every window the model yields is at least 7.5 > 1
    double lo = 1.0 + 1e-9;
    double hi = 2.0;
    while (g(hi) < 0.0) {
        hi *= 2.0;
        if (hi > 1e12)
            throw ModelDomainError("operating point diverges");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

enum class SolveMode {
    TwoStage,    // fix E*, compute p_c* once, invert E[CW](r, p_c*)
    Simultaneous // root-find r on the self-consistent operating point
};

/// r in [1, 4] whose expected window hits the throughput-optimal E[CW].
inline double solve_optimal_r(const AnalyticParams& params, Variant v, SolveMode mode = SolveMode::TwoStage)
{
    const double target = optimal_expected_cw(params);
    std::function<double(double)> g;
    if (mode == SolveMode::TwoStage) {
        const double pc = probabilities(target, params.n).p_c;
        g = [&, pc](double r) { return expected_cw(v, r, pc, params) - target; };
    } else {
        g = [&](double r) { return operating_point_cw(v, r, params) - target; };
    }

    double lo = 1.0;
    double hi = 4.0;
    const double glo = g(lo);
    const double ghi = g(hi);
    if (glo == 0.0)
        return lo;
    if (!(glo < 0.0 && ghi >= 0.0))
        throw ModelDomainError("no optimal backoff factor in [1.0, 4.0]");
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double gm = g(mid);
        if (std::abs(gm) < 1e-9 || hi - lo < 1e-15)
            return mid;
        (gm < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct OptimaRow {
    int n = 0;
    double e_cw = 0.0;
    double r_penalty = 0.0;
    double r_rollback = 0.0;
    double cw_fixed = 0.0;
};

inline std::vector<OptimaRow> table_of_optima(AnalyticParams base, int n_first, int n_last)
{
    if (n_first < 2 || n_last > 200 || n_first > n_last)
        throw ParameterError("station range must lie within [2, 200]");
    std::vector<OptimaRow> rows;
    rows.reserve(static_cast<std::size_t>(n_last - n_first + 1));
    for (int n = n_first; n <= n_last; ++n) {
        base.n = n;
        OptimaRow row;
        row.n = n;
        row.e_cw = optimal_expected_cw(base);
        row.r_penalty = solve_optimal_r(base, Variant::Penalty);
        row.r_rollback = solve_optimal_r(base, Variant::Rollback);
        row.cw_fixed = row.e_cw;
        rows.push_back(row);
    }
    return rows;
}

// ---- optima CSV: N,E_cw,r_penalty,r_rollback,cw_fixed -------------------

inline void write_optima_csv(std::ostream& os, const std::vector<OptimaRow>& rows, const std::string& config_hash)
{
    os << "#config-hash " << config_hash << '\n';
    os << "N,E_cw,r_penalty,r_rollback,cw_fixed\n";
    os << std::setprecision(10);
    for (const auto& row : rows)
        os << row.n << ',' << row.e_cw << ',' << row.r_penalty << ',' << row.r_rollback << ',' << row.cw_fixed << '\n';
}

inline std::vector<OptimaRow> read_optima_csv(std::istream& is)
{
    std::vector<OptimaRow> rows;
    std::string line;
    bool header = false;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#')
            continue;
        if (!header) {
            if (line.rfind("N,E_cw,r_penalty,r_rollback,cw_fixed", 0) != 0)
                throw DataError("optima CSV: unexpected header '" + line + "'");
            header = true;
            continue;
        }
        std::istringstream ls(line);
        OptimaRow row;
        char c1, c2, c3, c4;
        if (!(ls >> row.n >> c1 >> row.e_cw >> c2 >> row.r_penalty >> c3 >> row.r_rollback >> c4 >> row.cw_fixed) ||
            c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',')
            throw DataError("optima CSV: malformed row at line " + std::to_string(lineno));
        rows.push_back(row);
    }
    if (rows.empty())
        throw DataError("optima CSV: no rows");
    return rows;
}

inline std::vector<OptimaRow> read_optima_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open optima table '" + path + "'");
    return read_optima_csv(in);
}

} // namespace backoff_lab::analytic
