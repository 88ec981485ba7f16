#pragma once

// Benchmark-neutral pricing with the stock GOP as numeraire, the real-world
// pricing cross-check, closed-form fair zero-coupon bonds and the comparison
// with putative risk-neutral prices.

#include "bnrm/common.hpp"
#include "bnrm/model.hpp"
#include "bnrm/rng.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bnrm {

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// P(t,T) = S*_t E*[1/S*_T | S*_t] = 1 - exp(-S*_t / (2 Delta(t,T))).
inline double zcb_fair_closed_form(const ModelParams& params, double t, double s_star_t, double T) {
    if (!(t >= 0.0) || !(T > t)) throw DomainError("zcb_fair_closed_form: requires 0 <= t < T");
    if (T > params.horizon * (1.0 + 1e-12)) throw DomainError("zcb_fair_closed_form: maturity beyond horizon");
    if (!(s_star_t > 0.0)) throw DomainError("zcb_fair_closed_form: s_star must be positive");
    return -std::expm1(-s_star_t / (2.0 * transformed_time_increment(params, t, T)));
}

/// The ZCB price in S* units, P(t,T)/S*_t.
inline double zcb_price_hat(const ModelParams& params, double t, double s_star_t, double T) {
    return zcb_fair_closed_form(params, t, s_star_t, T) / s_star_t;
}

struct RnComparison {
    double fair = 0.0;
    double risk_neutral = 1.0;
    double gap = 0.0;
};

/// Fair ZCB against the unit price every putative risk-neutral measure assigns.
inline RnComparison rn_comparison(const ModelParams& params, double T) {
    if (!(T > 0.0) || T > params.horizon * (1.0 + 1e-12)) throw DomainError("rn_comparison: requires 0 < T <= horizon");
    const double x = params.s_star_0 / (2.0 * transformed_time_increment(params, 0.0, T));
    return {-std::expm1(-x), 1.0, std::exp(-x)};
}

/// Binary claim on an event independent of the market: P(0,T) p.
inline double binary_claim_price(const ModelParams& params, double event_prob, double T) {
    if (!(event_prob >= 0.0 && event_prob <= 1.0)) throw DomainError("binary_claim_price: probability outside [0,1]");
    return zcb_fair_closed_form(params, 0.0, params.s_star_0, T) * event_prob;
}

// ---------------------------------------------------------------------------
// Claims
// ---------------------------------------------------------------------------

enum class ClaimKind { ZeroCouponBond, Numeraire, TerminalPayoff, Binary, Zero, PathDependent };

struct Claim {
    std::string id;
    ClaimKind kind = ClaimKind::ZeroCouponBond;
    double maturity = 1.0;
    std::function<double(double)> terminal;              // TerminalPayoff: f(S*_T)
    std::function<double(const PathView&)> path_payoff;  // PathDependent
    double event_prob = 1.0;                             // Binary: P(A), A independent of the market

    bool requires_insurance_driver() const noexcept { return kind == ClaimKind::Binary; }

    static Claim zero_coupon_bond(double T) { return {"zcb", ClaimKind::ZeroCouponBond, T, {}, {}, 1.0}; }
    static Claim numeraire(double T) { return {"numeraire", ClaimKind::Numeraire, T, {}, {}, 1.0}; }
    static Claim zero(double T) { return {"zero", ClaimKind::Zero, T, {}, {}, 1.0}; }
    static Claim binary(double T, double p) {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("binary claim: probability outside [0,1]");
        return {"binary", ClaimKind::Binary, T, {}, {}, p};
    }
    static Claim terminal_payoff(double T, std::function<double(double)> f, std::string id = "terminal") {
        return {std::move(id), ClaimKind::TerminalPayoff, T, std::move(f), {}, 1.0};
    }
    static Claim path_dependent(double T, std::function<double(const PathView&)> f, std::string id = "path") {
        return {std::move(id), ClaimKind::PathDependent, T, {}, std::move(f), 1.0};
    }
    /// 1{S*_T > K}
    static Claim digital(double T, double K) {
        return terminal_payoff(T, [K](double s) { return s > K ? 1.0 : 0.0; }, "digital");
    }
    /// min(S*_T, K)
    static Claim capped(double T, double K) {
        return terminal_payoff(T, [K](double s) { return std::min(s, K); }, "capped");
    }

    /// Event indicator 1_A of path `stream` for claim slot `slot`.
    bool event_occurs(std::uint64_t seed, std::uint64_t stream, std::uint32_t slot = 0) const {
        RandomStream r({seed, stream, lanes::kInsurance + slot});
        return r.uniform() < event_prob;
    }

    /// H_T / S*_T on one path; k_T indexes the maturity on the path's grid.
    double discounted_payoff(const PathView& v, std::size_t k_T, std::uint64_t seed, std::uint64_t stream) const {
        const double s = v.s_star[k_T];
        switch (kind) {
            case ClaimKind::ZeroCouponBond: return 1.0 / s;
            case ClaimKind::Numeraire: return 1.0;
            case ClaimKind::Zero: return 0.0;
            case ClaimKind::Binary: return event_occurs(seed, stream) ? 1.0 / s : 0.0;
            case ClaimKind::TerminalPayoff: return terminal(s) / s;
            case ClaimKind::PathDependent: return path_payoff(v) / s;
        }
        return std::numeric_limits<double>::quiet_NaN();
    }
};

// ---------------------------------------------------------------------------
// Monte Carlo pricing
// ---------------------------------------------------------------------------

struct PricingOptions {
    Scheme scheme = Scheme::Exact;  // for bn_price_mc; real-world pricing always uses Euler under P
    double euler_step = 1.0 / 250.0;
    double monitoring_step = 1.0 / 12.0;  // exact-scheme grid when a path-dependent claim is present
    bool antithetic = false;
    unsigned threads = 1;
    NoncentralSampler sampler = NoncentralSampler::PoissonMixture;
};

struct PriceReport {
    std::string claim_id;
    double bn_price = 0.0;
    double se = 0.0;
    std::optional<double> closed_form;
    std::optional<double> rn_price;
    std::optional<double> gap;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline TimeGrid pricing_grid(const ModelParams& params, const std::vector<Claim>& claims, double step, bool fine) {
    double t_max = 0.0;
    bool path_dependent = false;
    std::vector<double> pts;
    for (const auto& c : claims) {
        if (!(c.maturity > 0.0) || c.maturity > params.horizon * (1.0 + 1e-12))
            throw ContractError("claim '" + c.id + "': maturity must lie in (0, horizon]");
        if ((c.kind == ClaimKind::TerminalPayoff && !c.terminal) || (c.kind == ClaimKind::PathDependent && !c.path_payoff))
            throw ContractError("claim '" + c.id + "': payoff function missing");
        t_max = std::max(t_max, c.maturity);
        path_dependent = path_dependent || c.kind == ClaimKind::PathDependent;
        pts.push_back(c.maturity);
    }
    if (fine || path_dependent) {
        const auto base = TimeGrid::uniform(t_max, step);
        for (double t : base.times()) {
            bool clash = false;
            for (double m : pts) clash = clash || (std::abs(t - m) < 1e-9 && t != m);
            if (!clash) pts.push_back(t);
        }
    }
    return TimeGrid::from_points(std::move(pts));
}

inline void check_finite(const std::vector<double>& values, std::size_t n, std::size_t n_claims, const std::string& what) {
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < n_claims; ++c)
            if (!std::isfinite(values[c * n + i])) {
                bad.push_back(i);
                break;
            }
    if (!bad.empty()) throw DataError(what + ": non-finite payoff", bad);
}

/// Streams paths and returns per-claim per-path values v[c * n + i]:
/// S*_0 H_T/S*_T (BN) or S*_0 Lambda_T H_T/S*_T (real-world, equal to S**_0 H_T/S**_T).
inline std::vector<double> price_values(const ModelParams& params, const std::vector<Claim>& claims, std::size_t n,
                                        std::uint64_t seed, const PricingOptions& opts, bool real_world) {
    if (n < 2) throw ContractError("pricing needs at least 2 paths");
    const bool euler = real_world || opts.scheme == Scheme::Euler;
    const auto grid = pricing_grid(params, claims, euler ? opts.euler_step : opts.monitoring_step, euler);
    std::vector<std::size_t> k_t;
    for (const auto& c : claims) k_t.push_back(*grid.find(c.maturity));

    SimulationOptions so;
    so.threads = opts.threads;
    so.antithetic = opts.antithetic;
    so.sampler = opts.sampler;
    const Measure measure = real_world ? Measure::P : Measure::QStar;
    const SgopSimulator sim(params, grid, euler ? Scheme::Euler : Scheme::Exact, measure, seed, so);
    if (opts.antithetic && n % 2 != 0) throw ContractError("antithetic pricing needs an even number of paths");

    std::vector<double> values(claims.size() * n);
    parallel_for(n, opts.threads, [&](std::size_t begin, std::size_t end) {
        PathBuffer buf;
        for (std::size_t i = begin; i < end; ++i) {
            sim.simulate(i, buf);
            const PathView v{i, grid.times(), buf.s_star, {}, {}};
            for (std::size_t c = 0; c < claims.size(); ++c) {
                double x = params.s_star_0 * claims[c].discounted_payoff(v, k_t[c], seed, sim.stream_index(i));
                if (real_world) x *= std::exp(buf.log_lambda[k_t[c]]);
                values[c * n + i] = x;
            }
        }
    });
    check_finite(values, n, claims.size(), real_world ? "real_world_price_mc" : "bn_price_mc");
    return values;
}

inline PriceReport make_report(const ModelParams& params, const Claim& claim, std::span<const double> values,
                               std::uint64_t seed, bool antithetic) {
    PriceReport r;
    r.claim_id = claim.id;
    const auto est = antithetic ? pair_averaged_mean_and_se(values) : mean_and_se(values);
    r.bn_price = est.value;
    r.se = est.se;
    r.n_paths = values.size();
    r.seed = seed;
    if (claim.kind == ClaimKind::ZeroCouponBond || claim.kind == ClaimKind::Binary) {
        const auto rn = rn_comparison(params, claim.maturity);
        const double p = claim.kind == ClaimKind::Binary ? claim.event_prob : 1.0;
        r.closed_form = rn.fair * p;
        r.rn_price = rn.risk_neutral * p;
        r.gap = rn.gap * p;
    } else if (claim.kind == ClaimKind::Numeraire) {
        r.closed_form = params.s_star_0;
    } else if (claim.kind == ClaimKind::Zero) {
        r.closed_form = 0.0;
    }
    return r;
}

}  // namespace detail

/// S*_0 E*[H_T/S*_T] for several claims on shared Q* paths.
inline std::vector<PriceReport> bn_prices_mc(const ModelParams& params, const std::vector<Claim>& claims,
                                             std::size_t n_paths, std::uint64_t seed, const PricingOptions& opts = {}) {
    params.validate();
    const auto v = detail::price_values(params, claims, n_paths, seed, opts, false);
    std::vector<PriceReport> out;
    for (std::size_t c = 0; c < claims.size(); ++c)
        out.push_back(detail::make_report(params, claims[c], std::span(v).subspan(c * n_paths, n_paths), seed, opts.antithetic));
    return out;
}

inline PriceReport bn_price_mc(const ModelParams& params, const Claim& claim, std::size_t n_paths, std::uint64_t seed,
                               const PricingOptions& opts = {}) {
    return bn_prices_mc(params, {claim}, n_paths, seed, opts).front();
}

/// S**_0 E_P[H_T/S**_T] with S** = (S*/S*_0) S**_0 / Lambda co-simulated under P.
inline std::vector<PriceReport> real_world_prices_mc(const ModelParams& params, const std::vector<Claim>& claims,
                                                     std::size_t n_paths, std::uint64_t seed,
                                                     const PricingOptions& opts = {}) {
    params.validate();
    const auto v = detail::price_values(params, claims, n_paths, seed, opts, true);
    std::vector<PriceReport> out;
    for (std::size_t c = 0; c < claims.size(); ++c)
        out.push_back(detail::make_report(params, claims[c], std::span(v).subspan(c * n_paths, n_paths), seed, opts.antithetic));
    return out;
}

inline PriceReport real_world_price_mc(const ModelParams& params, const Claim& claim, std::size_t n_paths,
                                       std::uint64_t seed, const PricingOptions& opts = {}) {
    return real_world_prices_mc(params, {claim}, n_paths, seed, opts).front();
}

}  // namespace bnrm
