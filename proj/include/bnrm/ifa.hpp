#pragma once

// Single-premium insurance contracts: the BN premium bound and deflated-value
// diagnostics for insurance-finance arbitrage of the first kind.
//
// Premiums and benefits are in savings-account units. The deflator is
// Z_T = 1/S**_T with S**_0 = 1, i.e. Z_T = Lambda_T S*_0 / S*_T.

#include "bnrm/common.hpp"
#include "bnrm/model.hpp"
#include "bnrm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace bnrm {

/// Benefit beta >= 0 at T from the market path and the contract's own uniform
/// draw u; contracts on one path see independent u, so benefits are
/// conditionally i.i.d. given the market.
using BenefitFn = std::function<double(const PathView& market, double u)>;

struct InsuranceContractSpec {
    std::string id;
    double maturity = 30.0;
    double premium = 0.0;
    BenefitFn benefit;
    double monitoring_step = 0.0;  // > 0: benefit reads the path on this grid under Q*

    static InsuranceContractSpec indicator(double T, double prob) {
        return {"indicator", T, 0.0, [prob](const PathView&, double u) { return u < prob ? 1.0 : 0.0; }};
    }
    static InsuranceContractSpec zero(double T) {
        return {"zero", T, 0.0, [](const PathView&, double) { return 0.0; }};
    }
    static InsuranceContractSpec constant(double T, double c) {
        return {"constant", T, 0.0, [c](const PathView&, double) { return c; }};
    }
    /// One unit of the stock GOP.
    static InsuranceContractSpec numeraire(double T) {
        return {"numeraire", T, 0.0, [](const PathView& v, double) { return v.s_star.back(); }};
    }
    /// max(S*_T, K) paid on the insured event.
    static InsuranceContractSpec guaranteed_unit_link(double T, double prob, double K) {
        return {"unit_link", T, 0.0,
                [prob, K](const PathView& v, double u) { return u < prob ? std::max(v.s_star.back(), K) : 0.0; }};
    }

    void validate(const ModelParams& params) const {
        if (!benefit) throw ConfigError("contract '" + id + "': no benefit");
        if (!(maturity > 0.0) || maturity > params.horizon + 1e-12)
            throw ContractError("contract '" + id + "': maturity must lie in (0, horizon]");
        if (!(monitoring_step >= 0.0)) throw ConfigError("contract '" + id + "': monitoring_step must be nonnegative");
    }
};

struct IfaOptions {
    double step = 1.0 / 250.0;  // Euler step of the real-world paths
    unsigned threads = 1;
    NoncentralSampler sampler = NoncentralSampler::PoissonMixture;
};

namespace detail {

inline double contract_draw(std::uint64_t seed, std::uint64_t stream, std::uint32_t slot) {
    RandomStream r({seed, stream, lanes::kInsurance + slot});
    return r.uniform();
}

inline double checked_benefit(const InsuranceContractSpec& c, const PathView& v, double u, std::size_t path,
                              std::vector<std::size_t>& bad) {
    const double b = c.benefit(v, u);
    if (!std::isfinite(b) || b < 0.0) {
        bad.push_back(path);
        return 0.0;
    }
    return b;
}

inline void throw_bad(std::vector<std::size_t>& bad, const std::string& who) {
    if (bad.empty()) return;
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    throw DataError(who + ": benefit negative or not finite", bad);
}

}  // namespace detail

/// S*_0 E*[beta / S*_T] on exact Q* paths; paths start at stream first_path.
inline Estimate premium_bound(const ModelParams& params, const InsuranceContractSpec& contract, std::size_t n_paths,
                              std::uint64_t seed, const IfaOptions& opts = {}, std::size_t first_path = 0) {
    params.validate();
    contract.validate(params);
    if (n_paths < 2) throw ContractError("premium_bound: needs at least 2 paths");
    const double T = contract.maturity;
    const auto grid = contract.monitoring_step > 0.0 ? TimeGrid::uniform(T, contract.monitoring_step) : TimeGrid({0.0, T});
    SimulationOptions so;
    so.sampler = opts.sampler;
    so.first_path = first_path;
    const SgopSimulator sim(params, grid, Scheme::Exact, Measure::QStar, seed, so);
    std::vector<double> v(n_paths);
    std::vector<std::size_t> bad;
    std::mutex bad_mutex;
    parallel_for(n_paths, opts.threads, [&](std::size_t b, std::size_t e) {
        PathBuffer pb;
        std::vector<std::size_t> local;
        for (std::size_t i = b; i < e; ++i) {
            sim.simulate(i, pb);
            const PathView view{i, grid.times(), pb.s_star, {}, {}};
            const double beta = detail::checked_benefit(contract, view, detail::contract_draw(seed, sim.stream_index(i), 0), i, local);
            v[i] = params.s_star_0 * beta / pb.s_star.back();
        }
        std::lock_guard lock(bad_mutex);
        bad.insert(bad.end(), local.begin(), local.end());
    });
    detail::throw_bad(bad, "premium_bound");
    return mean_and_se(v);
}

/// The same bound under P: E_P[Z_T beta] with Z co-simulated on Euler paths.
inline Estimate premium_bound_real_world(const ModelParams& params, const InsuranceContractSpec& contract,
                                         std::size_t n_paths, std::uint64_t seed, const IfaOptions& opts = {}) {
    params.validate();
    contract.validate(params);
    if (n_paths < 2) throw ContractError("premium_bound_real_world: needs at least 2 paths");
    const auto grid = TimeGrid::uniform(contract.maturity, opts.step);
    const SgopSimulator sim(params, grid, Scheme::Euler, Measure::P, seed);
    std::vector<double> v(n_paths);
    std::vector<std::size_t> bad;
    std::mutex bad_mutex;
    parallel_for(n_paths, opts.threads, [&](std::size_t b, std::size_t e) {
        PathBuffer pb;
        std::vector<std::size_t> local;
        for (std::size_t i = b; i < e; ++i) {
            sim.simulate(i, pb);
            const PathView view{i, grid.times(), pb.s_star, {}, {}};
            const double beta = detail::checked_benefit(contract, view, detail::contract_draw(seed, sim.stream_index(i), 0), i, local);
            v[i] = std::exp(pb.log_lambda.back()) * params.s_star_0 * beta / pb.s_star.back();
        }
        std::lock_guard lock(bad_mutex);
        bad.insert(bad.end(), local.begin(), local.end());
    });
    detail::throw_bad(bad, "premium_bound_real_world");
    return mean_and_se(v);
}

/// Permissible self-financing strategies in (savings account, S*), started
/// with x savings-account units.
struct PermissibleStrategy {
    enum class Kind { Gop, Savings, Switch, Custom };
    Kind kind = Kind::Gop;
    double switch_time = 0.0;  // Switch: all in S* until then, all in the savings account after
    std::function<double(double t, double s_star, double value)> savings_units;  // Custom

    static PermissibleStrategy gop() { return {}; }
    static PermissibleStrategy savings() { return {Kind::Savings, 0.0, {}}; }
    static PermissibleStrategy switch_at(double t) { return {Kind::Switch, t, {}}; }
    static PermissibleStrategy custom(std::function<double(double, double, double)> f) {
        return {Kind::Custom, 0.0, std::move(f)};
    }

    std::string name() const {
        switch (kind) {
            case Kind::Gop: return "buy_and_hold_gop";
            case Kind::Savings: return "buy_and_hold_savings";
            case Kind::Switch: return "switch_gop_to_savings";
            case Kind::Custom: return "custom";
        }
        return "unknown";
    }
};

namespace detail {

/// Terminal S*-denominated value V_T of a strategy started at v0 S* units.
/// Returns a negative number only for custom strategies that went negative.
inline double strategy_terminal(const PermissibleStrategy& st, std::span<const double> times, std::span<const double> s,
                                double v0) {
    const std::size_t last = s.size() - 1;
    switch (st.kind) {
        case PermissibleStrategy::Kind::Gop: return v0;
        case PermissibleStrategy::Kind::Savings: return v0 * s[0] / s[last];
        case PermissibleStrategy::Kind::Switch: {
            std::size_t k = 0;
            while (k < last && times[k] < st.switch_time - 1e-12) ++k;
            return v0 * s[k] / s[last];
        }
        case PermissibleStrategy::Kind::Custom: {
            double v = v0;
            for (std::size_t k = 0; k < last; ++k) {
                const double z0 = st.savings_units(times[k], s[k], v);
                v += z0 * (1.0 / s[k + 1] - 1.0 / s[k]);
                if (v < 0.0) return v;
            }
            return v;
        }
    }
    return v0;
}

}  // namespace detail

struct PremiumBoundReport {
    Estimate bound;                   // S*_0 E*[beta / S*_T]
    double premium = 0.0;
    bool compliant = false;           // premium <= bound + tolerance
    double tolerance = 0.0;           // 3 se of the bound
    Estimate deflated_value;          // E_P[Z_T (U_T + V_T S*_T)]
    Estimate deflated_strategy;       // E_P[Z_T V_T S*_T], at most x for permissible strategies
    double hedge_initial = 0.0;
};

/// E_P[Z_T (U^psi_T + V_T S*_T)] with U^psi_T = sum_i psi_i (p S*_T / S*_0 - beta_i).
/// The bound is estimated on Q* paths disjoint from the real-world ones.
inline PremiumBoundReport deflated_value_check(const ModelParams& params, const InsuranceContractSpec& contract,
                                               const std::vector<double>& allocation, double hedge_initial,
                                               std::size_t n_paths, std::uint64_t seed,
                                               const PermissibleStrategy& strategy = PermissibleStrategy::gop(),
                                               const IfaOptions& opts = {}) {
    params.validate();
    contract.validate(params);
    for (double a : allocation)
        if (!(a >= 0.0)) throw ContractError("deflated_value_check: allocation must be nonnegative");
    if (!(hedge_initial >= 0.0)) throw ContractError("deflated_value_check: initial capital must be nonnegative");
    if (strategy.kind == PermissibleStrategy::Kind::Custom && !strategy.savings_units)
        throw ConfigError("deflated_value_check: custom strategy without positions");

    PremiumBoundReport rep;
    rep.bound = premium_bound(params, contract, n_paths, seed, opts, n_paths);
    rep.premium = contract.premium;
    rep.tolerance = 3.0 * rep.bound.se;
    rep.compliant = rep.premium <= rep.bound.value + rep.tolerance;
    rep.hedge_initial = hedge_initial;

    const auto grid = TimeGrid::uniform(contract.maturity, opts.step);
    const SgopSimulator sim(params, grid, Scheme::Euler, Measure::P, seed);
    const double s0 = params.s_star_0, v0 = hedge_initial / s0;
    std::vector<double> total(n_paths), strat(n_paths);
    std::vector<std::size_t> bad, negative;
    std::mutex mtx;
    parallel_for(n_paths, opts.threads, [&](std::size_t b, std::size_t e) {
        PathBuffer pb;
        std::vector<std::size_t> lbad, lneg;
        for (std::size_t i = b; i < e; ++i) {
            sim.simulate(i, pb);
            const double lam = std::exp(pb.log_lambda.back()), sT = pb.s_star.back();
            const PathView view{i, grid.times(), pb.s_star, {}, {}};
            double u_defl = 0.0;
            for (std::size_t c = 0; c < allocation.size(); ++c) {
                if (allocation[c] == 0.0) continue;
                const double beta = detail::checked_benefit(
                    contract, view, detail::contract_draw(seed, sim.stream_index(i), static_cast<std::uint32_t>(c)), i, lbad);
                u_defl += allocation[c] * (rep.premium - s0 * beta / sT);
            }
            const double vT = v0 == 0.0 ? 0.0 : detail::strategy_terminal(strategy, grid.times(), pb.s_star, v0);
            if (vT < 0.0) lneg.push_back(i);
            strat[i] = lam * s0 * vT;
            total[i] = lam * u_defl + strat[i];
        }
        std::lock_guard lock(mtx);
        bad.insert(bad.end(), lbad.begin(), lbad.end());
        negative.insert(negative.end(), lneg.begin(), lneg.end());
    });
    detail::throw_bad(bad, "deflated_value_check");
    if (!negative.empty()) {
        std::sort(negative.begin(), negative.end());
        throw PermissibilityError("deflated_value_check: strategy wealth became negative on " +
                                  std::to_string(negative.size()) + " paths (first: " + std::to_string(negative.front()) + ")");
    }
    rep.deflated_value = mean_and_se(total);
    rep.deflated_strategy = mean_and_se(strat);
    return rep;
}

struct ProbeOptions {
    std::vector<double> sizes{1.0, 10.0, 100.0};      // psi per contract
    std::vector<double> initial_capitals{0.0, 1e-3};  // x, savings-account units
    std::size_t contracts = 1;
    double switch_fraction = 0.5;                     // switch time as a fraction of T
    IfaOptions ifa;
};

struct ProbeRow {
    std::string strategy;
    double size = 0.0;
    double initial_capital = 0.0;
    double negative_fraction = 0.0;  // share of paths with U + V S* < 0
    double positive_fraction = 0.0;
    double min_value = 0.0;
    double mean_value = 0.0;
    bool violation = false;          // >= 0 on every sampled path and > 0 on some
};

struct ArbitrageProbeReport {
    std::string label = "falsification probe over a finite strategy family; absence of violations is not a proof";
    double multiplier = 0.0;
    Estimate bound;
    double premium = 0.0;
    std::vector<ProbeRow> rows;
    bool violation_found = false;
    std::size_t n_paths = 0;
};

/// Charges p = multiplier * bound and looks for allocations and strategies in
/// the declared family whose terminal value U + V S* is a.s. nonnegative and
/// sometimes positive on the sampled real-world paths.
inline ArbitrageProbeReport arbitrage_probe(const ModelParams& params, const InsuranceContractSpec& contract,
                                            double premium_multiplier, std::size_t n_paths, std::uint64_t seed,
                                            const ProbeOptions& opts = {}) {
    params.validate();
    contract.validate(params);
    if (!(premium_multiplier > 0.0)) throw ContractError("arbitrage_probe: premium multiplier must be positive");
    if (opts.contracts < 1) throw ConfigError("arbitrage_probe: needs at least one contract");
    ArbitrageProbeReport rep;
    rep.multiplier = premium_multiplier;
    rep.n_paths = n_paths;
    rep.bound = premium_bound(params, contract, n_paths, seed, opts.ifa, n_paths);
    rep.premium = premium_multiplier * rep.bound.value;

    const double T = contract.maturity, s0 = params.s_star_0;
    const std::vector<PermissibleStrategy> family{PermissibleStrategy::gop(), PermissibleStrategy::savings(),
                                                  PermissibleStrategy::switch_at(opts.switch_fraction * T)};
    const auto grid = TimeGrid::uniform(T, opts.ifa.step);
    const SgopSimulator sim(params, grid, Scheme::Euler, Measure::P, seed);
    // Per path: premium income minus benefits for one unit of every contract,
    // and the terminal S*-value of one savings-account unit under each strategy.
    const std::size_t nf = family.size();
    std::vector<double> insurance(n_paths), unit_value(nf * n_paths);
    std::vector<std::size_t> bad;
    std::mutex mtx;
    parallel_for(n_paths, opts.ifa.threads, [&](std::size_t b, std::size_t e) {
        PathBuffer pb;
        std::vector<std::size_t> lbad;
        for (std::size_t i = b; i < e; ++i) {
            sim.simulate(i, pb);
            const double sT = pb.s_star.back();
            const PathView view{i, grid.times(), pb.s_star, {}, {}};
            double u = 0.0;
            for (std::size_t c = 0; c < opts.contracts; ++c)
                u += rep.premium * sT / s0 -
                     detail::checked_benefit(contract, view,
                                             detail::contract_draw(seed, sim.stream_index(i), static_cast<std::uint32_t>(c)), i, lbad);
            insurance[i] = u;
            for (std::size_t f = 0; f < nf; ++f)
                unit_value[f * n_paths + i] = detail::strategy_terminal(family[f], grid.times(), pb.s_star, 1.0 / s0) * sT;
        }
        std::lock_guard lock(mtx);
        bad.insert(bad.end(), lbad.begin(), lbad.end());
    });
    detail::throw_bad(bad, "arbitrage_probe");

    std::vector<double> eps(n_paths);
    for (std::size_t f = 0; f < nf; ++f)
        for (double size : opts.sizes)
            for (double x : opts.initial_capitals) {
                ProbeRow row{family[f].name(), size, x};
                std::size_t neg = 0, pos = 0;
                for (std::size_t i = 0; i < n_paths; ++i) {
                    eps[i] = size * insurance[i] + x * unit_value[f * n_paths + i];
                    neg += eps[i] < 0.0;
                    pos += eps[i] > 0.0;
                }
                row.negative_fraction = static_cast<double>(neg) / static_cast<double>(n_paths);
                row.positive_fraction = static_cast<double>(pos) / static_cast<double>(n_paths);
                row.min_value = *std::min_element(eps.begin(), eps.end());
                row.mean_value = pairwise_sum(eps) / static_cast<double>(n_paths);
                row.violation = neg == 0 && pos > 0;
                rep.violation_found = rep.violation_found || row.violation;
                rep.rows.push_back(row);
            }
    return rep;
}

}  // namespace bnrm
