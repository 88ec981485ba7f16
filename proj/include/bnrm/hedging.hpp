#pragma once

// Benchmark-neutral decomposition of claims priced as functions of (t, S*_t)
// and the induced BNRM hedge: positions in the savings account (zeta0) and in
// S* (zeta1), plus the orthogonal monitoring process eta.

#include "bnrm/common.hpp"
#include "bnrm/insurance.hpp"
#include "bnrm/model.hpp"
#include "bnrm/pricing.hpp"

#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace bnrm {

using PriceHatFn = std::function<double(double t, double s)>;

/// Central difference (f(s+h) - f(s-h)) / 2h with h = bump max(1, s).
inline double delta_bump_reprice(const PriceHatFn& f, double t, double s_star, double bump = 1e-4) {
    if (!(s_star > 0.0) || !(bump > 0.0)) throw DomainError("delta_bump_reprice: s_star and bump must be positive");
    double h = bump * std::max(1.0, s_star);
    if (h >= s_star) h = 0.5 * s_star;
    const double up = f(t, s_star + h), down = f(t, s_star - h);
    if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalError("delta_bump_reprice: pricing function not finite at s +/- h");
    return (up - down) / (2.0 * h);
}

/// E*[f(S*_T)/S*_T | S*_t = s] by adaptive Gauss-Kronrod over the BESQ(4) transition law.
inline double terminal_payoff_price_hat(const ModelParams& params, const std::function<double(double)>& f, double t,
                                        double s, double T) {
    if (!(t < T)) return f(s) / s;
    const double delta = transformed_time_increment(params, t, T);
    const double nc = s / delta;
    const boost::math::non_central_chi_squared law(4.0, nc);
    const double sd = std::sqrt(2.0 * (4.0 + 2.0 * nc));
    const double lo = std::max(0.0, 4.0 + nc - 14.0 * sd), hi = 4.0 + nc + 14.0 * sd + 20.0;
    auto g = [&](double x) {
        if (x <= 0.0) return 0.0;
        const double y = delta * x;
        return f(y) / y * boost::math::pdf(law, x);
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, lo, hi, 12, 1e-11);
}

/// S*-denominated market price factor of a supported claim as a function of (t, S*_t).
/// For the binary claim this is P(t,T)/S*_t, to be multiplied by P^i_t.
inline PriceHatFn market_price_hat(const ModelParams& params, const Claim& claim) {
    const double T = claim.maturity;
    switch (claim.kind) {
        case ClaimKind::ZeroCouponBond:
        case ClaimKind::Binary:
            return [params, T](double t, double s) { return t < T ? zcb_price_hat(params, t, s, T) : 1.0 / s; };
        case ClaimKind::Numeraire: return [](double, double) { return 1.0; };
        case ClaimKind::Zero: return [](double, double) { return 0.0; };
        case ClaimKind::TerminalPayoff: {
            auto f = claim.terminal;
            return [params, f, T](double t, double s) { return terminal_payoff_price_hat(params, f, t, s, T); };
        }
        case ClaimKind::PathDependent: break;
    }
    throw ContractError("claim '" + claim.id + "': no BN decomposition for path-dependent claims "
                        "(supported: zero-coupon bond, numeraire, zero, terminal f(S*_T), binary insurance claim)");
}

struct HedgeOptions {
    double bump = 1e-4;
    std::optional<EventModel> event_model;  // binary claims; default Bernoulli(event_prob)
};

/// Per-path BN decomposition on a time grid.
struct HedgeDecomposition {
    TimeGrid grid;
    Matrix price_hat;  // H*_t / S*_t
    Matrix zeta0;      // savings-account units
    Matrix zeta1;      // units of S*
    Matrix eta;        // monitoring process, eta_0 = 0
    Matrix phi_star;   // loading on W*
    Matrix phi_prime;  // loading on W'
};

namespace detail {

/// Scratch arrays of one hedged path.
struct HedgePathBuffer {
    std::vector<double> price_hat, zeta0, zeta1, eta, phi_star, phi_prime;

    void resize(std::size_t n) {
        for (auto* v : {&price_hat, &zeta0, &zeta1, &eta, &phi_star, &phi_prime}) v->assign(n, 0.0);
    }
};

/// BN decomposition along one path. `prob` is the continuous part of P^i
/// (empty for market-only claims) and `indicator` the resolved 1_A.
inline void decompose_path(const ModelParams& params, const Claim& claim, const PriceHatFn& market,
                           std::span<const double> times, std::span<const double> s, std::span<const double> prob,
                           double indicator, double event_vol, double bump, HedgePathBuffer& out) {
    const std::size_t n = times.size();
    out.resize(n);
    const bool binary = claim.kind == ClaimKind::Binary;
    const bool trivial = claim.kind == ClaimKind::Numeraire || claim.kind == ClaimKind::Zero;
    const std::size_t last = n - 1;
    double eta = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = times[k], x0 = 1.0 / s[k];
        const double pk = binary ? prob[k] : 1.0;
        if (k < last) {
            const double m = market(t, s[k]);
            out.price_hat[k] = m * pk;
            if (!trivial) {
                const double theta = volatility_theta(params, t, s[k]);
                const double dm = delta_bump_reprice(market, t, s[k], bump);
                out.phi_star[k] = dm * pk * theta * s[k];
                out.zeta0[k] = -out.phi_star[k] / (theta * x0);
                if (binary) out.phi_prime[k] = m * event_vol * pk * (1.0 - pk);
            }
            out.eta[k] = eta;
            if (binary) eta += m * (prob[k + 1] - pk);
        } else {
            // Maturity: the price is the delivered payoff; positions are frozen.
            const double m = 1.0 / s[k];
            if (binary) eta += m * (indicator - pk);
            out.price_hat[k] = binary ? m * indicator : market(t, s[k]);
            out.eta[k] = eta;
            if (k > 0) {
                out.zeta0[k] = out.zeta0[k - 1];
                out.phi_star[k] = out.phi_star[k - 1];
                out.phi_prime[k] = out.phi_prime[k - 1];
            }
        }
        // Value matching: zeta0 X0 + zeta1 = price_hat - eta.
        out.zeta1[k] = out.price_hat[k] - out.eta[k] - out.zeta0[k] * x0;
    }
}

inline double terminal_target(const Claim& claim, double s_T, double indicator) {
    switch (claim.kind) {
        case ClaimKind::ZeroCouponBond: return 1.0 / s_T;
        case ClaimKind::Numeraire: return 1.0;
        case ClaimKind::Zero: return 0.0;
        case ClaimKind::Binary: return indicator / s_T;
        case ClaimKind::TerminalPayoff: return claim.terminal(s_T) / s_T;
        case ClaimKind::PathDependent: break;
    }
    throw ContractError("unsupported claim family");
}

inline EventModel event_model_for(const Claim& claim, const HedgeOptions& opts) {
    EventModel m = opts.event_model.value_or(EventModel::bernoulli(claim.event_prob));
    m.validate();
    return m;
}

}  // namespace detail

/// BN decomposition and BNRM strategy of `claim` along Q* paths. Binary claims
/// need the event probability paths; the last grid time must be the maturity.
inline HedgeDecomposition bnrm_strategy_path(const ModelParams& params, const Claim& claim, const PathSet& paths,
                                             const EventPaths* events = nullptr, const HedgeOptions& opts = {}) {
    if (paths.measure != Measure::QStar) throw ContractError("bnrm_strategy_path: paths must be simulated under Q*");
    if (std::abs(paths.grid.back() - claim.maturity) > 1e-9)
        throw ContractError("bnrm_strategy_path: grid must end at the claim maturity");
    const auto market = market_price_hat(params, claim);
    const bool binary = claim.kind == ClaimKind::Binary;
    if (binary && (!events || events->probability.rows() != paths.s_star.rows() || events->probability.cols() != paths.s_star.cols()))
        throw ContractError("bnrm_strategy_path: binary claims need event paths on the same grid");

    HedgeDecomposition d;
    d.grid = paths.grid;
    const auto n = paths.s_star.rows(), nt = paths.s_star.cols();
    for (auto* m : {&d.price_hat, &d.zeta0, &d.zeta1, &d.eta, &d.phi_star, &d.phi_prime}) m->resize(n, nt);
    const double vol = binary ? events->model.volatility : 0.0;
    detail::HedgePathBuffer buf;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto prob = binary ? row_span(events->probability, idx) : std::span<const double>{};
        detail::decompose_path(params, claim, market, paths.grid.times(), row_span(paths.s_star, idx), prob,
                               binary ? events->indicator[idx] : 0.0, vol, opts.bump, buf);
        for (Eigen::Index k = 0; k < nt; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            d.price_hat(i, k) = buf.price_hat[kk];
            d.zeta0(i, k) = buf.zeta0[kk];
            d.zeta1(i, k) = buf.zeta1[kk];
            d.eta(i, k) = buf.eta[kk];
            d.phi_star(i, k) = buf.phi_star[kk];
            d.phi_prime(i, k) = buf.phi_prime[kk];
        }
    }
    return d;
}

struct DeliveryReport {
    std::vector<double> terminal_error;  // V_T - H_T/S*_T
    double mean_error = 0.0;
    double se = 0.0;
    double rmse = 0.0;
    double max_abs = 0.0;
};

inline DeliveryReport summarize_errors(std::vector<double> errors) {
    DeliveryReport r;
    const auto est = mean_and_se(errors);
    r.mean_error = est.value;
    r.se = est.se;
    std::vector<double> sq(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i) {
        sq[i] = errors[i] * errors[i];
        r.max_abs = std::max(r.max_abs, std::abs(errors[i]));
    }
    r.rmse = std::sqrt(pairwise_sum(sq) / static_cast<double>(sq.size()));
    r.terminal_error = std::move(errors);
    return r;
}

/// Reconstructs V_T = zeta_0^T X_0 + sum zeta_k^T (X_{k+1} - X_k) + eta_T and compares with H_T/S*_T.
inline DeliveryReport delivery_check(const HedgeDecomposition& decomp, const Claim& claim, const PathSet& paths,
                                     const EventPaths* events = nullptr) {
    if (!(decomp.grid == paths.grid) || decomp.zeta0.rows() != paths.s_star.rows())
        throw ContractError("delivery_check: decomposition and paths must share the grid and paths");
    if (claim.kind == ClaimKind::Binary && !events) throw ContractError("delivery_check: binary claims need event paths");
    const auto n = paths.s_star.rows(), last = paths.s_star.cols() - 1;
    std::vector<double> err(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        // X = (X0, 1): the S* account is constant in S* units.
        double v = decomp.zeta0(i, 0) * paths.x0(i, 0) + decomp.zeta1(i, 0);
        for (Eigen::Index k = 0; k < last; ++k) v += decomp.zeta0(i, k) * (paths.x0(i, k + 1) - paths.x0(i, k));
        v += decomp.eta(i, last);
        const double ind = events ? events->indicator[static_cast<std::size_t>(i)] : 0.0;
        err[static_cast<std::size_t>(i)] = v - detail::terminal_target(claim, paths.s_star(i, last), ind);
    }
    return summarize_errors(std::move(err));
}

struct CovariationReport {
    double mean = 0.0;
    double se = 0.0;
    double z = 0.0;
};

inline CovariationReport covariation_report(std::span<const double> per_path) {
    const auto est = mean_and_se(per_path);
    const double z = est.se > 0.0 ? std::abs(est.value) / est.se : (est.value == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    return {est.value, est.se, z};
}

/// Realized covariation [eta, X0]_T = sum d(eta) d(X0), averaged over paths.
inline CovariationReport orthogonality_check(const HedgeDecomposition& decomp, const PathSet& paths) {
    if (!(decomp.grid == paths.grid) || decomp.eta.rows() != paths.x0.rows())
        throw ContractError("orthogonality_check: decomposition and paths must share the grid and paths");
    std::vector<double> cov(static_cast<std::size_t>(paths.x0.rows()), 0.0);
    for (Eigen::Index i = 0; i < paths.x0.rows(); ++i)
        for (Eigen::Index k = 0; k + 1 < paths.x0.cols(); ++k)
            cov[static_cast<std::size_t>(i)] += (decomp.eta(i, k + 1) - decomp.eta(i, k)) * (paths.x0(i, k + 1) - paths.x0(i, k));
    return covariation_report(cov);
}

struct MergedPosition {
    Matrix delta0;  // savings account
    Matrix delta1;  // S*
};

/// delta = zeta + eta zeta*^T, with zeta* the stock-GOP strategy given per grid
/// time as rows (zeta*0, zeta*1) and required to satisfy zeta*^T X = 1.
inline MergedPosition merge_monitoring_into_position(const HedgeDecomposition& decomp, const PathSet& paths,
                                                     const Matrix& zeta_star, double tol = 1e-10) {
    const auto n = decomp.zeta0.rows(), nt = decomp.zeta0.cols();
    if (zeta_star.rows() != nt || zeta_star.cols() != 2 || paths.x0.rows() != n || paths.x0.cols() != nt)
        throw ContractError("merge_monitoring_into_position: shape mismatch");
    MergedPosition out{Matrix(n, nt), Matrix(n, nt)};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < nt; ++k) {
            const double x0 = paths.x0(i, k);
            const double gop_value = zeta_star(k, 0) * x0 + zeta_star(k, 1);
            if (std::abs(gop_value - 1.0) > tol)
                throw ContractError("merge_monitoring_into_position: zeta*^T X differs from 1 by " + std::to_string(gop_value - 1.0));
            out.delta0(i, k) = decomp.zeta0(i, k) + decomp.eta(i, k) * zeta_star(k, 0);
            out.delta1(i, k) = decomp.zeta1(i, k) + decomp.eta(i, k) * zeta_star(k, 1);
            const double lhs = out.delta0(i, k) * x0 + out.delta1(i, k);
            const double rhs = decomp.zeta0(i, k) * x0 + decomp.zeta1(i, k) + decomp.eta(i, k);
            if (std::abs(lhs - rhs) > tol * std::max(1.0, std::abs(rhs)))
                throw NumericalError("merge_monitoring_into_position: delta^T X != zeta^T X + eta");
        }
    return out;
}

/// The stock GOP of the simplified model: one unit of S*, nothing in the savings account.
inline Matrix stock_gop_strategy(const TimeGrid& grid) {
    Matrix z(static_cast<Eigen::Index>(grid.size()), 2);
    z.col(0).setZero();
    z.col(1).setOnes();
    return z;
}

// ---------------------------------------------------------------------------
// Streaming hedge simulation
// ---------------------------------------------------------------------------

struct HedgeRunOptions {
    double step = 1.0 / 250.0;                   // simulation grid step
    std::vector<std::size_t> rebalance_every{1};  // hedge frequencies, in simulation steps, on common paths
    std::vector<double> checkpoints;             // report times (snapped to the simulation grid)
    unsigned threads = 1;
    HedgeOptions hedge;
    NoncentralSampler sampler = NoncentralSampler::PoissonMixture;
    bool continuous_covariation = false;  // exclude the resolution jump from [eta, X0]
};

struct HedgeCheckpoint {
    double time = 0.0;
    Estimate price_hat;
    Estimate eta;
};

struct RebalanceResult {
    std::size_t every = 1;
    double step = 0.0;  // rebalancing interval
    DeliveryReport delivery;
};

struct HedgeRunReport {
    double initial_price_hat = 0.0;
    std::size_t n_steps = 0;
    DeliveryReport delivery;                 // first rebalancing frequency
    std::vector<RebalanceResult> rebalancing;
    CovariationReport orthogonality;         // on the simulation grid
    std::vector<HedgeCheckpoint> checkpoints;
};

/// Simulates S* exactly under Q* on a grid of the given step, hedges each
/// path with the BNRM strategy at every requested rebalancing frequency and
/// aggregates per-path results without storing the trajectories.
inline HedgeRunReport simulate_bnrm_hedge(const ModelParams& params, const Claim& claim, std::size_t n_paths,
                                          std::uint64_t seed, const HedgeRunOptions& opts = {}) {
    params.validate();
    if (n_paths < 2) throw ContractError("simulate_bnrm_hedge: needs at least 2 paths");
    if (opts.rebalance_every.empty()) throw ConfigError("simulate_bnrm_hedge: no rebalancing frequency");
    const auto grid = TimeGrid::uniform(claim.maturity, opts.step);
    const std::size_t last = grid.steps();
    for (std::size_t r : opts.rebalance_every)
        if (r == 0 || last % r != 0)
            throw ConfigError("simulate_bnrm_hedge: rebalance_every must divide the number of simulation steps");
    const auto market = market_price_hat(params, claim);
    const bool binary = claim.kind == ClaimKind::Binary;
    const auto model = detail::event_model_for(claim, opts.hedge);
    SimulationOptions so;
    so.sampler = opts.sampler;
    const SgopSimulator sim(params, grid, Scheme::Exact, Measure::QStar, seed, so);

    std::vector<std::size_t> cp_index;
    for (double t : opts.checkpoints) cp_index.push_back(grid.nearest(t));
    const std::size_t n_cp = cp_index.size(), n_freq = opts.rebalance_every.size();
    std::vector<double> err(n_freq * n_paths), cov(n_paths), cp_price(n_cp * n_paths), cp_eta(n_cp * n_paths);

    parallel_for(n_paths, opts.threads, [&](std::size_t begin, std::size_t end) {
        PathBuffer pb;
        detail::HedgePathBuffer hb;
        std::vector<double> prob(binary ? grid.size() : 0);
        for (std::size_t i = begin; i < end; ++i) {
            sim.simulate(i, pb);
            double ind = 0.0;
            if (binary) ind = simulate_event_path(model, grid, seed, sim.stream_index(i), 0, prob);
            detail::decompose_path(params, claim, market, grid.times(), pb.s_star, prob, ind, model.volatility,
                                   opts.hedge.bump, hb);
            const double target = detail::terminal_target(claim, pb.s_star[last], ind);
            for (std::size_t f = 0; f < n_freq; ++f) {
                const std::size_t r = opts.rebalance_every[f];
                double v = hb.zeta0[0] / pb.s_star[0] + hb.zeta1[0];
                for (std::size_t k = 0; k < last; k += r) v += hb.zeta0[k] * (1.0 / pb.s_star[k + r] - 1.0 / pb.s_star[k]);
                err[f * n_paths + i] = v + hb.eta[last] - target;
            }
            double c = 0.0;
            for (std::size_t k = 0; k < last; ++k) {
                const double dx0 = 1.0 / pb.s_star[k + 1] - 1.0 / pb.s_star[k];
                double deta = hb.eta[k + 1] - hb.eta[k];
                if (opts.continuous_covariation && k + 1 == last && binary)
                    deta = (prob[k + 1] - prob[k]) * market(grid[k], pb.s_star[k]);
                c += deta * dx0;
            }
            cov[i] = c;
            for (std::size_t j = 0; j < n_cp; ++j) {
                cp_price[j * n_paths + i] = hb.price_hat[cp_index[j]];
                cp_eta[j * n_paths + i] = hb.eta[cp_index[j]];
            }
        }
    });

    HedgeRunReport rep;
    rep.n_steps = last;
    rep.initial_price_hat = market(0.0, params.s_star_0) * (binary ? model.probability : 1.0);
    for (std::size_t f = 0; f < n_freq; ++f) {
        std::vector<double> e(err.begin() + static_cast<std::ptrdiff_t>(f * n_paths),
                              err.begin() + static_cast<std::ptrdiff_t>((f + 1) * n_paths));
        rep.rebalancing.push_back({opts.rebalance_every[f], opts.rebalance_every[f] * (grid.back() / static_cast<double>(last)),
                                   summarize_errors(std::move(e))});
    }
    rep.delivery = rep.rebalancing.front().delivery;
    rep.orthogonality = covariation_report(cov);
    for (std::size_t j = 0; j < n_cp; ++j)
        rep.checkpoints.push_back({grid[cp_index[j]], mean_and_se(std::span(cp_price).subspan(j * n_paths, n_paths)),
                                   mean_and_se(std::span(cp_eta).subspan(j * n_paths, n_paths))});
    return rep;
}

}  // namespace bnrm
