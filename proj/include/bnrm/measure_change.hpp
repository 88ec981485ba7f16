#pragma once

// Radon-Nikodym density Lambda = dQ*/dP restricted to F_t, the induced
// Q*-Brownian motion, and Monte Carlo diagnostics of the change of measure.

#include "bnrm/common.hpp"
#include "bnrm/model.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace bnrm {

struct DensityPath {
    TimeGrid grid;
    Matrix lambda;   // Lambda, 1 at t = 0
    Matrix mu_star;  // lambda*_t / theta_t at each grid time (left endpoint convention)
    std::size_t mu_cap_hits = 0;

    std::size_t n_paths() const noexcept { return static_cast<std::size_t>(lambda.rows()); }
};

struct DensityOptions {
    double mu_cap = 1e6;
};

namespace detail {

inline void fill_mu_star(const ModelParams& params, const PathSet& paths, const StepTable& st, double cap,
                         DensityPath& out) {
    const auto n = paths.s_star.rows(), nt = paths.s_star.cols();
    out.mu_star.resize(n, nt);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < nt; ++k) {
            const auto j = static_cast<std::size_t>(k) * st.substeps;
            if (j < st.size()) {
                const double raw = st.lambda[j] * std::sqrt(std::max(paths.s_star(i, k), 0.0)) * st.inv_sqrt_intensity[j];
                out.mu_star(i, k) = std::min(raw, cap);
                if (raw > cap) ++out.mu_cap_hits;
            } else {
                const double t = paths.grid[static_cast<std::size_t>(k)];
                out.mu_star(i, k) = std::min(params.net_risk_adjusted_return(t) / volatility_theta(params, t, paths.s_star(i, k)), cap);
            }
        }
}

}  // namespace detail

/// Rebuilds Lambda from stored P-Brownian increments by exact log-Euler of
/// the stochastic exponential: log Lambda += -mu dB - mu^2 dt / 2.
inline DensityPath simulate_density(const ModelParams& params, const PathSet& paths, DensityOptions opts = {}) {
    if (paths.measure != Measure::P) throw ContractError("simulate_density: paths must be simulated under P");
    if (!paths.has_increments())
        throw ContractError("simulate_density: PathSet carries no Brownian increments (simulate with store_increments)");
    if (paths.substeps != 1)
        throw ContractError("simulate_density: increments aggregated over substeps; simulate with substeps = 1");
    const auto st = StepTable::build(params, paths.grid, 1);
    DensityPath d;
    d.grid = paths.grid;
    const auto n = paths.s_star.rows(), nt = paths.s_star.cols();
    d.lambda.resize(n, nt);
    for (Eigen::Index i = 0; i < n; ++i) {
        double log_lambda = 0.0;
        d.lambda(i, 0) = 1.0;
        for (Eigen::Index k = 0; k + 1 < nt; ++k) {
            const auto j = static_cast<std::size_t>(k);
            const double mu = market_price_of_risk(st.lambda[j], st.inv_sqrt_intensity[j],
                                                   std::sqrt(std::max(paths.s_star(i, k), 0.0)), opts.mu_cap);
            log_lambda += -mu * paths.brownian_increments(i, k) - 0.5 * mu * mu * st.dt[j];
            d.lambda(i, k + 1) = std::exp(log_lambda);
        }
    }
    detail::fill_mu_star(params, paths, st, opts.mu_cap, d);
    return d;
}

/// Density co-simulated with the paths (any number of substeps).
inline DensityPath density_of(const ModelParams& params, const PathSet& paths, DensityOptions opts = {}) {
    DensityPath d;
    d.grid = paths.grid;
    d.lambda = paths.lambda_density;
    detail::fill_mu_star(params, paths, StepTable::build(params, paths.grid, paths.substeps), opts.mu_cap, d);
    return d;
}

struct MartingaleCheckpoint {
    double time = 0.0;
    double mean = 0.0;
    double se = 0.0;
    double z = 0.0;
};

/// Estimates E_P[Lambda_t] at each checkpoint (snapped to the nearest grid time).
inline std::vector<MartingaleCheckpoint> martingale_diagnostic(const DensityPath& density,
                                                               const std::vector<double>& checkpoints) {
    if (density.lambda.size() == 0) throw ContractError("martingale_diagnostic: empty density");
    std::vector<MartingaleCheckpoint> out;
    std::vector<double> col(density.n_paths());
    for (double t : checkpoints) {
        const std::size_t k = density.grid.nearest(t);
        for (std::size_t i = 0; i < col.size(); ++i)
            col[i] = density.lambda(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        const auto est = mean_and_se(col);
        const double dev = std::abs(est.value - 1.0);
        const double z = est.se > 0.0 ? dev / est.se : (dev == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        out.push_back({density.grid[k], est.value, est.se, z});
    }
    return out;
}

/// Same diagnostic for a terminal-only sample of Lambda.
inline MartingaleCheckpoint martingale_diagnostic(double time, std::span<const double> lambda_values) {
    const auto est = mean_and_se(lambda_values);
    const double dev = std::abs(est.value - 1.0);
    const double z = est.se > 0.0 ? dev / est.se : (dev == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    return {time, est.value, est.se, z};
}

using PathFunctional = std::function<double(const PathView&)>;

/// E*[payoff] = E_P[Lambda_T payoff] by Bayes' rule, T the last grid time.
inline Estimate reweight_expectation(const PathSet& paths, const DensityPath& density, const PathFunctional& payoff) {
    if (density.n_paths() != paths.n_paths() || !(density.grid == paths.grid))
        throw ContractError("reweight_expectation: density and paths must share grid and path count");
    const std::size_t n = paths.n_paths();
    const auto last = density.lambda.cols() - 1;
    std::vector<double> values(n);
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = payoff(path_view(paths, i));
        if (!std::isfinite(f)) bad.push_back(i);
        values[i] = density.lambda(static_cast<Eigen::Index>(i), last) * f;
    }
    if (!bad.empty()) throw DataError("reweight_expectation: non-finite payoff", bad);
    return mean_and_se(values);
}

/// Extended-market GOP S** = (S*/S*_0) S**_0 / Lambda.
inline Matrix extended_gop(const ModelParams& params, const PathSet& paths, double s_star_star_0 = 1.0) {
    Matrix out(paths.s_star.rows(), paths.s_star.cols());
    out.array() = paths.s_star.array() / params.s_star_0 * s_star_star_0 / paths.lambda_density.array();
    return out;
}

/// Increments of W* = B + int mu* ds on each grid interval; a Q*-Brownian motion.
inline Matrix girsanov_increments(const PathSet& paths, const DensityPath& density) {
    if (!paths.has_increments()) throw ContractError("girsanov_increments: PathSet carries no Brownian increments");
    Matrix out(paths.brownian_increments.rows(), paths.brownian_increments.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index k = 0; k < out.cols(); ++k)
            out(i, k) = paths.brownian_increments(i, k) +
                        density.mu_star(i, k) * (paths.grid[static_cast<std::size_t>(k) + 1] - paths.grid[static_cast<std::size_t>(k)]);
    return out;
}

}  // namespace bnrm
