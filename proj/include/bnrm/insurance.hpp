#pragma once

// Insurance event probabilities P^i_t = P(A^i | F_t), driven by Brownian
// motions W'^i independent of the market.

#include "bnrm/common.hpp"
#include "bnrm/model.hpp"
#include "bnrm/rng.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace bnrm {

namespace lanes {
/// Resolution draw 1_{A^i} of claim i, separate from its W'^i increments.
inline constexpr std::uint32_t kResolution = 0x80000000u;
/// Common factor shared by all claims of a path when drivers are correlated.
inline constexpr std::uint32_t kInsuranceCommon = 0xFFFFFFFFu;
}  // namespace lanes

struct EventModel {
    enum class Kind { Bernoulli, WrightFisher };

    Kind kind = Kind::Bernoulli;
    double probability = 0.01;       // p (Bernoulli) or P_0 (Wright-Fisher)
    double volatility = 0.0;         // varsigma in dP = varsigma P (1 - P) dW'
    double driver_correlation = 0.0;  // pairwise correlation of the W'^i

    static EventModel bernoulli(double p) { return {Kind::Bernoulli, p, 0.0, 0.0}; }
    static EventModel wright_fisher(double varsigma, double p0, double correlation = 0.0) {
        return {Kind::WrightFisher, p0, varsigma, correlation};
    }

    void validate() const {
        if (!(probability >= 0.0 && probability <= 1.0)) throw ConfigError("event probability must lie in [0,1]");
        if (kind == Kind::WrightFisher && !(volatility >= 0.0))
            throw ConfigError("Wright-Fisher volatility must be positive (0 gives the deterministic limit)");
        if (!(driver_correlation >= 0.0 && driver_correlation <= 1.0))
            throw ConfigError("driver_correlation must lie in [0,1]");
    }
};

/// Simulates P^i on `grid` for one path and claim slot into `p_out` and
/// returns the resolved indicator 1_{A^i} ~ Bernoulli(P^i_T).
///
/// Wright-Fisher paths use Euler steps on Y = logit P,
/// dY = varsigma dW' + varsigma^2 (P - 1/2) dt, so P stays in (0,1); 0 and 1 absorb.
/// `common` holds N(0,1) draws of the shared factor when drivers are correlated.
inline double simulate_event_path(const EventModel& model, const TimeGrid& grid, std::uint64_t seed,
                                  std::uint64_t stream, std::uint32_t slot, std::span<double> p_out,
                                  std::span<const double> common = {}) {
    const std::size_t nt = grid.size();
    if (model.kind == EventModel::Kind::Bernoulli || model.volatility == 0.0 || model.probability == 0.0 ||
        model.probability == 1.0) {
        std::fill(p_out.begin(), p_out.begin() + static_cast<std::ptrdiff_t>(nt), model.probability);
        if (model.kind == EventModel::Kind::Bernoulli) {
            RandomStream r({seed, stream, lanes::kInsurance + slot});
            return r.uniform() < model.probability ? 1.0 : 0.0;
        }
    } else {
        RandomStream r({seed, stream, lanes::kInsurance + slot});
        const double v = model.volatility;
        const double rho = model.driver_correlation;
        const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
        double y = std::log(model.probability) - std::log1p(-model.probability);
        p_out[0] = model.probability;
        for (std::size_t k = 0; k + 1 < nt; ++k) {
            const double dt = grid[k + 1] - grid[k];
            double z = r.normal();
            if (rho > 0.0) z = a * common[k] + b * z;
            const double p = p_out[k];
            y += v * std::sqrt(dt) * z + v * v * (p - 0.5) * dt;
            p_out[k + 1] = 1.0 / (1.0 + std::exp(-y));
        }
    }
    RandomStream res({seed, stream, lanes::kResolution + slot});
    return res.uniform() < p_out[nt - 1] ? 1.0 : 0.0;
}

/// Standard normal draws of the common insurance factor for one path.
inline void common_factor(std::uint64_t seed, std::uint64_t stream, std::span<double> out) {
    RandomStream r({seed, stream, lanes::kInsuranceCommon});
    for (double& z : out) z = r.normal();
}

/// P^i paths of one claim across a PathSet, with resolved indicators.
struct EventPaths {
    Matrix probability;
    std::vector<double> indicator;
    EventModel model;
};

inline EventPaths simulate_event_paths(const EventModel& model, const PathSet& paths, std::uint32_t slot = 0) {
    model.validate();
    EventPaths ev;
    ev.model = model;
    ev.probability.resize(paths.s_star.rows(), paths.s_star.cols());
    ev.indicator.resize(paths.n_paths());
    std::vector<double> buf(paths.n_times());
    std::vector<double> common(model.driver_correlation > 0.0 ? paths.n_times() : 0);
    for (std::size_t i = 0; i < paths.n_paths(); ++i) {
        if (!common.empty()) common_factor(paths.seed, paths.stream_ids[i], common);
        ev.indicator[i] = simulate_event_path(model, paths.grid, paths.seed, paths.stream_ids[i], slot, buf, common);
        for (std::size_t k = 0; k < buf.size(); ++k) ev.probability(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = buf[k];
    }
    return ev;
}

}  // namespace bnrm
