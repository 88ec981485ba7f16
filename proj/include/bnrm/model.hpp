#pragma once

// Stock growth-optimal portfolio (GOP) model: parameters, time grids, the
// multi-asset GOP weight solver and path simulation under P and Q*.

#include "bnrm/common.hpp"
#include "bnrm/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace bnrm {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Right-continuous step function of time: values[j] on [breaks[j], breaks[j+1]).
class PiecewiseConstant {
public:
    PiecewiseConstant(double value = 0.0) : breaks_{0.0}, values_{value} {}  // NOLINT(implicit)

    PiecewiseConstant(std::vector<double> breaks, std::vector<double> values)
        : breaks_(std::move(breaks)), values_(std::move(values)) {
        if (breaks_.empty() || breaks_.size() != values_.size())
            throw ConfigError("piecewise-constant function needs one value per breakpoint");
        if (breaks_.front() != 0.0) throw ConfigError("first breakpoint must be 0");
        for (std::size_t j = 1; j < breaks_.size(); ++j)
            if (!(breaks_[j] > breaks_[j - 1])) throw ConfigError("breakpoints must be strictly increasing");
        for (double v : values_)
            if (!std::isfinite(v)) throw ConfigError("piecewise-constant values must be finite");
    }

    double operator()(double t) const {
        const auto it = std::upper_bound(breaks_.begin(), breaks_.end(), t);
        const std::size_t j = it == breaks_.begin() ? 0 : static_cast<std::size_t>(it - breaks_.begin()) - 1;
        return values_[j];
    }

    /// Exact integral over [t0, t1].
    double integral(double t0, double t1) const {
        double total = 0.0;
        for (std::size_t j = 0; j < breaks_.size(); ++j) {
            const double lo = std::max(t0, breaks_[j]);
            const double hi = j + 1 < breaks_.size() ? std::min(t1, breaks_[j + 1]) : t1;
            if (hi > lo) total += values_[j] * (hi - lo);
        }
        return total;
    }

    double sup_abs() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

    bool is_zero() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
    }

    const std::vector<double>& breaks() const noexcept { return breaks_; }
    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::vector<double> breaks_;
    std::vector<double> values_;
};

/// Simplified stock-GOP model in savings-account units.
struct ModelParams {
    double activity = 0.05;                          // a, per year
    double initial_activity_time = std::log(0.2);    // tau_0
    double s_star_0 = 1.0;                           // S*_0
    PiecewiseConstant net_risk_adjusted_return{0.05};  // lambda*_t, per year
    double horizon = 30.0;                           // T*, years

    void validate() const {
        if (!(activity > 0.0) || !std::isfinite(activity)) throw ConfigError("model.activity must be positive");
        if (!std::isfinite(initial_activity_time)) throw ConfigError("model.initial_activity_time must be finite");
        if (!(s_star_0 > 0.0) || !std::isfinite(s_star_0)) throw ConfigError("model.s_star_0 must be positive");
        if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("model.horizon must be positive");
    }

    /// a = 0.05, tau_0 = ln 0.2, S*_0 = 1, lambda* = 0.05, T* = 30.
    static ModelParams reference() { return {}; }
};

/// tau_t = tau_0 + a t.
inline double activity_time(const ModelParams& p, double t) {
    if (!(t >= 0.0)) throw DomainError("activity_time: t must be nonnegative");
    return p.initial_activity_time + p.activity * t;
}

/// BESQ(4) clock increment e^{tau_T} - e^{tau_t}.
inline double transformed_time_increment(const ModelParams& p, double t, double T) {
    if (!(t >= 0.0)) throw DomainError("transformed_time_increment: t must be nonnegative");
    if (!(T > t)) throw DomainError("transformed_time_increment: requires t < T");
    return std::exp(activity_time(p, t)) * std::expm1(p.activity * (T - t));
}

/// Drift of S* under Q*, 4 a e^{tau_t}; equals theta_t^2 S*_t.
inline double drift_intensity(const ModelParams& p, double t) {
    return 4.0 * p.activity * std::exp(activity_time(p, t));
}

/// theta_t = sqrt(4 a e^{tau_t} / S*_t).
inline double volatility_theta(const ModelParams& p, double t, double s_star) {
    if (!(s_star > 0.0)) throw DomainError("volatility_theta: s_star must be positive");
    return std::sqrt(drift_intensity(p, t) / s_star);
}

// ---------------------------------------------------------------------------
// Time grids
// ---------------------------------------------------------------------------

class TimeGrid {
public:
    TimeGrid() : times_{0.0} {}

    explicit TimeGrid(std::vector<double> times) : times_(std::move(times)) {
        if (times_.empty() || times_.front() != 0.0) throw ConfigError("time grid must start at 0");
        for (std::size_t k = 1; k < times_.size(); ++k)
            if (!(times_[k] > times_[k - 1]) || !std::isfinite(times_[k]))
                throw ConfigError("time grid must be strictly increasing");
    }

    /// Equally spaced grid on [0, horizon] whose spacing does not exceed `step`.
    static TimeGrid uniform(double horizon, double step) {
        if (!(horizon > 0.0) || !(step > 0.0)) throw ConfigError("uniform grid needs positive horizon and step");
        const auto n = static_cast<std::size_t>(std::ceil(horizon / step - 1e-9));
        std::vector<double> t(n + 1);
        for (std::size_t k = 0; k <= n; ++k) t[k] = horizon * static_cast<double>(k) / static_cast<double>(n);
        t[n] = horizon;
        return TimeGrid(std::move(t));
    }

    /// Sorted union of {0} and the given positive times.
    static TimeGrid from_points(std::vector<double> points) {
        points.push_back(0.0);
        std::sort(points.begin(), points.end());
        points.erase(std::unique(points.begin(), points.end()), points.end());
        return TimeGrid(std::move(points));
    }

    std::size_t size() const noexcept { return times_.size(); }
    std::size_t steps() const noexcept { return times_.size() - 1; }
    double operator[](std::size_t k) const { return times_[k]; }
    double back() const { return times_.back(); }
    const std::vector<double>& times() const noexcept { return times_; }

    /// Index of the grid point within `tol` of t.
    std::optional<std::size_t> find(double t, double tol = 1e-9) const {
        const auto it = std::lower_bound(times_.begin(), times_.end(), t - tol);
        if (it != times_.end() && std::abs(*it - t) <= tol) return static_cast<std::size_t>(it - times_.begin());
        return std::nullopt;
    }

    std::size_t nearest(double t) const {
        const auto it = std::lower_bound(times_.begin(), times_.end(), t);
        if (it == times_.end()) return times_.size() - 1;
        const auto k = static_cast<std::size_t>(it - times_.begin());
        if (k > 0 && std::abs(times_[k - 1] - t) <= std::abs(*it - t)) return k - 1;
        return k;
    }

    bool operator==(const TimeGrid&) const = default;

private:
    std::vector<double> times_;
};

// ---------------------------------------------------------------------------
// Multi-asset GOP weights
// ---------------------------------------------------------------------------

struct MarketCoefficients {
    Eigen::VectorXd drift;      // a_t
    Eigen::MatrixXd diffusion;  // b_t, nonsingular
};

struct GopSolution {
    Eigen::VectorXd pi_star;          // stock-GOP weights, sum to 1
    double lambda_star = 0.0;         // net risk-adjusted return
    Eigen::VectorXd sigma_star;       // b^T pi*
    Eigen::VectorXd sigma_star_star;  // lambda* b^{-1} 1 + sigma*
    double condition_number = 0.0;    // of b
    double residual = 0.0;            // |M (pi*, lambda*) - (a, 1)|
};

/// Solves [[b b^T, 1], [1^T, 0]] (pi*, lambda*) = (a, 1) for the stock GOP.
inline GopSolution solve_gop_weights(const MarketCoefficients& c, double max_condition = 1e12) {
    const Eigen::Index n = c.drift.size();
    if (n < 1 || c.diffusion.rows() != n || c.diffusion.cols() != n)
        throw ContractError("solve_gop_weights: drift must have n >= 1 entries and diffusion must be n x n");

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c.diffusion);
    const auto& sv = svd.singularValues();
    const double smin = sv(sv.size() - 1);
    const double cond = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
    if (!(cond <= max_condition)) {
        std::ostringstream msg;
        msg << "solve_gop_weights: diffusion matrix singular or ill-conditioned (condition number " << cond
            << ", cap " << max_condition << ", smallest singular value " << smin << ")";
        throw NumericalError(msg.str());
    }

    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 1, n + 1);
    m.topLeftCorner(n, n) = c.diffusion * c.diffusion.transpose();
    m.topRightCorner(n, 1).setOnes();
    m.bottomLeftCorner(1, n).setOnes();
    Eigen::VectorXd rhs(n + 1);
    rhs.head(n) = c.drift;
    rhs(n) = 1.0;

    const Eigen::VectorXd x = m.fullPivLu().solve(rhs);
    GopSolution sol;
    sol.pi_star = x.head(n);
    sol.lambda_star = x(n);
    sol.sigma_star = c.diffusion.transpose() * sol.pi_star;
    const Eigen::VectorXd binv_one = c.diffusion.fullPivLu().solve(Eigen::VectorXd::Ones(n));
    sol.sigma_star_star = sol.lambda_star * binv_one + sol.sigma_star;
    sol.condition_number = cond;
    sol.residual = (m * x - rhs).norm();
    if (!sol.pi_star.allFinite() || !std::isfinite(sol.lambda_star))
        throw NumericalError("solve_gop_weights: non-finite solution");
    return sol;
}

// ---------------------------------------------------------------------------
// Path sets
// ---------------------------------------------------------------------------

enum class Measure { P, QStar };
enum class Scheme { Exact, Euler };

/// Noncentral chi-squared(4) sampler used by the exact BESQ(4) transition.
enum class NoncentralSampler {
    PoissonMixture,  // Poisson(nc/2) mixture of chi-squared(4 + 2N)
    GaussianSum,     // (Z1 + sqrt(nc))^2 + Z2^2 + Z3^2 + Z4^2
};

inline const char* to_string(Measure m) { return m == Measure::P ? "P" : "Q*"; }

struct SimulationOptions {
    std::size_t substeps = 1;          // fine steps per recorded grid interval
    bool store_increments = false;     // keep Brownian increments per recorded interval (Euler)
    unsigned threads = 1;              // 0 = hardware concurrency
    NoncentralSampler sampler = NoncentralSampler::PoissonMixture;
    bool antithetic = false;           // paths (2j, 2j+1) share a stream, the odd one reflected
    bool freeze_volatility = false;    // theta forced to 0 (deterministic diagnostic)
    double mu_cap = 1e6;               // cap on the market price of risk lambda*/theta
    std::uint64_t first_path = 0;      // stream index of path 0, for batched runs
    double max_step_ratio = 0.25;      // Euler stability bound on a(t) dt / S*_0 and |lambda*| dt
};

/// Simulated trajectories on a shared record grid.
struct PathSet {
    TimeGrid grid;
    std::size_t substeps = 1;
    Measure measure = Measure::QStar;
    Scheme scheme = Scheme::Exact;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> stream_ids;  // per path
    Matrix s_star;                          // S*
    Matrix lambda_density;                  // Lambda, 1 at t = 0
    Matrix x0;                              // X^0 = 1 / S*
    Matrix brownian_increments;             // N x steps; B under P, B* under Q*; empty if not stored
    std::vector<Matrix> aux_brownians;      // W' drivers when co-simulated
    std::size_t positivity_reflections = 0;

    std::size_t n_paths() const noexcept { return static_cast<std::size_t>(s_star.rows()); }
    std::size_t n_times() const noexcept { return grid.size(); }
    bool has_increments() const noexcept { return brownian_increments.size() > 0; }
};

/// Read-only view of one path, passed to payoff functionals.
struct PathView {
    std::size_t index = 0;
    std::span<const double> times;
    std::span<const double> s_star;
    std::span<const double> x0;
    std::span<const double> lambda_density;
};

inline std::span<const double> row_span(const Matrix& m, std::size_t i) {
    return {m.data() + i * static_cast<std::size_t>(m.cols()), static_cast<std::size_t>(m.cols())};
}

inline PathView path_view(const PathSet& ps, std::size_t i) {
    return {i, ps.grid.times(), row_span(ps.s_star, i), row_span(ps.x0, i), row_span(ps.lambda_density, i)};
}

// ---------------------------------------------------------------------------
// Simulation engine
// ---------------------------------------------------------------------------

/// Deterministic per-step coefficients of the fine simulation grid; shared by
/// the simulators and by the density reconstruction so both evaluate
/// identical floating-point expressions.
struct StepTable {
    std::vector<double> dt, sqrt_dt;
    std::vector<double> intensity;           // a(t_k) = 4 a e^{tau_{t_k}} (left endpoint)
    std::vector<double> sqrt_intensity;
    std::vector<double> inv_sqrt_intensity;
    std::vector<double> lambda;              // lambda*(t_k)
    std::vector<double> clock;               // exact BESQ(4) clock increment
    std::size_t substeps = 1;

    std::size_t size() const noexcept { return dt.size(); }

    static StepTable build(const ModelParams& p, const TimeGrid& grid, std::size_t substeps) {
        if (substeps == 0) throw ConfigError("substeps must be at least 1");
        StepTable st;
        st.substeps = substeps;
        const std::size_t n = grid.steps() * substeps;
        st.dt.reserve(n);
        for (std::size_t j = 0; j < grid.steps(); ++j) {
            const double t0 = grid[j], t1 = grid[j + 1];
            for (std::size_t s = 0; s < substeps; ++s) {
                const double a = t0 + (t1 - t0) * static_cast<double>(s) / static_cast<double>(substeps);
                const double b = s + 1 == substeps ? t1
                                                   : t0 + (t1 - t0) * static_cast<double>(s + 1) /
                                                              static_cast<double>(substeps);
                const double h = b - a;
                const double ia = drift_intensity(p, a);
                st.dt.push_back(h);
                st.sqrt_dt.push_back(std::sqrt(h));
                st.intensity.push_back(ia);
                st.sqrt_intensity.push_back(std::sqrt(ia));
                st.inv_sqrt_intensity.push_back(1.0 / std::sqrt(ia));
                st.lambda.push_back(p.net_risk_adjusted_return(a));
                st.clock.push_back(transformed_time_increment(p, a, b));
            }
        }
        return st;
    }
};

/// mu* = lambda* / theta with theta = sqrt(a(t) / S), written via sqrt(S).
inline double market_price_of_risk(double lambda, double inv_sqrt_intensity, double sqrt_s, double cap) {
    return std::min(lambda * sqrt_s * inv_sqrt_intensity, cap);
}

/// One draw from the noncentral chi-squared law with 4 degrees of freedom.
inline double sample_noncentral_chi2_4(double noncentrality, RandomStream& rng, NoncentralSampler method) {
    if (method == NoncentralSampler::GaussianSum) {
        const double z1 = rng.normal() + std::sqrt(noncentrality);
        const double z2 = rng.normal(), z3 = rng.normal(), z4 = rng.normal();
        return z1 * z1 + z2 * z2 + z3 * z3 + z4 * z4;
    }
    long long n = 0;
    if (noncentrality > 0.0) n = std::poisson_distribution<long long>(0.5 * noncentrality)(rng);
    return 2.0 * std::gamma_distribution<double>(2.0 + static_cast<double>(n), 1.0)(rng);
}

/// Scratch buffers for a single simulated path.
struct PathBuffer {
    std::vector<double> s_star;      // per recorded time
    std::vector<double> log_lambda;  // per recorded time
    std::vector<double> increments;  // per recorded interval
    std::size_t reflections = 0;
};

/// Simulates S* (and log Lambda) path by path. Path i always draws from the
/// substream (seed, first_path + i), so any subset of paths can be produced
/// independently and in any order.
class SgopSimulator {
public:
    SgopSimulator(const ModelParams& params, TimeGrid grid, Scheme scheme, Measure measure, std::uint64_t seed,
                  SimulationOptions opts = {})
        : params_(params), grid_(std::move(grid)), scheme_(scheme), measure_(measure), seed_(seed), opts_(opts) {
        params_.validate();
        if (scheme_ == Scheme::Exact && measure_ != Measure::QStar)
            throw ContractError("exact BESQ(4) sampling is available under Q* only");
        steps_ = StepTable::build(params_, grid_, opts_.substeps);
        if (scheme_ == Scheme::Euler) check_stability();
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    const StepTable& steps() const noexcept { return steps_; }
    const ModelParams& params() const noexcept { return params_; }
    const SimulationOptions& options() const noexcept { return opts_; }
    Scheme scheme() const noexcept { return scheme_; }
    Measure measure() const noexcept { return measure_; }
    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t stream_index(std::size_t path) const noexcept {
        const std::uint64_t i = opts_.first_path + path;
        return opts_.antithetic ? i / 2 : i;
    }

    void simulate(std::size_t path, PathBuffer& out) const {
        const std::size_t n_rec = grid_.size();
        out.s_star.assign(n_rec, 0.0);
        out.log_lambda.assign(n_rec, 0.0);
        out.increments.assign(n_rec - 1, 0.0);
        out.reflections = 0;

        const bool twin = opts_.antithetic && ((opts_.first_path + path) % 2 == 1);
        RandomStream rng({seed_, stream_index(path), lanes::kMarket}, twin);

        double s = params_.s_star_0;
        double log_lambda = 0.0;
        out.s_star[0] = s;
        std::size_t k = 0;
        for (std::size_t j = 0; j + 1 < n_rec; ++j) {
            double db_sum = 0.0;
            for (std::size_t sub = 0; sub < steps_.substeps; ++sub, ++k) {
                double s_next;
                if (scheme_ == Scheme::Exact) {
                    const double clock = steps_.clock[k];
                    s_next = clock * sample_noncentral_chi2_4(s / clock, rng, opts_.sampler);
                    // Implied density: mu dB* = (lambda / a(t)) (dS - a(t) dt).
                    const double ratio = steps_.lambda[k] / steps_.intensity[k];
                    log_lambda += -ratio * (s_next - s - steps_.intensity[k] * steps_.dt[k]) +
                                  0.5 * steps_.lambda[k] * ratio * s * steps_.dt[k];
                } else {
                    const double db = steps_.sqrt_dt[k] * rng.normal();
                    db_sum += db;
                    const double sp = std::max(s, 0.0);
                    const double lam = steps_.lambda[k];
                    if (opts_.freeze_volatility) {
                        s_next = s + (measure_ == Measure::P ? lam * sp : 0.0) * steps_.dt[k];
                    } else {
                        const double root = std::sqrt(sp);
                        const double drift = (measure_ == Measure::P ? lam * sp : 0.0) + steps_.intensity[k];
                        s_next = s + drift * steps_.dt[k] + steps_.sqrt_intensity[k] * root * db;
                        const double mu = market_price_of_risk(lam, steps_.inv_sqrt_intensity[k], root, opts_.mu_cap);
                        log_lambda += measure_ == Measure::P ? -mu * db - 0.5 * mu * mu * steps_.dt[k]
                                                             : -mu * db + 0.5 * mu * mu * steps_.dt[k];
                    }
                }
                if (!(s_next > 0.0)) {
                    // Full truncation keeps coefficients real; the stored state is reflected.
                    s_next = s_next < 0.0 ? -s_next : std::numeric_limits<double>::min();
                    ++out.reflections;
                }
                s = s_next;
            }
            out.s_star[j + 1] = s;
            out.log_lambda[j + 1] = log_lambda;
            out.increments[j] = db_sum;
        }
    }

private:
    void check_stability() const {
        for (std::size_t k = 0; k < steps_.size(); ++k) {
            const double drift_ratio = steps_.intensity[k] * steps_.dt[k] / params_.s_star_0;
            const double lam_ratio = std::abs(steps_.lambda[k]) * steps_.dt[k];
            if (drift_ratio > opts_.max_step_ratio || lam_ratio > opts_.max_step_ratio) {
                std::ostringstream msg;
                msg << "Euler step " << steps_.dt[k] << " too large for stability at t=" << grid_[k / steps_.substeps]
                    << " (a(t) dt / S*_0 = " << drift_ratio << ", |lambda*| dt = " << lam_ratio << ", bound "
                    << opts_.max_step_ratio << ")";
                throw ConfigError(msg.str());
            }
        }
    }

    ModelParams params_;
    TimeGrid grid_;
    Scheme scheme_;
    Measure measure_;
    std::uint64_t seed_;
    SimulationOptions opts_;
    StepTable steps_;
};

namespace detail {

inline PathSet collect_paths(const SgopSimulator& sim, std::size_t n_paths) {
    if (n_paths < 1) throw ContractError("n_paths must be at least 1");
    if (sim.options().antithetic && (n_paths % 2 != 0 || sim.options().first_path % 2 != 0))
        throw ContractError("antithetic sampling needs an even number of paths starting at an even index");
    PathSet ps;
    ps.grid = sim.grid();
    ps.substeps = sim.options().substeps;
    ps.measure = sim.measure();
    ps.scheme = sim.scheme();
    ps.seed = sim.seed();
    const std::size_t nt = ps.grid.size();
    ps.s_star.resize(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(nt));
    ps.lambda_density.resizeLike(ps.s_star);
    ps.x0.resizeLike(ps.s_star);
    const bool keep = sim.options().store_increments && sim.scheme() == Scheme::Euler;
    if (keep) ps.brownian_increments.resize(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(nt - 1));
    ps.stream_ids.resize(n_paths);
    std::vector<std::size_t> reflections(n_paths, 0);

    parallel_for(n_paths, sim.options().threads, [&](std::size_t begin, std::size_t end) {
        PathBuffer buf;
        for (std::size_t i = begin; i < end; ++i) {
            sim.simulate(i, buf);
            const auto r = static_cast<Eigen::Index>(i);
            for (std::size_t k = 0; k < nt; ++k) {
                const auto c = static_cast<Eigen::Index>(k);
                ps.s_star(r, c) = buf.s_star[k];
                ps.lambda_density(r, c) = std::exp(buf.log_lambda[k]);
                ps.x0(r, c) = 1.0 / buf.s_star[k];
            }
            if (keep)
                for (std::size_t k = 0; k + 1 < nt; ++k) ps.brownian_increments(r, static_cast<Eigen::Index>(k)) = buf.increments[k];
            ps.stream_ids[i] = sim.stream_index(i);
            reflections[i] = buf.reflections;
        }
    });
    for (std::size_t r : reflections) ps.positivity_reflections += r;
    return ps;
}

}  // namespace detail

/// Exact BESQ(4) transition sampling of S* under Q* on `grid`.
inline PathSet simulate_sgop_exact(const ModelParams& params, const TimeGrid& grid, std::size_t n_paths,
                                   std::uint64_t seed, SimulationOptions opts = {}) {
    return detail::collect_paths(SgopSimulator(params, grid, Scheme::Exact, Measure::QStar, seed, opts), n_paths);
}

/// Full-truncation Euler scheme for S* under P or Q*, with log-Euler density.
inline PathSet simulate_sgop_euler(const ModelParams& params, const TimeGrid& grid, std::size_t n_paths,
                                   std::uint64_t seed, Measure measure, SimulationOptions opts = {}) {
    return detail::collect_paths(SgopSimulator(params, grid, Scheme::Euler, measure, seed, opts), n_paths);
}

}  // namespace bnrm
