#pragma once

// Line of business holding m binary insurance claims with a common maturity:
// production portfolio, working capital, algorithmic refinancing, refinancing
// cost under a GBM working-capital proxy, and the diversification experiment.

#include "bnrm/common.hpp"
#include "bnrm/hedging.hpp"
#include "bnrm/insurance.hpp"
#include "bnrm/model.hpp"
#include "bnrm/pricing.hpp"
#include "bnrm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bnrm {

namespace lanes {
/// Uniforms of the Brownian-bridge crossing test.
inline constexpr std::uint32_t kBridge = 0x40000000u;
}  // namespace lanes

struct LobConfig {
    std::size_t n_claims = 1;
    double claim_maturity = 10.0;
    EventModel event_model = EventModel::wright_fisher(0.8, 0.3);
    double initial_working_capital = 1.0;  // C'_0, S* units
    double critical_level = 0.5;           // D, S* units
    double refinancing_ratio = 1.5;        // mu

    void validate() const {
        event_model.validate();
        if (!(claim_maturity > 0.0)) throw ConfigError("lob: claim_maturity must be positive");
        if (!(critical_level > 0.0)) throw ConfigError("lob: critical_level must be positive");
        if (!(initial_working_capital > critical_level))
            throw ConfigError("lob: initial_working_capital must exceed critical_level");
        if (!(refinancing_ratio > 1.0)) throw ConfigError("lob: refinancing_ratio must exceed 1");
    }
};

/// P^i for every claim of the book. p_processes[i] is N x times and holds the
/// continuous part; at maturity P^i jumps to indicators(path, i).
struct InsuranceMartingaleSet {
    TimeGrid grid;
    EventModel model;
    std::vector<Matrix> p_processes;
    Matrix indicators;  // N x m
    std::vector<std::uint64_t> stream_ids;

    std::size_t n_claims() const noexcept { return p_processes.size(); }
    std::size_t n_paths() const noexcept { return stream_ids.size(); }
};

/// Claim i of path p draws from lanes kInsurance + i and kResolution + i of
/// stream first_path + p, so books of different sizes share their first claims.
inline InsuranceMartingaleSet simulate_event_martingales(const LobConfig& config, const TimeGrid& grid,
                                                         std::size_t n_paths, std::uint64_t seed,
                                                         std::size_t first_path = 0) {
    config.validate();
    if (std::abs(grid.back() - config.claim_maturity) > 1e-9)
        throw ContractError("simulate_event_martingales: grid must end at the claim maturity");
    InsuranceMartingaleSet set;
    set.grid = grid;
    set.model = config.event_model;
    const auto nt = static_cast<Eigen::Index>(grid.size());
    const auto m = config.n_claims;
    set.p_processes.assign(m, Matrix(static_cast<Eigen::Index>(n_paths), nt));
    set.indicators.resize(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(m));
    set.stream_ids.resize(n_paths);
    std::vector<double> buf(grid.size()), common(config.event_model.driver_correlation > 0.0 ? grid.size() : 0);
    for (std::size_t p = 0; p < n_paths; ++p) {
        const std::uint64_t stream = first_path + p;
        set.stream_ids[p] = stream;
        if (!common.empty()) common_factor(seed, stream, common);
        for (std::size_t i = 0; i < m; ++i) {
            const double ind = simulate_event_path(config.event_model, grid, seed, stream, static_cast<std::uint32_t>(i), buf, common);
            set.indicators(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = ind;
            std::copy(buf.begin(), buf.end(), set.p_processes[i].row(static_cast<Eigen::Index>(p)).begin());
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Refinancing
// ---------------------------------------------------------------------------

struct RefinancingPath {
    std::vector<double> refinancing;  // R_t, right-continuous
    std::vector<double> capital;      // C_t = C'_t + R_{t-}
    std::vector<double> rho_times;
};

/// Scans a discrete C' path: whenever C_t <= D at t > 0 a refinancing time is
/// recorded and R grows by (mu - 1) D.
inline RefinancingPath apply_refinancing(std::span<const double> c_prime, std::span<const double> times,
                                         double critical_level, double refinancing_ratio) {
    if (c_prime.size() != times.size()) throw ContractError("apply_refinancing: path and grid sizes differ");
    RefinancingPath out;
    out.refinancing.resize(c_prime.size());
    out.capital.resize(c_prime.size());
    const double jump = (refinancing_ratio - 1.0) * critical_level;
    double r = 0.0;
    for (std::size_t k = 0; k < c_prime.size(); ++k) {
        const double c = c_prime[k] + r;
        out.capital[k] = c;
        if (k > 0 && c <= critical_level) {
            out.rho_times.push_back(times[k]);
            r += jump;
        }
        out.refinancing[k] = r;
    }
    return out;
}

inline RefinancingPath apply_refinancing(std::span<const double> c_prime, std::span<const double> times,
                                         const LobConfig& config) {
    return apply_refinancing(c_prime, times, config.critical_level, config.refinancing_ratio);
}

// ---------------------------------------------------------------------------
// Working capital
// ---------------------------------------------------------------------------

struct LobStrategy {
    enum class Kind { Bnrm, Custom };
    Kind kind = Kind::Bnrm;
    Matrix zeta_bar0;                          // N x times, savings-account units held over [t_k, t_k+1)
    std::optional<double> initial_production;  // P_0, default sum of H^{i,*}_0 / S*_0

    static LobStrategy bnrm() { return {}; }
    static LobStrategy custom(Matrix zeta_bar0, std::optional<double> p0 = std::nullopt) {
        return {Kind::Custom, std::move(zeta_bar0), p0};
    }
};

struct WorkingCapitalOptions {
    double bump = 1e-4;
    // Maximum RMS over paths of C'_0 + P_T - L_T - C'_T before a NumericalError;
    // this gap is the discrete hedging error of the book.
    double identity_tolerance = std::numeric_limits<double>::infinity();
    unsigned threads = 1;
};

struct WorkingCapitalTrajectory {
    TimeGrid grid;
    Matrix production;      // P_t
    Matrix liability_fair;  // sum_i H^{i,*}_t / S*_t
    Matrix monitoring;      // eta = sum_i eta^i
    Matrix bnrm_zeta0;      // sum_i zeta^i, savings-account units
    Matrix c_prime;         // C'_0 + P_0 - L_0 + int (zeta_bar - zeta) dX - eta
    Matrix wc1_residual;    // C'_0 + P - L - C'
    Matrix refinancing;     // R
    Matrix c_refinanced;    // C = C' + R_{t-}
    std::vector<std::vector<double>> rho_times;
    double identity_rmse = 0.0;  // RMS of wc1_residual at maturity
};

/// Working capital of the book along Q* paths. Under BNRM C' = C'_0 - eta by
/// construction; the production portfolio and the liabilities are tracked
/// separately so that the discrete hedge error is visible in wc1_residual.
inline WorkingCapitalTrajectory working_capital_path(const LobConfig& config, const ModelParams& params,
                                                     const PathSet& paths, const InsuranceMartingaleSet& events,
                                                     const LobStrategy& strategy = LobStrategy::bnrm(),
                                                     const WorkingCapitalOptions& opts = {}) {
    config.validate();
    params.validate();
    if (paths.measure != Measure::QStar) throw ContractError("working_capital_path: paths must be simulated under Q*");
    const double T = config.claim_maturity;
    if (std::abs(paths.grid.back() - T) > 1e-9) throw ContractError("working_capital_path: grid must end at the claim maturity");
    if (!(events.grid == paths.grid)) throw ContractError("working_capital_path: event and market grids differ");
    if (events.n_claims() != config.n_claims)
        throw ContractError("working_capital_path: event set has " + std::to_string(events.n_claims()) + " claims, config " +
                            std::to_string(config.n_claims));
    const std::size_t n = paths.n_paths(), nt = paths.n_times(), m = config.n_claims, last = nt - 1;
    if (m > 0 && events.n_paths() != n) throw ContractError("working_capital_path: event set and PathSet path counts differ");
    const bool custom = strategy.kind == LobStrategy::Kind::Custom;
    if (custom && (strategy.zeta_bar0.rows() != static_cast<Eigen::Index>(n) ||
                   strategy.zeta_bar0.cols() != static_cast<Eigen::Index>(nt)))
        throw ContractError("working_capital_path: custom strategy must be N x times");

    WorkingCapitalTrajectory wc;
    wc.grid = paths.grid;
    for (auto* mat : {&wc.production, &wc.liability_fair, &wc.monitoring, &wc.bnrm_zeta0, &wc.c_prime, &wc.wc1_residual,
                      &wc.refinancing, &wc.c_refinanced})
        mat->resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nt));
    wc.rho_times.resize(n);
    const auto market = market_price_hat(params, Claim::zero_coupon_bond(T));
    const auto times = paths.grid.times();
    const double c0 = config.initial_working_capital;

    parallel_for(n, opts.threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> psum(nt), cp(nt);
        for (std::size_t p = begin; p < end; ++p) {
            const auto row = static_cast<Eigen::Index>(p);
            double ind_sum = 0.0;
            std::fill(psum.begin(), psum.end(), 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const auto& pm = events.p_processes[i];
                for (std::size_t k = 0; k < nt; ++k) psum[k] += pm(row, static_cast<Eigen::Index>(k));
                ind_sum += events.indicators(row, static_cast<Eigen::Index>(i));
            }
            double eta = 0.0, drift_gap = 0.0, prod = 0.0, l0 = 0.0;
            for (std::size_t k = 0; k < nt; ++k) {
                const auto col = static_cast<Eigen::Index>(k);
                const double s = paths.s_star(row, col);
                double liab, z0 = 0.0;
                if (k < last) {
                    const double mk = market(times[k], s);
                    liab = mk * psum[k];
                    if (m > 0) z0 = -delta_bump_reprice(market, times[k], s, opts.bump) * s * s * psum[k];
                } else {
                    liab = ind_sum / s;
                    z0 = wc.bnrm_zeta0(row, col - 1);
                }
                if (k == 0) {
                    l0 = liab;
                    prod = custom && strategy.initial_production ? *strategy.initial_production : liab;
                } else {
                    const auto prev = col - 1;
                    const double dx0 = paths.x0(row, col) - paths.x0(row, prev);
                    const double zb = custom ? strategy.zeta_bar0(row, prev) : wc.bnrm_zeta0(row, prev);
                    prod += zb * dx0;
                    drift_gap += (zb - wc.bnrm_zeta0(row, prev)) * dx0;
                    const double mprev = market(times[k - 1], paths.s_star(row, prev));
                    eta += mprev * (psum[k] - psum[k - 1]);
                    if (k == last) eta += (ind_sum - psum[k]) / s;
                }
                wc.bnrm_zeta0(row, col) = z0;
                wc.production(row, col) = prod;
                wc.liability_fair(row, col) = liab;
                wc.monitoring(row, col) = eta;
                cp[k] = c0 + (wc.production(row, 0) - l0) + drift_gap - eta;
                wc.c_prime(row, col) = cp[k];
                wc.wc1_residual(row, col) = c0 + prod - liab - cp[k];
            }
            auto ref = apply_refinancing(cp, times, config);
            for (std::size_t k = 0; k < nt; ++k) {
                wc.refinancing(row, static_cast<Eigen::Index>(k)) = ref.refinancing[k];
                wc.c_refinanced(row, static_cast<Eigen::Index>(k)) = ref.capital[k];
            }
            wc.rho_times[p] = std::move(ref.rho_times);
        }
    });

    std::vector<double> sq(n);
    for (std::size_t p = 0; p < n; ++p) {
        const double r = wc.wc1_residual(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(last));
        sq[p] = r * r;
    }
    wc.identity_rmse = n > 0 ? std::sqrt(pairwise_sum(sq) / static_cast<double>(n)) : 0.0;
    if (wc.identity_rmse > opts.identity_tolerance)
        throw NumericalError("working_capital_path: C'_0 + P - L deviates from C' by RMS " +
                             std::to_string(wc.identity_rmse) + " at maturity");
    return wc;
}

// ---------------------------------------------------------------------------
// GBM first passage and refinancing cost
// ---------------------------------------------------------------------------

/// Working capital proxy d ln C = nu dt + sigma dW.
struct GbmModel {
    double log_drift = 0.0;  // nu
    double vol = 0.2;        // sigma
};

inline void check_first_passage_args(double c0, double d, double sigma) {
    if (!(d > 0.0) || !(c0 > 0.0)) throw DomainError("first passage: levels must be positive");
    if (!(d < c0)) throw DomainError("first passage: barrier must lie below the start (d < c0)");
    if (!(sigma > 0.0)) throw DomainError("first passage: vol must be positive");
}

/// P(inf{t : C_t <= d} <= T) for ln C with drift nu and vol sigma started at ln c0.
inline double gbm_first_passage_cdf(double c0, double d, double nu, double sigma, double T) {
    check_first_passage_args(c0, d, sigma);
    if (T < 0.0) throw DomainError("first passage: negative horizon");
    if (T == 0.0) return 0.0;
    const double b = std::log(d / c0), sd = sigma * std::sqrt(T);
    const double reflected = nu == 0.0 ? 1.0 : std::exp(2.0 * nu * b / (sigma * sigma));
    return normal_cdf((b - nu * T) / sd) + reflected * normal_cdf((b + nu * T) / sd);
}

/// Inverse Gaussian density of the same first-passage time.
inline double gbm_first_passage_density(double c0, double d, double nu, double sigma, double t) {
    check_first_passage_args(c0, d, sigma);
    if (!(t > 0.0)) return 0.0;
    const double a = std::log(c0 / d);
    const double z = a + nu * t;
    return a / (sigma * std::sqrt(2.0 * std::numbers::pi * t * t * t)) * std::exp(-z * z / (2.0 * sigma * sigma * t));
}

struct RefinancingCostOptions {
    std::size_t cells = 4000;
    double truncation_tolerance = 1e-8;
};

struct RefinancingCostReport {
    double cost = 0.0;               // E*[R_T], S* units
    std::vector<double> per_k;       // P*(rho_k <= T), k = 1..k_max
    double first_term_bound = 0.0;   // (mu - 1) D P*(rho_1 <= T)
    double truncation_bound = 0.0;   // P*(rho_k_max <= T)
    std::optional<std::string> warning;
};

/// E*[R_T] = (mu - 1) D sum_k P*(rho_k <= T). rho_1 is the passage from C'_0
/// to D; later gaps are i.i.d. passages from mu D to D, convolved on a
/// uniform mesh whose cell masses are exact and split evenly between the two
/// cells covered by the sum of two within-cell uniforms.
inline RefinancingCostReport expected_refinancing_cost(const LobConfig& config, const GbmModel& wc, double T,
                                                       std::size_t k_max, const RefinancingCostOptions& opts = {}) {
    config.validate();
    if (k_max < 1) throw ConfigError("expected_refinancing_cost: k_max must be at least 1");
    if (!(T > 0.0)) throw DomainError("expected_refinancing_cost: horizon must be positive");
    if (opts.cells < 2) throw ConfigError("expected_refinancing_cost: need at least 2 cells");
    const double D = config.critical_level, mu = config.refinancing_ratio;
    const std::size_t n = opts.cells;
    const double h = T / static_cast<double>(n);
    auto cell_masses = [&](double start) {
        std::vector<double> q(n);
        double prev = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double cur = gbm_first_passage_cdf(start, D, wc.log_drift, wc.vol, h * static_cast<double>(j + 1));
            q[j] = cur - prev;
            prev = cur;
        }
        return q;
    };
    std::vector<double> mass = cell_masses(config.initial_working_capital);
    const std::vector<double> gap = cell_masses(mu * D);

    RefinancingCostReport rep;
    rep.per_k.reserve(k_max);
    std::vector<double> next(n);
    for (std::size_t k = 1; k <= k_max; ++k) {
        if (k > 1) {
            std::fill(next.begin(), next.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double a = 0.5 * mass[i];
                if (a == 0.0) continue;
                for (std::size_t j = 0; i + j < n; ++j) {
                    const double w = a * gap[j];
                    next[i + j] += w;
                    if (i + j + 1 < n) next[i + j + 1] += w;
                }
            }
            mass.swap(next);
        }
        const double pk = std::min(1.0, pairwise_sum(mass));
        rep.per_k.push_back(pk);
    }
    const double jump = (mu - 1.0) * D;
    rep.cost = jump * pairwise_sum(rep.per_k);
    rep.first_term_bound = jump * rep.per_k.front();
    rep.truncation_bound = rep.per_k.back();
    if (rep.truncation_bound > opts.truncation_tolerance)
        rep.warning = "refinancing cost truncated at k_max = " + std::to_string(k_max) + " with P*(rho_k_max <= T) = " +
                      std::to_string(rep.truncation_bound);
    return rep;
}

struct GbmPassageOptions {
    double step = 1e-3;
    bool bridge = true;  // Brownian-bridge crossing test between grid points
    unsigned threads = 1;
};

namespace detail {

/// One GBM path in log space; returns the number of barrier hits before T,
/// restarting at `restart` after each hit (no restart: stop at the first).
inline std::size_t gbm_hits(double x0, double barrier, std::optional<double> restart, const GbmModel& wc, double T,
                            const GbmPassageOptions& opts, std::uint64_t seed, std::uint64_t path) {
    RandomStream z({seed, path, lanes::kMarket});
    RandomStream u({seed, path, lanes::kBridge});
    const auto steps = static_cast<std::size_t>(std::llround(T / opts.step));
    const double dt = T / static_cast<double>(steps), sd = wc.vol * std::sqrt(dt), drift = wc.log_drift * dt;
    const double two_over_var = 2.0 / (wc.vol * wc.vol * dt);
    std::size_t hits = 0;
    double x = x0;
    for (std::size_t k = 0; k < steps; ++k) {
        const double y = x + drift + sd * z.normal();
        bool hit = y <= barrier;
        if (!hit && opts.bridge) {
            const double e = (x - barrier) * (y - barrier) * two_over_var;
            if (e < 40.0) hit = u.uniform() < std::exp(-e);
        }
        if (hit) {
            ++hits;
            if (!restart) return hits;
            x = *restart;
        } else {
            x = y;
        }
    }
    return hits;
}

}  // namespace detail

/// Monte Carlo frequency of a first passage to d before T.
inline Estimate gbm_first_passage_mc(double c0, double d, const GbmModel& wc, double T, std::size_t n_paths,
                                     std::uint64_t seed, const GbmPassageOptions& opts = {}) {
    check_first_passage_args(c0, d, wc.vol);
    std::vector<double> hit(n_paths);
    parallel_for(n_paths, opts.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            hit[i] = static_cast<double>(detail::gbm_hits(std::log(c0), std::log(d), std::nullopt, wc, T, opts, seed, i));
    });
    return mean_and_se(hit);
}

struct RefinancingMcReport {
    Estimate cost;                      // R_T
    std::vector<double> hit_frequency;  // empirical P(rho_k <= T), k = 1..max observed
};

/// Refinanced capital simulated as a GBM restarted at mu D after each hit.
inline RefinancingMcReport refinancing_cost_mc(const LobConfig& config, const GbmModel& wc, double T, std::size_t n_paths,
                                               std::uint64_t seed, const GbmPassageOptions& opts = {}) {
    config.validate();
    check_first_passage_args(config.initial_working_capital, config.critical_level, wc.vol);
    const double jump = (config.refinancing_ratio - 1.0) * config.critical_level;
    std::vector<double> count(n_paths);
    parallel_for(n_paths, opts.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            count[i] = static_cast<double>(detail::gbm_hits(std::log(config.initial_working_capital), std::log(config.critical_level),
                                                            std::log(config.refinancing_ratio * config.critical_level), wc,
                                                            T, opts, seed, i));
    });
    RefinancingMcReport rep;
    const auto max_hits = static_cast<std::size_t>(*std::max_element(count.begin(), count.end()));
    rep.hit_frequency.assign(max_hits, 0.0);
    std::vector<double> cost(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) {
        cost[i] = jump * count[i];
        for (std::size_t k = 0; k < static_cast<std::size_t>(count[i]); ++k) rep.hit_frequency[k] += 1.0;
    }
    for (double& f : rep.hit_frequency) f /= static_cast<double>(n_paths);
    rep.cost = mean_and_se(cost);
    return rep;
}

// ---------------------------------------------------------------------------
// Diversification
// ---------------------------------------------------------------------------

struct DiversificationOptions {
    double step = 1.0 / 250.0;
    unsigned threads = 1;
    NoncentralSampler sampler = NoncentralSampler::PoissonMixture;
};

struct DiversificationRow {
    std::size_t m = 0;
    Estimate qv;           // realized [m^-1 C'] over [0,T), continuous part
    Estimate qv_separate;  // m^-2 sum_i [eta^i]
};

/// Books of size m share market paths and their first m claims, so the rows
/// are nested. C' = C'_0 - eta under BNRM; the resolution jump at maturity is
/// excluded from the quadratic variation.
inline std::vector<DiversificationRow> diversification_experiment(const ModelParams& params, const LobConfig& base,
                                                                  std::vector<std::size_t> m_values, std::size_t n_paths,
                                                                  std::uint64_t seed, const DiversificationOptions& opts = {}) {
    base.validate();
    params.validate();
    const auto& model = base.event_model;
    if (model.kind != EventModel::Kind::WrightFisher)
        throw ContractError("diversification_experiment: needs continuous monitoring processes (Wright-Fisher events)");
    if (model.driver_correlation != 0.0)
        throw ContractError("diversification_experiment: insurance drivers must be independent");
    if (m_values.empty()) throw ConfigError("diversification_experiment: no book sizes");
    if (n_paths < 2) throw ContractError("diversification_experiment: needs at least 2 paths");
    for (std::size_t m : m_values)
        if (m == 0) throw ConfigError("diversification_experiment: book sizes must be at least 1");
    std::vector<std::size_t> order(m_values.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m_values[a] < m_values[b]; });
    const std::size_t m_max = m_values[order.back()];
    const double T = base.claim_maturity;
    const auto grid = TimeGrid::uniform(T, opts.step);
    const std::size_t nt = grid.size(), last = nt - 1;
    SimulationOptions so;
    so.sampler = opts.sampler;
    const SgopSimulator sim(params, grid, Scheme::Exact, Measure::QStar, seed, so);
    const std::size_t nv = m_values.size();
    std::vector<double> qv(nv * n_paths), qv_sep(nv * n_paths);

    parallel_for(n_paths, opts.threads, [&](std::size_t begin, std::size_t end) {
        PathBuffer pb;
        std::vector<double> mk(last), cum(last), prob(nt);
        for (std::size_t p = begin; p < end; ++p) {
            sim.simulate(p, pb);
            for (std::size_t k = 0; k < last; ++k) mk[k] = zcb_price_hat(params, grid[k], pb.s_star[k], T);
            std::fill(cum.begin(), cum.end(), 0.0);
            double sep = 0.0;
            std::size_t next = 0;
            for (std::size_t i = 0; i < m_max; ++i) {
                simulate_event_path(model, grid, seed, sim.stream_index(p), static_cast<std::uint32_t>(i), prob);
                for (std::size_t k = 0; k < last; ++k) {
                    const double d = mk[k] * (prob[k + 1] - prob[k]);
                    cum[k] += d;
                    sep += d * d;
                }
                while (next < nv && m_values[order[next]] == i + 1) {
                    double q = 0.0;
                    for (double c : cum) q += c * c;
                    const double inv_m2 = 1.0 / static_cast<double>((i + 1) * (i + 1));
                    qv[order[next] * n_paths + p] = q * inv_m2;
                    qv_sep[order[next] * n_paths + p] = sep * inv_m2;
                    ++next;
                }
            }
        }
    });

    std::vector<DiversificationRow> rows;
    for (std::size_t v = 0; v < nv; ++v)
        rows.push_back({m_values[v], mean_and_se(std::span(qv).subspan(v * n_paths, n_paths)),
                        mean_and_se(std::span(qv_sep).subspan(v * n_paths, n_paths))});
    return rows;
}

}  // namespace bnrm
