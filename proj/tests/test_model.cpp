#include "bnrm/model.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace bnrm;

namespace {

ModelParams with_lambda(double lambda) {
    ModelParams p = ModelParams::reference();
    p.net_risk_adjusted_return = PiecewiseConstant(lambda);
    return p;
}

std::vector<double> terminal(const PathSet& ps) {
    std::vector<double> v(ps.n_paths());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = ps.s_star(static_cast<Eigen::Index>(i), ps.s_star.cols() - 1);
    return v;
}

}  // namespace

TEST(ActivityTime, Examples) {
    ModelParams p;
    p.initial_activity_time = -1.60944;
    EXPECT_DOUBLE_EQ(activity_time(p, 0.0), -1.60944);
    EXPECT_NEAR(activity_time(p, 10.0), -1.10944, 1e-14);
    p.initial_activity_time = 0.0;
    EXPECT_NEAR(activity_time(p, 30.0), 1.5, 1e-14);
    EXPECT_THROW(activity_time(p, -1.0), DomainError);
}

TEST(TransformedTime, ReferenceValues) {
    const auto p = ModelParams::reference();
    const double d10 = oracle::clock(0.05, 0.2, 0.0, 10.0);
    const double d30 = oracle::clock(0.05, 0.2, 0.0, 30.0);
    EXPECT_NEAR(d10, 0.1297443, 5e-8);
    EXPECT_NEAR(d30, 0.6963378, 5e-8);
    EXPECT_NEAR(transformed_time_increment(p, 0.0, 10.0), d10, 1e-15);
    EXPECT_NEAR(transformed_time_increment(p, 0.0, 30.0), d30, 1e-15);
    EXPECT_LT(transformed_time_increment(p, 5.0, 5.0 + 1e-12), 1e-12);
    EXPECT_THROW(transformed_time_increment(p, 3.0, 3.0), DomainError);
    EXPECT_THROW(transformed_time_increment(p, 4.0, 3.0), DomainError);
}

TEST(TransformedTime, ClockAdditivity) {
    const auto p = ModelParams::reference();
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 30.0);
    for (int i = 0; i < 1000; ++i) {
        double x[3] = {u(gen), u(gen), u(gen)};
        std::sort(x, x + 3);
        if (!(x[0] < x[1] && x[1] < x[2])) continue;
        const double whole = transformed_time_increment(p, x[0], x[2]);
        const double parts = transformed_time_increment(p, x[0], x[1]) + transformed_time_increment(p, x[1], x[2]);
        ASSERT_NEAR(parts, whole, 1e-14 * std::max(1.0, whole));
    }
}

TEST(VolatilityTheta, Examples) {
    auto p = ModelParams::reference();
    EXPECT_NEAR(volatility_theta(p, 0.0, 1.0), 0.2, 1e-15);
    EXPECT_NEAR(volatility_theta(p, 0.0, 4.0), 0.1, 1e-15);
    p.initial_activity_time = 0.0;
    EXPECT_NEAR(volatility_theta(p, 0.0, 0.2), 1.0, 1e-15);
    EXPECT_THROW(volatility_theta(p, 0.0, 0.0), DomainError);
}

TEST(PiecewiseConstantFn, ValuesAndIntegral) {
    PiecewiseConstant f({0.0, 1.0, 3.0}, {0.1, -0.2, 0.5});
    EXPECT_DOUBLE_EQ(f(0.5), 0.1);
    EXPECT_DOUBLE_EQ(f(1.0), -0.2);  // right-continuous
    EXPECT_DOUBLE_EQ(f(10.0), 0.5);
    EXPECT_NEAR(f.integral(0.0, 4.0), 0.1 - 0.4 + 0.5, 1e-15);
    EXPECT_NEAR(f.integral(0.5, 2.0), 0.05 - 0.2, 1e-15);
    EXPECT_THROW(PiecewiseConstant({0.0, 0.0}, {1.0, 2.0}), ConfigError);
    EXPECT_THROW(PiecewiseConstant({1.0}, {1.0}), ConfigError);
}

TEST(ModelParamsValidation, RejectsBadValues) {
    auto p = ModelParams::reference();
    p.activity = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = ModelParams::reference();
    p.s_star_0 = -1.0;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(TimeGridTest, UniformAndInvalid) {
    const auto g = TimeGrid::uniform(30.0, 1.0 / 250.0);
    EXPECT_EQ(g.steps(), 7500u);
    EXPECT_DOUBLE_EQ(g.back(), 30.0);
    EXPECT_THROW(TimeGrid({0.0, 1.0, 1.0}), ConfigError);
    EXPECT_THROW(TimeGrid({0.5, 1.0}), ConfigError);
    EXPECT_EQ(*g.find(10.0), 2500u);
}

TEST(GopWeights, OneAsset) {
    MarketCoefficients c{Eigen::VectorXd::Constant(1, 0.09), Eigen::MatrixXd::Constant(1, 1, 0.2)};
    const auto s = solve_gop_weights(c);
    EXPECT_NEAR(s.pi_star(0), 1.0, 1e-14);
    EXPECT_NEAR(s.lambda_star, 0.05, 1e-14);
    EXPECT_NEAR(s.sigma_star(0), 0.2, 1e-14);
    EXPECT_NEAR(s.sigma_star_star(0), 0.45, 1e-13);
}

TEST(GopWeights, SymmetricTwoAssets) {
    MarketCoefficients c{Eigen::Vector2d(0.06, 0.06), Eigen::Matrix2d(Eigen::Vector2d(0.2, 0.2).asDiagonal())};
    const auto s = solve_gop_weights(c);
    EXPECT_NEAR(s.pi_star(0), 0.5, 1e-14);
    EXPECT_NEAR(s.pi_star(1), 0.5, 1e-14);
    EXPECT_LT(s.residual, 1e-12);
}

TEST(GopWeights, RandomSystemsAgainstGaussianElimination) {
    std::mt19937_64 gen(123);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + trial % 4;
        MarketCoefficients c{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
        for (int i = 0; i < n; ++i) {
            c.drift(i) = 0.05 + 0.02 * z(gen);
            for (int j = 0; j < n; ++j) c.diffusion(i, j) = (i == j ? 0.3 : 0.0) + 0.05 * z(gen);
        }
        const auto s = solve_gop_weights(c);

        const Eigen::MatrixXd bbt = c.diffusion * c.diffusion.transpose();
        std::vector<double> m((n + 1) * (n + 1), 0.0), rhs(n + 1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) m[i * (n + 1) + j] = bbt(i, j);
            m[i * (n + 1) + n] = 1.0;
            m[n * (n + 1) + i] = 1.0;
            rhs[i] = c.drift(i);
        }
        rhs[n] = 1.0;
        const auto x = oracle::gauss_solve(m, rhs);
        for (int i = 0; i < n; ++i) ASSERT_NEAR(s.pi_star(i), x[i], 1e-9);
        ASSERT_NEAR(s.lambda_star, x[n], 1e-10);
        ASSERT_NEAR(s.pi_star.sum(), 1.0, 1e-12);
        ASSERT_LT(s.residual, 1e-10);
        const Eigen::VectorXd sss =
            s.lambda_star * c.diffusion.inverse() * Eigen::VectorXd::Ones(n) + c.diffusion.transpose() * s.pi_star;
        ASSERT_LT((s.sigma_star_star - sss).norm(), 1e-10);
    }
}

TEST(GopWeights, SingularDiffusionRejected) {
    MarketCoefficients c{Eigen::Vector2d(0.05, 0.06), Eigen::Matrix2d::Zero()};
    c.diffusion << 0.2, 0.1, 0.4, 0.2;
    EXPECT_THROW(solve_gop_weights(c), NumericalError);
    c.diffusion << 0.2, 0.0, 0.0, 1e-14;
    EXPECT_THROW(solve_gop_weights(c), NumericalError);
    EXPECT_THROW(solve_gop_weights({Eigen::Vector2d(0.0, 0.0), Eigen::MatrixXd::Identity(3, 3)}), ContractError);
}

TEST(ExactSampler, OneStepMeanAndInverseMoment) {
    const auto p = ModelParams::reference();
    const auto ps = simulate_sgop_exact(p, TimeGrid({0.0, 30.0}), 100000, 20240601);
    const auto st = terminal(ps);
    std::vector<double> inv(st.size());
    for (std::size_t i = 0; i < st.size(); ++i) inv[i] = 1.0 / st[i];
    const double delta = oracle::clock(0.05, 0.2, 0.0, 30.0);
    const auto m = mean_and_se(st);
    EXPECT_NEAR(1.0 + 4.0 * delta, 3.785351, 5e-7);
    EXPECT_LT(std::abs(m.value - (1.0 + 4.0 * delta)), 3.0 * m.se);
    const auto mi = mean_and_se(inv);
    EXPECT_NEAR(oracle::besq4_zcb(1.0, delta), 0.51228, 2e-5);  // published to 5 digits: 0.5122939
    EXPECT_LT(std::abs(mi.value - oracle::besq4_zcb(1.0, delta)), 3.0 * mi.se);
}

TEST(ExactSampler, LawMatchesNoncentralChiSquared) {
    const auto p = ModelParams::reference();
    const double delta = oracle::clock(0.05, 0.2, 0.0, 30.0);
    for (auto method : {NoncentralSampler::PoissonMixture, NoncentralSampler::GaussianSum}) {
        SimulationOptions o;
        o.sampler = method;
        const auto ps = simulate_sgop_exact(p, TimeGrid({0.0, 30.0}), 100000, 77, o);
        auto y = terminal(ps);
        for (auto& v : y) v /= delta;
        const double pv = oracle::ks_one_sample(y, [&](double x) { return oracle::noncentral_chi2_cdf(x, 4.0, 1.0 / delta); });
        EXPECT_GT(pv, 0.01) << "sampler " << static_cast<int>(method);
    }
}

TEST(ExactSampler, MultiStepLawMatchesOneStep) {
    // Markov consistency: chaining exact transitions reproduces the one-step law.
    const auto p = ModelParams::reference();
    const double delta = oracle::clock(0.05, 0.2, 0.0, 10.0);
    const auto ps = simulate_sgop_exact(p, TimeGrid::uniform(10.0, 0.5), 50000, 5);
    auto y = terminal(ps);
    for (auto& v : y) v /= delta;
    EXPECT_GT(oracle::ks_one_sample(y, [&](double x) { return oracle::noncentral_chi2_cdf(x, 4.0, 1.0 / delta); }), 0.01);
}

TEST(ExactSampler, VanishingClock) {
    const auto p = ModelParams::reference();
    // Clock 1e-16: per-path fluctuation ~2e-8, well inside 1e-6.
    const auto tiny = simulate_sgop_exact(p, TimeGrid({0.0, 2e-14}), 100000, 3);
    for (double s : terminal(tiny)) ASSERT_LT(std::abs(s - 1.0), 1e-6);
    // Interval 1e-10: the per-path deviation is ~2e-6, so the statement holds for the mean.
    const auto small = simulate_sgop_exact(p, TimeGrid({0.0, 1e-10}), 100000, 4);
    EXPECT_LT(std::abs(mean_and_se(terminal(small)).value - 1.0), 1e-6);
}

TEST(ExactSampler, Invariants) {
    const auto p = ModelParams::reference();
    const auto ps = simulate_sgop_exact(p, TimeGrid::uniform(30.0, 1.0), 2000, 99);
    EXPECT_EQ(ps.measure, Measure::QStar);
    for (Eigen::Index i = 0; i < ps.s_star.rows(); ++i) {
        ASSERT_EQ(ps.lambda_density(i, 0), 1.0);
        for (Eigen::Index k = 0; k < ps.s_star.cols(); ++k) {
            ASSERT_GT(ps.s_star(i, k), 0.0);
            ASSERT_GT(ps.lambda_density(i, k), 0.0);
            ASSERT_NEAR(ps.x0(i, k) * ps.s_star(i, k), 1.0, 1e-15);
        }
    }
    EXPECT_THROW(simulate_sgop_exact(p, TimeGrid::uniform(30.0, 1.0), 0, 1), ContractError);
}

TEST(ExactSampler, DeterministicAcrossThreads) {
    const auto p = ModelParams::reference();
    SimulationOptions one, four;
    four.threads = 4;
    const auto a = simulate_sgop_exact(p, TimeGrid::uniform(10.0, 0.5), 501, 8, one);
    const auto b = simulate_sgop_exact(p, TimeGrid::uniform(10.0, 0.5), 501, 8, four);
    EXPECT_TRUE(a.s_star == b.s_star);
    EXPECT_TRUE(a.lambda_density == b.lambda_density);
    EXPECT_EQ(a.stream_ids, b.stream_ids);
}

TEST(ExactSampler, BatchedPathsMatchSingleRun) {
    const auto p = ModelParams::reference();
    const auto grid = TimeGrid::uniform(5.0, 1.0);
    const auto all = simulate_sgop_exact(p, grid, 10, 8);
    SimulationOptions o;
    o.first_path = 6;
    const auto tail = simulate_sgop_exact(p, grid, 4, 8, o);
    EXPECT_TRUE(tail.s_star == all.s_star.bottomRows(4));
}

TEST(ExactSampler, AntitheticPairsShareCounters) {
    const auto p = ModelParams::reference();
    SimulationOptions o;
    o.antithetic = true;
    o.sampler = NoncentralSampler::GaussianSum;
    const auto ps = simulate_sgop_exact(p, TimeGrid({0.0, 10.0}), 2, 1, o);
    EXPECT_EQ(ps.stream_ids[0], ps.stream_ids[1]);
    EXPECT_NE(ps.s_star(0, 1), ps.s_star(1, 1));
    o.antithetic = true;
    EXPECT_THROW(simulate_sgop_exact(p, TimeGrid({0.0, 10.0}), 3, 1, o), ContractError);
}

TEST(EulerScheme, QStarMeanMatchesExactSampler) {
    const auto p = ModelParams::reference();
    const std::size_t n = 100000;
    SimulationOptions o;
    o.substeps = 2500;
    const auto euler = simulate_sgop_euler(p, TimeGrid({0.0, 10.0}), n, 31, Measure::QStar, o);
    const auto exact = simulate_sgop_exact(p, TimeGrid({0.0, 10.0}), n, 32);
    const auto me = mean_and_se(terminal(euler));
    const auto mx = mean_and_se(terminal(exact));
    EXPECT_LT(combined_z(me, mx), 3.0);
    EXPECT_EQ(euler.positivity_reflections, 0u);

    // Inverse moment cross-check against the closed form.
    std::vector<double> inv;
    for (double s : terminal(euler)) inv.push_back(1.0 / s);
    const auto mi = mean_and_se(inv);
    EXPECT_LT(std::abs(mi.value - oracle::besq4_zcb(1.0, oracle::clock(0.05, 0.2, 0.0, 10.0))), 3.0 * mi.se);
}

TEST(EulerScheme, ZeroLambdaCollapsesMeasures) {
    const auto p = with_lambda(0.0);
    SimulationOptions o;
    o.substeps = 250;
    const auto grid = TimeGrid::uniform(10.0, 1.0);
    const auto a = simulate_sgop_euler(p, grid, 20000, 1, Measure::P, o);
    const auto b = simulate_sgop_euler(p, grid, 20000, 1, Measure::QStar, o);
    EXPECT_TRUE(a.s_star == b.s_star);
    for (Eigen::Index i = 0; i < a.lambda_density.rows(); ++i) ASSERT_EQ(a.lambda_density(i, a.lambda_density.cols() - 1), 1.0);
    const auto c = simulate_sgop_euler(p, grid, 20000, 2, Measure::QStar, o);
    EXPECT_GT(oracle::ks_two_sample(terminal(a), terminal(c)), 0.01);
}

TEST(EulerScheme, FrozenVolatilityGrowsDeterministically) {
    auto p = ModelParams::reference();
    SimulationOptions o;
    o.freeze_volatility = true;
    const auto grid = TimeGrid::uniform(10.0, 1.0 / 250.0);
    const auto ps = simulate_sgop_euler(p, grid, 1, 5, Measure::P, o);
    double expected = 1.0;
    for (std::size_t k = 0; k < grid.steps(); ++k) expected *= 1.0 + 0.05 * (grid[k + 1] - grid[k]);
    EXPECT_NEAR(ps.s_star(0, ps.s_star.cols() - 1), expected, 1e-12);
    EXPECT_NEAR(ps.s_star(0, ps.s_star.cols() - 1), std::exp(p.net_risk_adjusted_return.integral(0.0, 10.0)), 1e-4);
}

TEST(EulerScheme, StepTooLargeRejected) {
    const auto p = ModelParams::reference();
    EXPECT_THROW(simulate_sgop_euler(p, TimeGrid::uniform(30.0, 10.0), 10, 1, Measure::P), ConfigError);
    EXPECT_THROW(simulate_sgop_exact(p, TimeGrid::uniform(30.0, 10.0), 10, 1, [] {
        SimulationOptions o;
        o.substeps = 0;
        return o;
    }()), ConfigError);
}

TEST(EulerScheme, StoredIncrementsAggregateSubsteps) {
    const auto p = ModelParams::reference();
    SimulationOptions o;
    o.store_increments = true;
    o.substeps = 4;
    const auto ps = simulate_sgop_euler(p, TimeGrid::uniform(2.0, 0.5), 3, 9, Measure::P, o);
    ASSERT_TRUE(ps.has_increments());
    EXPECT_EQ(ps.brownian_increments.cols(), 4);
    RandomStream r({9, 0, lanes::kMarket});
    double first = 0.0;
    for (int k = 0; k < 4; ++k) first += std::sqrt(0.125) * r.normal();
    EXPECT_NEAR(ps.brownian_increments(0, 0), first, 1e-15);
}
