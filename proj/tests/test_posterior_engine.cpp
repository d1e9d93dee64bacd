#include <doctest.h>

#include <cmath>
#include <limits>

#include "bvmlab/errors.hpp"
#include "bvmlab/posterior_engine.hpp"
#include "bvmlab/stat_core.hpp"

using namespace bvmlab;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::VectorXd linspace(double lo, double hi, int n) {
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    return g;
}

Chain chain_from_draws(const Eigen::VectorXd& draws) {
    Chain c;
    c.states = draws;
    c.log_values = Eigen::VectorXd::Zero(draws.size());
    c.accept_rate = 1.0;
    return c;
}

}  // namespace

TEST_CASE("grid_posterior basics") {
    const Eigen::VectorXd grid = linspace(-4, 4, 801);

    SUBCASE("flat likelihood returns the normalized prior") {
        const LogTarget flat = scalar_target([](double) { return 0.0; });
        const LogTarget prior = scalar_target([](double t) { return -0.5 * t * t; });
        const GridDensity post = grid_posterior(flat, prior, grid);
        const double trunc = normal_cdf(4.0) - normal_cdf(-4.0);
        double worst = 0.0;
        for (int i = 0; i < grid.size(); ++i)
            worst = std::max(worst, std::abs(post.values[i] - normal_pdf(grid[i]) / trunc));
        CHECK(worst < 1e-5);
    }

    SUBCASE("conjugate normal closed form") {
        // n observations, known variance 1, sample mean xbar; prior N(m0, s0^2).
        const int n = 7;
        const double xbar = 0.8, m0 = -0.5, s0 = 2.0;
        const LogTarget lik =
            scalar_target([&](double t) { return -0.5 * n * (t - xbar) * (t - xbar); });
        const LogTarget prior =
            scalar_target([&](double t) { return -0.5 * (t - m0) * (t - m0) / (s0 * s0); });
        const double prec = n + 1.0 / (s0 * s0);
        const double mean = (n * xbar + m0 / (s0 * s0)) / prec;
        const double sd = std::sqrt(1.0 / prec);
        const GridDensity post =
            grid_posterior(lik, prior, linspace(mean - 7 * sd, mean + 7 * sd, 4001));
        CHECK(tv_to_law(post, make_gaussian_law(mean, 1.0 / prec)) < 1e-6);
    }

    SUBCASE("truncation to an interval") {
        const LogTarget lik = scalar_target([](double t) {
            return (t >= -1.0 && t <= 2.0) ? 0.0 : kNegInf;
        });
        const LogTarget prior = scalar_target([](double) { return 0.0; });
        const GridDensity post = grid_posterior(lik, prior, grid);
        CHECK(post(0.5) == doctest::Approx(1.0 / 3.0).epsilon(1e-2));
        CHECK(post(3.0) == 0.0);
    }

    SUBCASE("zero mass everywhere is a support mismatch") {
        const LogTarget lik = scalar_target([](double) { return kNegInf; });
        const LogTarget prior = scalar_target([](double) { return 0.0; });
        CHECK_THROWS_AS(grid_posterior(lik, prior, grid), NumericalError);
    }

    SUBCASE("invariant under additive constants") {
        const LogTarget lik = scalar_target([](double t) { return -0.3 * t * t; });
        const LogTarget lik_shift = scalar_target([](double t) { return -0.3 * t * t + 123.4; });
        const LogTarget prior = scalar_target([](double t) { return -0.1 * t * t * t * t; });
        const LogTarget prior_shift =
            scalar_target([](double t) { return -0.1 * t * t * t * t - 55.0; });
        const GridDensity a = grid_posterior(lik, prior, grid);
        const GridDensity b = grid_posterior(lik_shift, prior_shift, grid);
        CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("rw_metropolis on a standard normal") {
    const LogTarget target = scalar_target([](double t) { return -0.5 * t * t; });
    SplitRng rng(2024);
    Eigen::VectorXd init(1);
    init << 0.3;
    const Chain chain = rw_metropolis(target, init, 100000, rng, true);
    const Eigen::VectorXd x = chain.states.col(0);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    CHECK(std::abs(mean) < 0.05);
    CHECK(var > 0.9);
    CHECK(var < 1.1);
    // Adaptation drove acceptance near the scalar target rate.
    CHECK(chain.accept_rate > 0.3);
    CHECK(chain.accept_rate < 0.6);
}

TEST_CASE("rw_metropolis respects the support") {
    const double cap = 1.25;
    const LogTarget target = scalar_target([&](double t) {
        return t <= cap ? (t - cap) : kNegInf;
    });
    SplitRng rng(7);
    Eigen::VectorXd init(1);
    init << 0.0;
    const Chain chain = rw_metropolis(target, init, 20000, rng, true);
    CHECK(chain.states.maxCoeff() <= cap);
}

TEST_CASE("rw_metropolis reproducibility and errors") {
    const LogTarget target = scalar_target([](double t) { return -0.5 * t * t; });
    Eigen::VectorXd init(1);
    init << 0.0;
    SplitRng r1(5), r2(5);
    const Chain a = rw_metropolis(target, init, 4000, r1, true);
    const Chain b = rw_metropolis(target, init, 4000, r2, true);
    CHECK((a.states - b.states).cwiseAbs().maxCoeff() == 0.0);

    SplitRng r3(5);
    Eigen::VectorXd bad(1);
    bad << 100.0;
    const LogTarget truncated = scalar_target([](double t) {
        return t <= 1.0 ? 0.0 : kNegInf;
    });
    CHECK_THROWS_AS(rw_metropolis(truncated, bad, 1000, r3, true), ValidationError);

    RwOptions opts;
    opts.burn_in = 500;
    CHECK_THROWS_AS(rw_metropolis(target, init, 400, r3, true, opts), ValidationError);
}

TEST_CASE("rw_metropolis product target has independent marginals") {
    // Two independent coordinates; marginals must match single-target runs.
    LogTarget product;
    product.dimension = 2;
    product.eval = [](const Eigen::VectorXd& x) {
        return -0.5 * x[0] * x[0] - 0.5 * (x[1] - 2.0) * (x[1] - 2.0) / 0.25;
    };
    SplitRng rng(91);
    Eigen::VectorXd init(2);
    init << 0, 2;
    const Chain joint = rw_metropolis(product, init, 100000, rng, true);

    const Eigen::VectorXd g0 = linspace(-4.5, 4.5, 121);
    const Eigen::VectorXd g1 = linspace(0.0, 4.0, 121);
    const GridDensity m0 = chain_to_density(joint, 0, g0);
    const GridDensity m1 = chain_to_density(joint, 1, g1);
    CHECK(tv_to_law(m0, make_gaussian_law(0.0, 1.0)) < 0.05);
    CHECK(tv_to_law(m1, make_gaussian_law(2.0, 0.25)) < 0.05);
}

TEST_CASE("effective_sample_size") {
    SUBCASE("iid draws") {
        SplitRng rng(1001);
        Eigen::VectorXd draws(10000);
        for (int i = 0; i < draws.size(); ++i) draws[i] = rng.normal();
        const double ess = effective_sample_size(chain_from_draws(draws), 0);
        CHECK(ess > 8000.0);
        CHECK(ess <= 12000.0);
    }
    SUBCASE("constant chain hits the floor") {
        const Eigen::VectorXd draws = Eigen::VectorXd::Constant(500, 3.14);
        CHECK(effective_sample_size(chain_from_draws(draws), 0) == 1.0);
    }
    SUBCASE("ar(1) autocorrelation time") {
        SplitRng rng(1002);
        const double phi = 0.9;
        Eigen::VectorXd draws(100000);
        draws[0] = 0.0;
        for (int i = 1; i < draws.size(); ++i)
            draws[i] = phi * draws[i - 1] + rng.normal();
        const double ess = effective_sample_size(chain_from_draws(draws), 0);
        const double expected = 100000.0 * (1.0 - phi) / (1.0 + phi);
        CHECK(std::abs(ess - expected) / expected < 0.25);
    }
    SUBCASE("short chains are rejected") {
        const Eigen::VectorXd draws = Eigen::VectorXd::Zero(5);
        CHECK_THROWS_AS(effective_sample_size(chain_from_draws(draws), 0), ValidationError);
    }
}

TEST_CASE("chain_to_density") {
    SUBCASE("exact gaussian draws recover the law") {
        SplitRng rng(555);
        Eigen::VectorXd draws(100000);
        for (int i = 0; i < draws.size(); ++i) draws[i] = rng.normal();
        const GridDensity d =
            chain_to_density(chain_from_draws(draws), 0, linspace(-4.5, 4.5, 151));
        CHECK(tv_to_law(d, make_gaussian_law(0.0, 1.0)) < 0.02);
    }
    SUBCASE("exact negexp draws recover the law") {
        SplitRng rng(556);
        const NegExpLaw law = make_negexp_law(0.0, 1.0);
        Eigen::VectorXd draws(100000);
        for (int i = 0; i < draws.size(); ++i) draws[i] = -rng.exponential(1.0);
        const GridDensity d =
            chain_to_density(chain_from_draws(draws), 0, linspace(-12, 0.0, 201));
        CHECK(tv_to_law(d, law) < 0.02);
    }
    SUBCASE("constant chain concentrates in one bin") {
        const Eigen::VectorXd draws = Eigen::VectorXd::Constant(200, 0.52);
        const Eigen::VectorXd grid = linspace(0, 1, 21);
        const GridDensity d = chain_to_density(chain_from_draws(draws), 0, grid);
        // All mass within one smoothing pass of the 0.5 bin.
        double mass_near = 0.0;
        for (int i = 0; i < grid.size(); ++i)
            if (std::abs(grid[i] - 0.5) < 0.11) mass_near += d.values[i];
        CHECK(mass_near / d.values.sum() > 0.999);
    }
    SUBCASE("mass outside the grid is an error") {
        SplitRng rng(557);
        Eigen::VectorXd draws(1000);
        for (int i = 0; i < draws.size(); ++i) draws[i] = 50.0 + rng.normal();
        CHECK_THROWS_AS(chain_to_density(chain_from_draws(draws), 0, linspace(-1, 1, 11)),
                        NumericalError);
    }
}

TEST_CASE("mcmc density agrees with grid density on a conjugate target") {
    const int n = 12;
    const double xbar = 0.4;
    const LogTarget lik =
        scalar_target([&](double t) { return -0.5 * n * (t - xbar) * (t - xbar); });
    const LogTarget prior = scalar_target([](double t) { return -0.5 * t * t / 4.0; });
    const Eigen::VectorXd grid = linspace(-1.2, 2.0, 161);
    const GridDensity exact = grid_posterior(lik, prior, grid);

    LogTarget joint;
    joint.dimension = 1;
    joint.eval = [&](const Eigen::VectorXd& x) {
        return lik(x) + prior(x);
    };
    SplitRng rng(31415);
    Eigen::VectorXd init(1);
    init << 0.4;
    const Chain chain = rw_metropolis(joint, init, 100000, rng, true);
    const GridDensity approx = chain_to_density(chain, 0, grid);
    CHECK(tv_distance(exact, approx) < 0.05);
}

TEST_CASE("chain serialization") {
    SplitRng rng(606);
    Eigen::VectorXd draws(50);
    for (int i = 0; i < draws.size(); ++i) draws[i] = rng.normal();
    const Chain c = chain_from_draws(draws);
    const std::string csv = chain_to_csv(c);
    CHECK(csv.rfind("step,coord0,logp", 0) == 0);
    const std::string diag = chain_diagnostics_json(c);
    CHECK(diag.find("\"ess\"") != std::string::npos);
    CHECK(diag.find("\"accept_rate\"") != std::string::npos);
}
