#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "bvmlab/errors.hpp"
#include "bvmlab/lan_toolkit.hpp"
#include "bvmlab/model_boundary.hpp"
#include "bvmlab/posterior_engine.hpp"
#include "bvmlab/rng.hpp"
#include "bvmlab/stat_core.hpp"

using namespace bvmlab;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::VectorXd linspace(double lo, double hi, int n) {
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    return g;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 == 1 ? v[v.size() / 2]
                             : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double worst = 0.0;
    for (size_t i = 0; i < sample.size(); ++i) {
        const double c = cdf(sample[i]);
        worst = std::max(worst, std::abs((i + 1) / n - c));
        worst = std::max(worst, std::abs(i / n - c));
    }
    return worst;
}

}  // namespace

TEST_CASE("esscher_density") {
    SUBCASE("zero log-slope is the exponential density") {
        const LscriptPath zero = constant_lscript(0.0, 30.0);
        CHECK(esscher_density(zero, 1.0, 0.0) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(esscher_density(zero, 1.0, 2.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-10));
    }
    SUBCASE("constant log-slope tilts the rate") {
        const LscriptPath c = constant_lscript(0.6, 40.0);
        const double alpha = 2.0;
        for (double x : {0.0, 0.5, 3.0})
            CHECK(esscher_density(c, alpha, x) ==
                  doctest::Approx(1.4 * std::exp(-1.4 * x)).epsilon(1e-9));
    }
    SUBCASE("generic path integrates to one") {
        SplitRng rng(600);
        const LscriptPath p = boundary_sample_prior(1.0, linspace(0, 1, 33), rng);
        const double alpha = 2.0;
        // Independent quadrature: dense trapezoid out to deep tail mass.
        const Eigen::VectorXd g = linspace(0, 40, 400001);
        double acc = 0.0;
        double prev = esscher_density(p, alpha, 0.0);
        const double z = esscher_normalizer(p, alpha, 23.0);
        for (int i = 1; i < g.size(); ++i) {
            const double cur = std::exp(-alpha * g[i] + p.integral(g[i])) / z;
            acc += 0.5 * (prev + cur) * (g[i] - g[i - 1]);
            prev = cur;
        }
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-8));
    }
    SUBCASE("negative x is rejected") {
        const LscriptPath zero = constant_lscript(0.0, 10.0);
        CHECK_THROWS_AS(esscher_density(zero, 1.0, -0.1), ValidationError);
    }
    SUBCASE("log-density is Lipschitz with constant alpha + S") {
        SplitRng rng(601);
        const double alpha = 2.0, S = 1.0;
        const LscriptPath p = boundary_sample_prior(S, linspace(0, 1, 33), rng);
        const double z = esscher_normalizer(p, alpha, 23.0);
        auto logd = [&](double x) { return -alpha * x + p.integral(x) - std::log(z); };
        SplitRng xs(602);
        for (int trial = 0; trial < 200; ++trial) {
            const double s = 20.0 * xs.uniform();
            const double t = 20.0 * xs.uniform();
            if (s == t) continue;
            CHECK(std::abs(logd(s) - logd(t)) <= (alpha + S) * std::abs(s - t) + 1e-12);
        }
    }
}

TEST_CASE("boundary_sample_prior") {
    const Eigen::VectorXd knots = linspace(0, 1, 65);
    SUBCASE("values stay inside the ball") {
        SplitRng rng(610);
        for (int r = 0; r < 200; ++r) {
            const LscriptPath p = boundary_sample_prior(1.0, knots, rng);
            CHECK(p.sup_abs() <= 1.0);
        }
    }
    SUBCASE("underlying gaussian at u = 1 has variance 2") {
        SplitRng rng(611);
        const double S = 1.0;
        double s1 = 0.0, s2 = 0.0;
        const int reps = 10000;
        for (int r = 0; r < reps; ++r) {
            SplitRng child = rng.fork(r);
            const LscriptPath p = boundary_sample_prior(S, knots, child);
            // Invert tail = S (2/pi) atan(Z + W_1).
            const double g = std::tan(p.tail / S * M_PI / 2.0);
            s1 += g;
            s2 += g * g;
        }
        const double var = s2 / reps - (s1 / reps) * (s1 / reps);
        CHECK(std::abs(var - 2.0) / 2.0 < 0.05);
    }
    SUBCASE("seed reproducibility") {
        SplitRng a(612), b(612);
        const LscriptPath pa = boundary_sample_prior(1.0, knots, a);
        const LscriptPath pb = boundary_sample_prior(1.0, knots, b);
        CHECK((pa.values - pb.values).cwiseAbs().maxCoeff() == 0.0);
        CHECK(pa.tail == pb.tail);
    }
}

TEST_CASE("boundary_generate") {
    SUBCASE("support starts at theta0") {
        BoundaryConfig cfg = default_boundary_config();
        cfg.theta0 = 1.25;
        SplitRng rng(620);
        const SampleSet s = boundary_generate(cfg, 5000, rng);
        CHECK(s.observations.minCoeff() >= 1.25);
    }
    SUBCASE("zero log-slope gives the shifted exponential") {
        BoundaryConfig cfg = default_boundary_config();
        cfg.lscript0 = constant_lscript(0.0, 30.0);
        SplitRng rng(621);
        const SampleSet s = boundary_generate(cfg, 10000, rng);
        std::vector<double> x(s.observations.col(0).data(),
                              s.observations.col(0).data() + s.n());
        const double ks = ks_distance(x, [&](double t) {
            return t <= cfg.theta0 ? 0.0 : 1.0 - std::exp(-cfg.alpha * (t - cfg.theta0));
        });
        CHECK(ks < 1.63 / std::sqrt(10000.0));
    }
    SUBCASE("rescaled minimum is asymptotically exponential with rate gamma") {
        const BoundaryConfig cfg = default_boundary_config();
        const double gamma = esscher_density(cfg.lscript0, cfg.alpha, 0.0);
        std::vector<double> mins;
        for (int rep = 0; rep < 500; ++rep) {
            SplitRng rng = SplitRng(622).fork(rep);
            const SampleSet s = boundary_generate(cfg, 1000, rng);
            mins.push_back(1000.0 * (s.observations.col(0).minCoeff() - cfg.theta0));
        }
        const double ks = ks_distance(mins, [&](double t) {
            return t <= 0.0 ? 0.0 : 1.0 - std::exp(-gamma * t);
        });
        CHECK(ks < 0.1);
    }
    SUBCASE("tightness of the rescaled minimum across n") {
        const BoundaryConfig cfg = default_boundary_config();
        std::vector<double> q99;
        for (int n : {1000, 4000}) {
            std::vector<double> mins;
            for (int rep = 0; rep < 500; ++rep) {
                SplitRng rng = SplitRng(623).fork(n, rep);
                const SampleSet s = boundary_generate(cfg, n, rng);
                mins.push_back(n * (s.observations.col(0).minCoeff() - cfg.theta0));
            }
            std::sort(mins.begin(), mins.end());
            q99.push_back(mins[494]);
        }
        const double ratio = q99[0] / q99[1];
        CHECK(ratio > 0.5);
        CHECK(ratio < 2.0);
    }
}

TEST_CASE("exp_location_exact_posterior") {
    SUBCASE("flat prior gives the truncated negative exponential") {
        // Rate-1 exponential shift family data.
        const double theta0 = 0.4;
        SplitRng rng(630);
        SampleSet s;
        s.observations.resize(50, 1);
        for (int i = 0; i < 50; ++i) s.observations(i, 0) = theta0 + rng.exponential(1.0);
        const double x_min = s.observations.minCoeff();

        // At n a = 6 the analytic truncation distance e^{-na} is far above
        // the TV estimator's quadrature floor and pins the closed form.
        {
            const double a = 6.0 / 50.0;
            const Eigen::VectorXd pg = linspace(x_min - a, x_min, 2);
            const GridDensity flat = make_grid_density(pg, Eigen::VectorXd::Ones(2));
            const GridDensity post = exp_location_exact_posterior(s, flat, 20001);
            const double q = std::exp(-6.0);
            CHECK(tv_to_law(post, make_negexp_law(x_min, 50.0)) ==
                  doctest::Approx(q).epsilon(0.01));
        }
        // At n a = 22 the analytic value is below 1e-8; the numeric estimate
        // sits at the quadrature floor.
        {
            const double a = 22.0 / 50.0;
            const Eigen::VectorXd pg = linspace(x_min - a, x_min, 2);
            const GridDensity flat = make_grid_density(pg, Eigen::VectorXd::Ones(2));
            const GridDensity post = exp_location_exact_posterior(s, flat, 20001);
            CHECK(tv_to_law(post, make_negexp_law(x_min, 50.0)) < 1e-6);
            CHECK(post.grid[post.size() - 1] <= x_min);
        }
    }
    SUBCASE("single observation matches the hand integral") {
        SampleSet s;
        s.observations.resize(1, 1);
        s.observations(0, 0) = 2.0;
        const double a = 30.0;
        const Eigen::VectorXd pg = linspace(2.0 - a, 2.0, 2);
        const GridDensity flat = make_grid_density(pg, Eigen::VectorXd::Ones(2));
        const GridDensity post = exp_location_exact_posterior(s, flat, 4001);
        // posterior density exp(theta - 2) / (1 - e^{-a}) for theta <= 2.
        for (double th : {1.0, 1.5, 1.9, 2.0})
            CHECK(post(th) ==
                  doctest::Approx(std::exp(th - 2.0) / (1.0 - std::exp(-a))).epsilon(1e-4));
    }
    SUBCASE("prior with no mass below the minimum fails loudly") {
        SampleSet s;
        s.observations.resize(10, 1);
        for (int i = 0; i < 10; ++i) s.observations(i, 0) = 5.0 + 0.1 * i;
        const Eigen::VectorXd pg = linspace(20.0, 30.0, 11);
        const GridDensity far = make_grid_density(pg, Eigen::VectorXd::Ones(11));
        CHECK_THROWS_AS(exp_location_exact_posterior(s, far, 501), NumericalError);
    }
}

TEST_CASE("lae_remainder for the esscher family") {
    const BoundaryConfig cfg = default_boundary_config();
    const double gamma = esscher_density(cfg.lscript0, cfg.alpha, 0.0);
    const double log_z =
        std::log(esscher_normalizer(cfg.lscript0, cfg.alpha, cfg.effective_T()));
    (void)log_z;

    const auto llr = [&](double h, const SampleSet& s) {
        const double theta = cfg.theta0 + h / s.n();
        const double x_min = s.observations.col(0).minCoeff();
        if (theta > x_min) return kNegInf;
        double out = 0.0;
        for (int i = 0; i < s.n(); ++i) {
            const double x = s.observations(i, 0);
            out += cfg.alpha * (h / s.n()) + cfg.lscript0.integral(x - theta) -
                   cfg.lscript0.integral(x - cfg.theta0);
        }
        return out;
    };

    // h = -1 is always inside the one-sided support {h <= Delta_n}.
    SUBCASE("median remainder is small at n = 1000") {
        std::vector<double> rems;
        for (int seed = 0; seed < 50; ++seed) {
            SplitRng rng = SplitRng(640).fork(seed);
            const SampleSet s = boundary_generate(cfg, 1000, rng);
            const LaeRemainderResult r = lae_remainder(llr, s, -1.0, gamma, cfg.theta0);
            REQUIRE(r.in_support);
            rems.push_back(std::abs(r.remainder));
        }
        CHECK(median(rems) < 0.05);
    }
    SUBCASE("median remainder decreases with n") {
        std::vector<double> med;
        for (int n : {250, 1000, 4000}) {
            std::vector<double> rems;
            for (int seed = 0; seed < 50; ++seed) {
                SplitRng rng = SplitRng(641).fork(n, seed);
                const SampleSet s = boundary_generate(cfg, n, rng);
                const LaeRemainderResult r = lae_remainder(llr, s, -1.0, gamma, cfg.theta0);
                REQUIRE(r.in_support);
                rems.push_back(std::abs(r.remainder));
            }
            med.push_back(median(rems));
        }
        CHECK(med[1] < med[0]);
        CHECK(med[2] < med[1]);
    }
}

TEST_CASE("boundary_posterior") {
    SUBCASE("degenerate nuisance matches the exact grid oracle") {
        BoundaryConfig cfg = default_boundary_config();
        cfg.lscript0 = constant_lscript(0.0, 30.0);
        SplitRng rng(650);
        const SampleSet s = boundary_generate(cfg, 200, rng);
        BoundaryMcmcOptions opt;
        opt.degenerate_nuisance = true;
        SplitRng mcmc_rng(651);
        const BoundaryPosterior post = boundary_posterior(s, cfg, 100000, mcmc_rng, opt);

        // Exact conditional: density prop. to prior(theta) e^{n alpha theta}
        // on (-inf, X_(1)], re-expressed in h = n(theta - theta0).
        const int n = s.n();
        const double x_min = s.observations.col(0).minCoeff();
        const LogTarget lik = scalar_target([&](double h) {
            const double theta = cfg.theta0 + h / n;
            return theta <= x_min ? n * cfg.alpha * theta : kNegInf;
        });
        const LogTarget prior = scalar_target([&](double h) {
            const double pv = cfg.theta_prior(cfg.theta0 + h / n);
            return pv > 0.0 ? std::log(pv) : kNegInf;
        });
        const double delta_n = n * (x_min - cfg.theta0);
        const GridDensity oracle =
            grid_posterior(lik, prior, linspace(delta_n - 25.0 / cfg.alpha, delta_n, 3001));
        CHECK(tv_distance(post.h_density, oracle) < 0.05);
        CHECK(post.delta_n == doctest::Approx(delta_n));
        CHECK(post.gamma == doctest::Approx(cfg.alpha).epsilon(1e-9));
    }
    SUBCASE("posterior support respects the sample minimum") {
        const BoundaryConfig cfg = default_boundary_config();
        SplitRng rng(652);
        const SampleSet s = boundary_generate(cfg, 300, rng);
        SplitRng mcmc_rng(653);
        const BoundaryPosterior post = boundary_posterior(s, cfg, 4000, mcmc_rng);
        CHECK(post.h_density.grid[post.h_density.size() - 1] <= post.delta_n + 1e-9);
        // No interpolated mass above Delta_n.
        CHECK(post.h_density(post.delta_n + 0.01) == 0.0);
    }
    SUBCASE("limit-law proximity at moderate n") {
        const BoundaryConfig cfg = default_boundary_config();
        std::vector<double> tvs;
        for (int seed = 0; seed < 5; ++seed) {
            SplitRng rng = SplitRng(654).fork(seed);
            const SampleSet s = boundary_generate(cfg, 500, rng);
            SplitRng mcmc_rng = SplitRng(655).fork(seed);
            const BoundaryPosterior post = boundary_posterior(s, cfg, 20000, mcmc_rng);
            tvs.push_back(tv_to_law(post.h_density,
                                    make_negexp_law(post.delta_n, post.gamma)));
        }
        CHECK(median(tvs) < 0.25);
    }
}
