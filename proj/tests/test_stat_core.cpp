#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "bvmlab/errors.hpp"
#include "bvmlab/stat_core.hpp"

using namespace bvmlab;

namespace {

Eigen::VectorXd linspace(double lo, double hi, int n) {
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    return g;
}

GridDensity tabulate_normal(double mean, double sd, double lo, double hi, int n) {
    const Eigen::VectorXd g = linspace(lo, hi, n);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal_pdf(g[i], mean, sd);
    return make_grid_density(g, v);
}

GridDensity random_density(SplitRng& rng, double lo, double hi, int n) {
    Eigen::VectorXd g = linspace(lo, hi, n);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = 0.05 + rng.uniform();
    return make_grid_density(g, v);
}

}  // namespace

TEST_CASE("make_grid_density normalizes and validates") {
    SUBCASE("constant raw values give the uniform density") {
        Eigen::VectorXd g(3), v(3);
        g << 0, 1, 2;
        v << 1, 1, 1;
        const GridDensity d = make_grid_density(g, v);
        for (int i = 0; i < 3; ++i) CHECK(d.values[i] == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("already-normalized triangular density is unchanged") {
        Eigen::VectorXd g(2), v(2);
        g << 0, 1;
        v << 0, 2;
        const GridDensity d = make_grid_density(g, v);
        CHECK(d.values[0] == doctest::Approx(0.0));
        CHECK(d.values[1] == doctest::Approx(2.0));
    }
    SUBCASE("gaussian ordinates against the closed-form density") {
        const Eigen::VectorXd g = linspace(-5, 5, 1001);
        Eigen::VectorXd v(1001);
        for (int i = 0; i < 1001; ++i) v[i] = std::exp(-0.5 * g[i] * g[i]);
        const GridDensity d = make_grid_density(g, v);
        double worst = 0.0;
        for (int i = 0; i < 1001; ++i)
            worst = std::max(worst, std::abs(d.values[i] - normal_pdf(g[i])));
        CHECK(worst < 1e-6);
    }
    SUBCASE("validation errors are distinct") {
        Eigen::VectorXd bad_grid(3), v(3), zero(3), neg(3), g(3);
        bad_grid << 0, 2, 1;
        g << 0, 1, 2;
        v << 1, 1, 1;
        zero << 0, 0, 0;
        neg << 1, -1, 1;
        CHECK_THROWS_WITH_AS(make_grid_density(bad_grid, v),
                             doctest::Contains("not strictly increasing"), ValidationError);
        CHECK_THROWS_WITH_AS(make_grid_density(g, zero), doctest::Contains("all values are zero"),
                             ValidationError);
        CHECK_THROWS_WITH_AS(make_grid_density(g, neg), doctest::Contains("negative"),
                             ValidationError);
    }
    SUBCASE("trapezoid mass is one after construction") {
        SplitRng rng(5);
        const GridDensity d = random_density(rng, -1, 3, 57);
        CHECK(trapezoid_integral(d.grid, d.values) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("law_density matches closed forms") {
    const GaussianLaw std_normal = make_gaussian_law(0.0, 1.0);
    CHECK(law_density(std_normal, 0.0) ==
          doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));

    const NegExpLaw e01 = make_negexp_law(0.0, 1.0);
    CHECK(law_density(e01, 0.0) == doctest::Approx(1.0));
    CHECK(law_density(e01, 0.1) == 0.0);

    const NegExpLaw e23 = make_negexp_law(2.0, 3.0);
    CHECK(law_density(e23, 1.0) == doctest::Approx(3.0 * std::exp(-3.0)).epsilon(1e-12));

    Eigen::VectorXd wrong(2);
    wrong << 0, 0;
    CHECK_THROWS_AS(law_density(std_normal, wrong), ValidationError);

    SUBCASE("negexp integrates to one") {
        const Eigen::VectorXd g = linspace(-30, 2, 20001);
        Eigen::VectorXd v(g.size());
        for (int i = 0; i < g.size(); ++i) v[i] = law_density(e23, g[i]);
        CHECK(trapezoid_integral(g, v) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("sample_law moments and support") {
    SUBCASE("negexp draws never exceed the location") {
        SplitRng rng(17);
        const SampleSet s = sample_law(make_negexp_law(1.5, 2.0), 5000, rng);
        CHECK(s.observations.maxCoeff() <= 1.5);
    }
    SUBCASE("negexp mean is location - 1/rate") {
        SplitRng rng(18);
        const SampleSet s = sample_law(make_negexp_law(0.0, 1.0), 1000000, rng);
        CHECK(std::abs(s.observations.col(0).mean() + 1.0) < 0.01);
    }
    SUBCASE("bivariate gaussian sample covariance") {
        SplitRng rng(19);
        const GaussianLaw law =
            make_gaussian_law(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
        const SampleSet s = sample_law(law, 1000000, rng);
        const Eigen::MatrixXd centered =
            s.observations.rowwise() - s.observations.colwise().mean();
        const Eigen::MatrixXd cov = centered.transpose() * centered / s.n();
        CHECK((cov - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.01);
    }
    SUBCASE("n = 0 is rejected") {
        SplitRng rng(20);
        CHECK_THROWS_AS(sample_law(make_negexp_law(0, 1), 0, rng), ValidationError);
    }
    SUBCASE("seed is recorded and draws reproduce") {
        SplitRng r1(77), r2(77);
        const SampleSet a = sample_law(make_gaussian_law(0.0, 1.0), 50, r1);
        const SampleSet b = sample_law(make_gaussian_law(0.0, 1.0), 50, r2);
        CHECK(a.seed == 77);
        CHECK((a.observations - b.observations).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("tv_distance against the gaussian closed form") {
    const GridDensity p = tabulate_normal(0, 1, -8, 9, 4001);
    const GridDensity q = tabulate_normal(1, 1, -8, 9, 4001);
    // Equal-variance normals: TV = 2 Phi(|mu1-mu2|/2) - 1.
    const double exact = 2.0 * normal_cdf(0.5) - 1.0;
    CHECK(exact == doctest::Approx(0.382925).epsilon(1e-5));
    CHECK(std::abs(tv_distance(p, q) - exact) < 1e-4);

    CHECK(tv_distance(p, p) == 0.0);

    const GridDensity a = tabulate_normal(0, 0.05, -0.4, 0.4, 801);
    const GridDensity b = tabulate_normal(10, 0.05, 9.6, 10.4, 801);
    CHECK(std::abs(tv_distance(a, b) - 1.0) < 1e-8);
}

TEST_CASE("hellinger_distance") {
    const GridDensity p = tabulate_normal(0, 1, -8, 8, 2001);
    CHECK(hellinger_distance(p, p) == 0.0);

    // Exp(1) vs Exp(2): squared Hellinger 2 - 2 * BC with BC = 2 sqrt(2)/3.
    const Eigen::VectorXd g = linspace(0, 40, 8001);
    Eigen::VectorXd v1(g.size()), v2(g.size());
    for (int i = 0; i < g.size(); ++i) {
        v1[i] = std::exp(-g[i]);
        v2[i] = 2.0 * std::exp(-2.0 * g[i]);
    }
    const GridDensity e1 = make_grid_density(g, v1);
    const GridDensity e2 = make_grid_density(g, v2);
    const double exact = std::sqrt(2.0 - 4.0 * std::sqrt(2.0) / 3.0);
    CHECK(exact == doctest::Approx(0.338).epsilon(2e-3));
    CHECK(std::abs(hellinger_distance(e1, e2) - exact) < 1e-3);

    const GridDensity a = tabulate_normal(0, 0.05, -0.4, 0.4, 801);
    const GridDensity b = tabulate_normal(10, 0.05, 9.6, 10.4, 801);
    CHECK(std::abs(hellinger_distance(a, b) - std::sqrt(2.0)) < 1e-6);
}

TEST_CASE("tv_to_law") {
    SUBCASE("self distance is tiny") {
        const GridDensity p = tabulate_normal(0, 1, -9, 9, 6001);
        CHECK(tv_to_law(p, make_gaussian_law(0.0, 1.0)) < 1e-6);
    }
    SUBCASE("matches brute-force merged-grid integration") {
        const GridDensity p = tabulate_normal(0, 1, -9, 9, 6001);
        const NegExpLaw law = make_negexp_law(0.0, 1.0);
        const double got = tv_to_law(p, law);
        CHECK(got > 0.0);
        CHECK(got < 1.0);
        // Independent route: dense merged grid, direct |p-q|/2 quadrature,
        // with the jump at the law's location represented exactly.
        std::vector<double> pts;
        for (int i = 0; i <= 400000; ++i) pts.push_back(-40.0 + 49.0 * i / 400000);
        for (int i = 0; i < p.grid.size(); ++i) pts.push_back(p.grid[i]);
        pts.push_back(0.0);
        pts.push_back(std::nextafter(0.0, 1.0));
        std::sort(pts.begin(), pts.end());
        pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
        const Eigen::VectorXd g =
            Eigen::Map<Eigen::VectorXd>(pts.data(), static_cast<int>(pts.size()));
        Eigen::VectorXd diff(g.size());
        for (int i = 0; i < g.size(); ++i) diff[i] = std::abs(p(g[i]) - law_density(law, g[i]));
        const double brute = 0.5 * trapezoid_integral(g, diff);
        CHECK(std::abs(got - brute) < 1e-6);
    }
    SUBCASE("gaussian closed form") {
        const GridDensity p = tabulate_normal(0.5, 1, -8, 9, 6001);
        const double exact = 2.0 * normal_cdf(0.25) - 1.0;
        CHECK(exact == doctest::Approx(0.197413).epsilon(1e-5));
        CHECK(std::abs(tv_to_law(p, make_gaussian_law(0.0, 1.0)) - exact) < 1e-4);
    }
    SUBCASE("multivariate laws are rejected") {
        const GridDensity p = tabulate_normal(0, 1, -8, 8, 101);
        const GaussianLaw law =
            make_gaussian_law(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
        CHECK_THROWS_AS(tv_to_law(p, law), ValidationError);
    }
}

TEST_CASE("le cam inequalities on random pairs") {
    SplitRng rng(4242);
    for (int trial = 0; trial < 40; ++trial) {
        const GridDensity p = random_density(rng, -1 + rng.uniform(), 2 + rng.uniform(), 41);
        const GridDensity q = random_density(rng, -1 + rng.uniform(), 2 + rng.uniform(), 53);
        const double tv = tv_distance(p, q);
        const double h = hellinger_distance(p, q);
        CHECK(tv >= h * h / 2.0 - 1e-9);
        CHECK(tv <= h + 1e-9);
        CHECK(tv >= 0.0);
        CHECK(tv <= 1.0 + 1e-12);
    }
}

TEST_CASE("tv_distance is a metric on the union grid") {
    SplitRng rng(31337);
    for (int trial = 0; trial < 25; ++trial) {
        const GridDensity p = random_density(rng, 0, 1 + rng.uniform(), 31);
        const GridDensity q = random_density(rng, -0.5, 1, 47);
        const GridDensity r = random_density(rng, 0.2, 1.7, 29);
        CHECK(tv_distance(p, q) == tv_distance(q, p));
        CHECK(tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-10);
    }
}

TEST_CASE("histogram re-estimation converges in total variation") {
    // Freedman-Diaconis binning of larger and larger gaussian samples.
    auto fd_histogram = [](const SampleSet& s) {
        std::vector<double> x(s.observations.col(0).data(),
                              s.observations.col(0).data() + s.n());
        std::sort(x.begin(), x.end());
        const double q1 = x[static_cast<size_t>(0.25 * (x.size() - 1))];
        const double q3 = x[static_cast<size_t>(0.75 * (x.size() - 1))];
        const double width = 2.0 * (q3 - q1) / std::cbrt(static_cast<double>(x.size()));
        const double lo = x.front(), hi = x.back();
        const int bins = std::max(4, static_cast<int>(std::ceil((hi - lo) / width)));
        Eigen::VectorXd centers(bins), counts = Eigen::VectorXd::Zero(bins);
        const double h = (hi - lo) / bins;
        for (int b = 0; b < bins; ++b) centers[b] = lo + (b + 0.5) * h;
        for (double v : x) {
            int b = std::min(bins - 1, static_cast<int>((v - lo) / h));
            counts[b] += 1.0;
        }
        return make_grid_density(centers, counts);
    };

    const GaussianLaw law = make_gaussian_law(0.0, 1.0);
    std::vector<double> median_tv;
    for (int n : {1000, 10000, 100000}) {
        std::vector<double> tvs;
        for (int seed = 0; seed < 20; ++seed) {
            SplitRng rng = SplitRng(900).fork(n, seed);
            const SampleSet s = sample_law(law, n, rng);
            tvs.push_back(tv_to_law(fd_histogram(s), law));
        }
        std::sort(tvs.begin(), tvs.end());
        median_tv.push_back(tvs[tvs.size() / 2]);
    }
    CHECK(median_tv[1] < median_tv[0]);
    CHECK(median_tv[2] < median_tv[1]);
}

TEST_CASE("serialization round trips") {
    const GridDensity p = tabulate_normal(0.3, 0.7, -3, 4, 101);
    const GridDensity back = grid_density_from_csv(grid_density_to_csv(p));
    CHECK((p.grid - back.grid).cwiseAbs().maxCoeff() == 0.0);
    CHECK((p.values - back.values).cwiseAbs().maxCoeff() == 0.0);

    const GaussianLaw g = make_gaussian_law(1.5, 2.25);
    const Law1D g_back = law_from_json(law_to_json(g));
    CHECK(std::get<GaussianLaw>(g_back).center[0] == 1.5);
    CHECK(std::get<GaussianLaw>(g_back).cov(0, 0) == 2.25);

    const NegExpLaw e = make_negexp_law(0.25, 4.0);
    const Law1D e_back = law_from_json(law_to_json(e));
    CHECK(std::get<NegExpLaw>(e_back).location == 0.25);
    CHECK(std::get<NegExpLaw>(e_back).rate == 4.0);
}

TEST_CASE("dataset csv round trips") {
    SplitRng rng(808);
    SampleSet s;
    s.observations.resize(7, 3);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 3; ++j) s.observations(i, j) = rng.normal();
    const std::string csv = sample_to_csv(s, "y,u,v");
    CHECK(csv.rfind("y,u,v\n", 0) == 0);
    const SampleSet back = sample_from_csv(csv);
    CHECK((back.observations - s.observations).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(sample_to_csv(s, "x"), ValidationError);
}

TEST_CASE("normal quantile inverts the cdf") {
    for (double p : {1e-10, 1e-4, 0.025, 0.3, 0.5, 0.8, 0.975, 1 - 1e-6}) {
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
    }
}
