#include "bvmlab/model_boundary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "bvmlab/errors.hpp"
#include "bvmlab/posterior_engine.hpp"

namespace bvmlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// 16-point Gauss-Legendre nodes/weights on [-1, 1].
const double kGlNodes[16] = {
    -0.9894009349916499, -0.9445750230732326, -0.8656312023878318, -0.7554044083550030,
    -0.6178762444026438, -0.4580167776572274, -0.2816035507792589, -0.0950125098376374,
    0.0950125098376374,  0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
    0.7554044083550030,  0.8656312023878318,  0.9445750230732326,  0.9894009349916499};
const double kGlWeights[16] = {
    0.0271524594117541, 0.0622535239386479, 0.0951585116824928, 0.1246289712555339,
    0.1495959888165767, 0.1691565193950025, 0.1826034150449236, 0.1894506104550685,
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

double gl_segment(const std::function<double(double)>& f, double a, double b) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double s = 0.0;
    for (int i = 0; i < 16; ++i) s += kGlWeights[i] * f(c + h * kGlNodes[i]);
    return s * h;
}

}  // namespace

double LscriptPath::operator()(double t) const {
    if (t <= knots[0]) return values[0];
    const int m = size();
    if (t >= knots[m - 1]) return tail;
    const double* begin = knots.data();
    const int j = static_cast<int>(std::upper_bound(begin, begin + m, t) - begin);
    const double w = (t - knots[j - 1]) / (knots[j] - knots[j - 1]);
    return values[j - 1] + w * (values[j] - values[j - 1]);
}

double LscriptPath::integral(double x) const {
    if (x <= 0.0) return 0.0;
    const int m = size();
    if (x >= knots[m - 1]) return cumint[m - 1] + tail * (x - knots[m - 1]);
    const double* begin = knots.data();
    const int j = static_cast<int>(std::upper_bound(begin, begin + m, x) - begin);
    const double a = knots[j - 1], b = knots[j];
    const double va = values[j - 1];
    const double vx = va + (values[j] - va) * (x - a) / (b - a);
    return cumint[j - 1] + 0.5 * (va + vx) * (x - a);
}

double LscriptPath::sup_abs() const {
    double s = std::abs(tail);
    for (int i = 0; i < size(); ++i) s = std::max(s, std::abs(values[i]));
    return s;
}

LscriptPath make_lscript_path(Eigen::VectorXd knots, Eigen::VectorXd values) {
    if (knots.size() < 2) throw ValidationError("LscriptPath: need at least 2 knots");
    if (knots.size() != values.size())
        throw ValidationError("LscriptPath: knots and values lengths differ");
    if (knots[0] != 0.0) throw ValidationError("LscriptPath: knots must start at 0");
    for (int i = 0; i + 1 < knots.size(); ++i)
        if (!(knots[i] < knots[i + 1]))
            throw ValidationError("LscriptPath: knots not strictly increasing");
    LscriptPath p;
    p.tail = values[values.size() - 1];
    p.knots = std::move(knots);
    p.values = std::move(values);
    p.cumint.resize(p.size());
    p.cumint[0] = 0.0;
    for (int j = 1; j < p.size(); ++j)
        p.cumint[j] = p.cumint[j - 1] + 0.5 * (p.values[j - 1] + p.values[j]) *
                                            (p.knots[j] - p.knots[j - 1]);
    return p;
}

LscriptPath constant_lscript(double value, double t_max) {
    Eigen::VectorXd k(2), v(2);
    k << 0.0, t_max;
    v << value, value;
    return make_lscript_path(std::move(k), std::move(v));
}

double BoundaryConfig::effective_T() const {
    if (grid_T > 0.0) return grid_T;
    return 23.0 / (alpha - S);
}

BoundaryConfig default_boundary_config() {
    BoundaryConfig cfg;
    cfg.alpha = 2.0;
    cfg.S = 1.0;
    cfg.theta0 = 0.0;
    cfg.prior_S = 1.0;
    // True log-slope: a gentle increasing path bounded by S/2.
    const int nk = 65;
    Eigen::VectorXd k(nk), v(nk);
    for (int i = 0; i < nk; ++i) {
        const double u = static_cast<double>(i) / (nk - 1) * 0.97;
        k[i] = u / (1.0 - u);
        v[i] = 0.5 * cfg.S * k[i] / (1.0 + k[i]);
    }
    cfg.lscript0 = make_lscript_path(k, v);
    // Thick default prior on theta, wide around theta0.
    const int np = 801;
    Eigen::VectorXd pg(np), pv(np);
    for (int i = 0; i < np; ++i) {
        pg[i] = cfg.theta0 - 4.0 + 8.0 * i / (np - 1);
        pv[i] = normal_pdf(pg[i], cfg.theta0, 2.0);
    }
    cfg.theta_prior = make_grid_density(pg, pv);
    return cfg;
}

double esscher_normalizer(const LscriptPath& lscript, double alpha, double T) {
    if (!(alpha > lscript.sup_abs()))
        throw ValidationError("esscher: alpha must exceed the log-slope bound");
    const double t_end = std::max(T, lscript.knots[lscript.size() - 1]);
    // Integration breakpoints: path knots up to t_end, subdivided to width 1/2.
    std::vector<double> pts;
    pts.push_back(0.0);
    for (int i = 0; i < lscript.size(); ++i)
        if (lscript.knots[i] > 0.0 && lscript.knots[i] < t_end) pts.push_back(lscript.knots[i]);
    pts.push_back(t_end);
    std::sort(pts.begin(), pts.end());
    auto f = [&](double y) { return std::exp(-alpha * y + lscript.integral(y)); };
    double z = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        const double a = pts[i], b = pts[i + 1];
        const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / 0.5)));
        for (int p = 0; p < panels; ++p)
            z += gl_segment(f, a + (b - a) * p / panels, a + (b - a) * (p + 1) / panels);
    }
    // Analytic exponential tail with the constant slope value.
    z += std::exp(-alpha * t_end + lscript.integral(t_end)) / (alpha - lscript.tail);
    return z;
}

double esscher_density(const LscriptPath& lscript, double alpha, double x) {
    if (x < 0.0) throw ValidationError("esscher_density: x must be nonnegative");
    const double T = 23.0 / (alpha - lscript.sup_abs());
    const double z = esscher_normalizer(lscript, alpha, T);
    return std::exp(-alpha * x + lscript.integral(x)) / z;
}

LscriptPath boundary_sample_prior(double S, const Eigen::VectorXd& knots01, SplitRng& rng) {
    const int m = static_cast<int>(knots01.size());
    if (m < 2 || knots01[0] != 0.0)
        throw ValidationError("boundary_sample_prior: knots must start at 0");
    for (int i = 0; i + 1 < m; ++i)
        if (!(knots01[i] < knots01[i + 1]) || knots01[i + 1] > 1.0)
            throw ValidationError("boundary_sample_prior: knots must increase within [0,1]");
    const double z = rng.normal();
    double w = 0.0;
    Eigen::VectorXd gauss(m);
    gauss[0] = z;
    for (int i = 1; i < m; ++i) {
        w += std::sqrt(knots01[i] - knots01[i - 1]) * rng.normal();
        gauss[i] = z + w;
    }
    // Map [0,1) to the half-line through u -> u/(1-u); u = 1 is the tail.
    std::vector<double> tk, tv;
    double tail = S * (2.0 / M_PI) * std::atan(gauss[m - 1]);
    for (int i = 0; i < m; ++i) {
        if (knots01[i] >= 1.0) break;
        tk.push_back(knots01[i] / (1.0 - knots01[i]));
        tv.push_back(S * (2.0 / M_PI) * std::atan(gauss[i]));
    }
    Eigen::VectorXd kk = Eigen::Map<Eigen::VectorXd>(tk.data(), static_cast<int>(tk.size()));
    Eigen::VectorXd vv = Eigen::Map<Eigen::VectorXd>(tv.data(), static_cast<int>(tv.size()));
    LscriptPath p = make_lscript_path(std::move(kk), std::move(vv));
    p.tail = tail;
    return p;
}

namespace {

// Tabulated sampler: exact segment masses from the normalizer machinery and
// log-linear inversion inside fine segments.
struct EsscherSampler {
    std::vector<double> grid;
    std::vector<double> cumulative;  // mass of [0, grid[i]]
    std::vector<double> logpdf;      // unnormalized log density at grid points
    double z = 1.0;
    double t_end = 0.0;
    double tail_rate = 1.0;  // alpha - tail slope
    double tail_mass = 0.0;

    double draw(SplitRng& rng) const {
        const double u = rng.uniform();
        const double target = u * z;
        if (target >= cumulative.back()) {
            const double v = (target - cumulative.back()) / tail_mass;
            return t_end - std::log1p(-std::min(v, 1.0 - 1e-16)) / tail_rate;
        }
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
        const size_t j = std::max<size_t>(1, it - cumulative.begin()) - 1;
        const double rem = target - cumulative[j];
        const double a = logpdf[j], b = logpdf[j + 1];
        const double w = grid[j + 1] - grid[j];
        const double s = (b - a) / w;
        double x;
        if (std::abs(s) * w < 1e-12) {
            x = rem * std::exp(-a);
        } else {
            x = std::log1p(rem * s * std::exp(-a)) / s;
        }
        return grid[j] + std::min(std::max(x, 0.0), w);
    }
};

EsscherSampler build_esscher_sampler(const LscriptPath& lscript, double alpha, double T) {
    EsscherSampler smp;
    const double t_end = std::max(T, lscript.knots[lscript.size() - 1]);
    smp.t_end = t_end;
    smp.tail_rate = alpha - lscript.tail;
    std::vector<double> pts;
    pts.push_back(0.0);
    for (int i = 0; i < lscript.size(); ++i)
        if (lscript.knots[i] > 0.0 && lscript.knots[i] < t_end) pts.push_back(lscript.knots[i]);
    pts.push_back(t_end);
    std::sort(pts.begin(), pts.end());
    auto f = [&](double y) { return std::exp(-alpha * y + lscript.integral(y)); };
    smp.grid.push_back(0.0);
    smp.cumulative.push_back(0.0);
    smp.logpdf.push_back(0.0);
    double acc = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        const double a = pts[i], b = pts[i + 1];
        const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / 0.02)));
        for (int p = 0; p < panels; ++p) {
            const double lo = a + (b - a) * p / panels;
            const double hi = a + (b - a) * (p + 1) / panels;
            acc += gl_segment(f, lo, hi);
            smp.grid.push_back(hi);
            smp.cumulative.push_back(acc);
            smp.logpdf.push_back(-alpha * hi + lscript.integral(hi));
        }
    }
    smp.tail_mass = std::exp(-alpha * t_end + lscript.integral(t_end)) / smp.tail_rate;
    smp.z = acc + smp.tail_mass;
    return smp;
}

}  // namespace

SampleSet boundary_generate(const BoundaryConfig& config, int n, SplitRng& rng) {
    if (n < 1) throw ValidationError("boundary_generate: n must be at least 1");
    if (!(config.alpha > config.S) || !(config.S > 0.0))
        throw ValidationError("boundary_generate: need alpha > S > 0");
    const EsscherSampler smp =
        build_esscher_sampler(config.lscript0, config.alpha, config.effective_T());
    SampleSet s;
    s.seed = rng.seed();
    s.observations.resize(n, 1);
    for (int i = 0; i < n; ++i) s.observations(i, 0) = config.theta0 + smp.draw(rng);
    return s;
}

GridDensity exp_location_exact_posterior(const SampleSet& sample, const GridDensity& prior,
                                         int grid_points) {
    if (sample.n() < 1) throw ValidationError("exp_location_exact_posterior: empty sample");
    const int n = sample.n();
    const double x_min = sample.observations.col(0).minCoeff();
    const double width = 45.0 / n;
    Eigen::VectorXd grid(grid_points);
    for (int i = 0; i < grid_points; ++i)
        grid[i] = x_min - width + width * i / (grid_points - 1.0);
    Eigen::VectorXd logf(grid_points);
    bool any = false;
    for (int i = 0; i < grid_points; ++i) {
        const double pv = prior(grid[i]);
        logf[i] = pv > 0.0 ? std::log(pv) + n * grid[i] : kNegInf;
        any = any || pv > 0.0;
    }
    if (!any)
        throw NumericalError(
            "exp_location_exact_posterior: prior carries no mass left of the minimum");
    const double shift = logf.maxCoeff();
    Eigen::VectorXd vals(grid_points);
    for (int i = 0; i < grid_points; ++i)
        vals[i] = logf[i] == kNegInf ? 0.0 : std::exp(logf[i] - shift);
    return make_grid_density(grid, vals);
}

std::string boundary_posterior_to_json(const BoundaryPosterior& post) {
    nlohmann::json j;
    j["delta_n"] = post.delta_n;
    j["gamma"] = post.gamma;
    j["h_grid"] = std::vector<double>(post.h_density.grid.data(),
                                      post.h_density.grid.data() + post.h_density.size());
    j["h_density"] = std::vector<double>(
        post.h_density.values.data(), post.h_density.values.data() + post.h_density.size());
    return j.dump();
}

namespace {

// Sum of path integrals over shifted observation windows, exploiting the
// piecewise-quadratic structure of the integral: observations whose window
// stays inside one knot interval contribute through three pooled scalars.
struct ThetaGridLik {
    const LscriptPath& path;
    const Eigen::VectorXd& a;  // x_i - x_min, sorted ascending
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    std::vector<int> crossing;  // indices handled pointwise

    ThetaGridLik(const LscriptPath& p, const Eigen::VectorXd& base, double max_shift)
        : path(p), a(base) {
        const int m = path.size();
        for (int i = 0; i < a.size(); ++i) {
            const double lo = a[i];
            const double hi = a[i] + max_shift;
            const double* begin = path.knots.data();
            const int jlo = static_cast<int>(std::upper_bound(begin, begin + m, lo) - begin);
            const int jhi = static_cast<int>(std::upper_bound(begin, begin + m, hi) - begin);
            if (jlo == jhi) {
                // Window inside one interval (or the constant tail):
                // C(a + w) = C(a) + l(a) w + slope w^2 / 2 exactly.
                s0 += path.integral(lo);
                s1 += path(lo);
                double slope = 0.0;
                if (jlo > 0 && jlo < m)
                    slope = (path.values[jlo] - path.values[jlo - 1]) /
                            (path.knots[jlo] - path.knots[jlo - 1]);
                s2 += slope;
            } else {
                crossing.push_back(i);
            }
        }
    }

    double sum_at(double shift) const {
        double out = s0 + s1 * shift + 0.5 * s2 * shift * shift;
        for (int i : crossing) out += path.integral(a[i] + shift);
        return out;
    }
};

}  // namespace

BoundaryPosterior boundary_posterior(const SampleSet& sample, const BoundaryConfig& config,
                                     int iters, SplitRng& rng,
                                     const BoundaryMcmcOptions& options) {
    if (sample.n() < 1) throw ValidationError("boundary_posterior: empty sample");
    if (!(config.alpha > config.prior_S))
        throw ValidationError("boundary_posterior: need alpha > prior ball radius");
    const int n = sample.n();
    const double x_min = sample.observations.col(0).minCoeff();
    const int burn_in = options.burn_in >= 0 ? options.burn_in : std::min(iters / 5, 10000);
    if (burn_in >= iters)
        throw ValidationError("boundary_posterior: iters do not exceed burn-in");

    Eigen::VectorXd base = sample.observations.col(0).array() - x_min;
    std::sort(base.data(), base.data() + n);

    // theta grid on (x_min - width, x_min]; the conditional log-slope is at
    // least n(alpha - S), so the width covers e^{-40} of conditional mass.
    const double width = 40.0 / (n * (config.alpha - config.prior_S));
    const int tg = options.theta_grid_points;
    Eigen::VectorXd theta_grid(tg);
    for (int i = 0; i < tg; ++i)
        theta_grid[i] = x_min - width + width * i / (tg - 1.0);

    // Brownian grid for the prior path, u in [0,1].
    const int pk = options.prior_knots;
    Eigen::VectorXd u01(pk);
    for (int i = 0; i < pk; ++i) u01[i] = static_cast<double>(i) / (pk - 1);
    Eigen::VectorXd sqrt_du(pk);
    for (int i = 1; i < pk; ++i) sqrt_du[i] = std::sqrt(u01[i] - u01[i - 1]);

    auto path_from_gauss = [&](const Eigen::VectorXd& g) {
        std::vector<double> tk, tv;
        for (int i = 0; i + 1 < pk; ++i) {
            tk.push_back(u01[i] / (1.0 - u01[i]));
            tv.push_back(config.prior_S * (2.0 / M_PI) * std::atan(g[i]));
        }
        Eigen::VectorXd kk = Eigen::Map<Eigen::VectorXd>(tk.data(), static_cast<int>(tk.size()));
        Eigen::VectorXd vv = Eigen::Map<Eigen::VectorXd>(tv.data(), static_cast<int>(tv.size()));
        LscriptPath p = make_lscript_path(std::move(kk), std::move(vv));
        p.tail = config.prior_S * (2.0 / M_PI) * std::atan(g[pk - 1]);
        return p;
    };
    auto gauss_from_coords = [&](double z, const Eigen::VectorXd& dw) {
        Eigen::VectorXd g(pk);
        g[0] = z;
        double w = 0.0;
        for (int i = 1; i < pk; ++i) {
            w += sqrt_du[i] * dw[i];
            g[i] = z + w;
        }
        return g;
    };

    // Path log-likelihood at fixed theta grid offset uses the pooled sums;
    // the data part of the log-likelihood given (theta, path):
    //   n alpha theta + sum_i C(x_i - theta) - n log Z(path) + const.
    double z_coord = 0.0;
    Eigen::VectorXd dw_coord = Eigen::VectorXd::Zero(pk);
    LscriptPath path = options.degenerate_nuisance
                           ? config.lscript0
                           : path_from_gauss(gauss_from_coords(z_coord, dw_coord));
    double log_z = std::log(esscher_normalizer(path, config.alpha, config.effective_T()));
    double theta = x_min - 0.5 * width;

    auto data_loglik = [&](const LscriptPath& p, double log_norm, double th) {
        double c = 0.0;
        for (int i = 0; i < n; ++i) c += p.integral(base[i] + (x_min - th));
        return n * config.alpha * th + c - n * log_norm;
    };
    double ll = data_loglik(path, log_z, theta);

    Chain chain;
    chain.states.resize(iters - burn_in, 1);
    chain.log_values.resize(iters - burn_in);
    long accepted_post = 0;
    long path_attempts_post = 0;

    for (int step = 0; step < iters; ++step) {
        // theta draw from its exact grid conditional.
        {
            const ThetaGridLik lik(path, base, width);
            Eigen::VectorXd logf(tg);
            for (int i = 0; i < tg; ++i) {
                const double th = theta_grid[i];
                const double pv = config.theta_prior(th);
                logf[i] = pv > 0.0
                              ? std::log(pv) + n * config.alpha * th + lik.sum_at(x_min - th)
                              : kNegInf;
            }
            theta = sample_log_linear_density(theta_grid, logf, rng);
            ll = data_loglik(path, log_z, theta);
        }
        // path update: blend the gaussian coordinates with a fresh draw.
        bool accept = false;
        if (!options.degenerate_nuisance) {
            const double b = options.blend;
            const double fresh_w = std::sqrt(1.0 - b * b);
            const double z_prop = b * z_coord + fresh_w * rng.normal();
            Eigen::VectorXd dw_prop(pk);
            dw_prop[0] = 0.0;
            for (int i = 1; i < pk; ++i) dw_prop[i] = b * dw_coord[i] + fresh_w * rng.normal();
            const LscriptPath path_prop = path_from_gauss(gauss_from_coords(z_prop, dw_prop));
            const double log_z_prop =
                std::log(esscher_normalizer(path_prop, config.alpha, config.effective_T()));
            const double ll_prop = data_loglik(path_prop, log_z_prop, theta);
            accept = std::log(rng.uniform()) < ll_prop - ll;
            if (accept) {
                z_coord = z_prop;
                dw_coord = dw_prop;
                path = path_prop;
                log_z = log_z_prop;
                ll = ll_prop;
            }
        }
        if (step >= burn_in) {
            const int i = step - burn_in;
            chain.states(i, 0) = theta;
            chain.log_values[i] = ll;
            ++path_attempts_post;
            if (accept) ++accepted_post;
        }
    }
    chain.accept_rate = options.degenerate_nuisance
                            ? 1.0
                            : static_cast<double>(accepted_post) / path_attempts_post;

    const double theta_ess = effective_sample_size(chain, 0);
    if (!options.degenerate_nuisance && theta_ess < 20.0)
        throw DiagnosticsError("boundary_posterior: theta ESS below 20");

    BoundaryPosterior out;
    out.delta_n = n * (x_min - config.theta0);
    out.gamma = esscher_density(config.lscript0, config.alpha, 0.0);
    out.theta_ess = theta_ess;
    out.path_accept_rate = chain.accept_rate;

    // h = n(theta - theta0); grid ends exactly at Delta_n so no posterior
    // mass can sit above the boundary.
    Chain h_chain = chain;
    h_chain.states = (n * (chain.states.array() - config.theta0)).matrix();
    const double h_lo = std::min(h_chain.states.minCoeff(), out.delta_n - 1e-8);
    Eigen::VectorXd h_grid(options.h_grid_points);
    for (int i = 0; i < options.h_grid_points; ++i)
        h_grid[i] =
            h_lo + (out.delta_n - h_lo) * i / (options.h_grid_points - 1.0);
    out.h_density = chain_to_density(h_chain, 0, h_grid);
    return out;
}

}  // namespace bvmlab
