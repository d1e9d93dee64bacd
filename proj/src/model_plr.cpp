#include "bvmlab/model_plr.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "bvmlab/errors.hpp"

namespace bvmlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kJitter = 1e-10;

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double fa, double fm, double fb, double whole, double tol,
                        int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    if (b <= a) return 0.0;
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 40);
}

// Exact integrals of a piecewise-linear path over [0,1], with constant
// extension outside its knot range.
void path_moments(const NuisancePath& p, double* mean, double* second) {
    double m1 = 0.0, m2 = 0.0;
    const int k = p.size();
    const double t0 = p.knots[0], t_end = p.knots[k - 1];
    m1 += t0 * p.values[0];
    m2 += t0 * p.values[0] * p.values[0];
    for (int i = 0; i + 1 < k; ++i) {
        const double w = p.knots[i + 1] - p.knots[i];
        const double a = p.values[i], b = p.values[i + 1];
        m1 += w * 0.5 * (a + b);
        m2 += w * (a * a + a * b + b * b) / 3.0;
    }
    m1 += (1.0 - t_end) * p.values[k - 1];
    m2 += (1.0 - t_end) * p.values[k - 1] * p.values[k - 1];
    *mean = m1;
    *second = m2;
}

Eigen::VectorXd equispaced_knots(int m) {
    Eigen::VectorXd k(m);
    for (int i = 0; i < m; ++i) k[i] = static_cast<double>(i) / (m - 1);
    return k;
}

// Hat-function weights of v on the knot grid (piecewise-linear interpolation).
void hat_row(const Eigen::VectorXd& knots, double v, Eigen::MatrixXd& design, int row) {
    const int m = static_cast<int>(knots.size());
    design.row(row).setZero();
    if (v <= knots[0]) {
        design(row, 0) = 1.0;
        return;
    }
    if (v >= knots[m - 1]) {
        design(row, m - 1) = 1.0;
        return;
    }
    const double* begin = knots.data();
    const int j = static_cast<int>(std::upper_bound(begin, begin + m, v) - begin);
    const double t = (v - knots[j - 1]) / (knots[j] - knots[j - 1]);
    design(row, j - 1) = 1.0 - t;
    design(row, j) = t;
}

double log_theta_prior(const std::variant<GaussianLaw, GridDensity>& prior, double theta) {
    if (std::holds_alternative<GaussianLaw>(prior)) {
        const GaussianLaw& g = std::get<GaussianLaw>(prior);
        const double d = theta - g.center[0];
        return -0.5 * d * d / g.cov(0, 0);
    }
    const double v = std::get<GridDensity>(prior)(theta);
    return v > 0.0 ? std::log(v) : kNegInf;
}

// Shared per-dataset factorization for the exact Gaussian algebra:
// Sigma = I + B K B' with A = B chol(K); Sigma^{-1} x = x - A M^{-1} A' x,
// M = I + A'A. Nothing here depends on theta.
struct ExactCore {
    Eigen::VectorXd knots;
    Eigen::MatrixXd B;  // n x m interpolation design
    Eigen::MatrixXd C;  // chol(K)
    Eigen::MatrixXd A;  // B * C
    Eigen::LLT<Eigen::MatrixXd> M_llt;
    Eigen::VectorXd y_eff;  // Y - B * eta_prior_mean
    Eigen::VectorXd u;
    double uSu = 0.0, uSy = 0.0;
    // Sufficient statistics making each MCMC step O(m^2), independent of n.
    Eigen::MatrixXd Q;       // A'A
    Eigen::VectorXd At_y;    // A' y_eff
    Eigen::VectorXd At_u;    // A' u
    double u2 = 0.0, uy = 0.0, y2 = 0.0;

    double sigma_inv_quad(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
        const Eigen::VectorXd at = A.transpose() * a;
        const Eigen::VectorXd bt = A.transpose() * b;
        return a.dot(b) - at.dot(M_llt.solve(bt));
    }

    // -1/2 || y_eff - theta u - A w ||^2 via the precomputed forms.
    double loglik_w(double theta, const Eigen::VectorXd& w) const {
        const double c0 = y2 - 2.0 * theta * uy + theta * theta * u2;
        const double lin = At_y.dot(w) - theta * At_u.dot(w);
        return -0.5 * (c0 - 2.0 * lin + w.dot(Q * w));
    }
};

ExactCore build_exact_core(const SampleSet& sample, const PlrConfig& config,
                           const Eigen::VectorXd& eta_prior_mean,
                           bool degenerate_nuisance = false) {
    ExactCore core;
    const int n = sample.n();
    const int m = config.knots_m;
    core.knots = equispaced_knots(m);
    if (degenerate_nuisance) {
        core.C = Eigen::MatrixXd::Zero(m, m);
    } else {
        const Eigen::MatrixXd K = ibm_prior_cov(config.prior_k, core.knots) +
                                  kJitter * Eigen::MatrixXd::Identity(m, m);
        Eigen::LLT<Eigen::MatrixXd> kllt(K);
        if (kllt.info() != Eigen::Success)
            throw NumericalError(
                "plr posterior: nuisance prior covariance not factorizable (m too large?)");
        core.C = kllt.matrixL();
    }
    core.B.resize(n, m);
    for (int i = 0; i < n; ++i) hat_row(core.knots, sample.observations(i, 2), core.B, i);
    core.A = core.B * core.C;
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(m, m) + core.A.transpose() * core.A;
    core.M_llt.compute(M);
    if (core.M_llt.info() != Eigen::Success)
        throw NumericalError("plr posterior: ill-conditioned design (m too large for n?)");
    core.u = sample.observations.col(1);
    core.y_eff = sample.observations.col(0);
    if (eta_prior_mean.size() == m)
        core.y_eff -= core.B * eta_prior_mean;
    else if (eta_prior_mean.size() != 0)
        throw ValidationError("plr posterior: eta_prior_mean has wrong length");
    core.uSu = core.sigma_inv_quad(core.u, core.u);
    core.uSy = core.sigma_inv_quad(core.u, core.y_eff);
    core.Q = core.A.transpose() * core.A;
    core.At_y = core.A.transpose() * core.y_eff;
    core.At_u = core.A.transpose() * core.u;
    core.u2 = core.u.squaredNorm();
    core.uy = core.u.dot(core.y_eff);
    core.y2 = core.y_eff.squaredNorm();
    return core;
}

}  // namespace

PlrStandardization plr_standardization(const PlrConfig& config) {
    if (!(config.xi_sd > 0.0))
        throw ValidationError("plr: xi_sd must be positive (P(U-E[U|V])^2 > 0)");
    PlrStandardization s;
    double m2 = 0.0;
    path_moments(config.condexp, &s.rho_mean, &m2);
    s.rho_var = std::max(0.0, m2 - s.rho_mean * s.rho_mean);
    s.scale = 1.0 / std::sqrt(s.rho_var + config.xi_sd * config.xi_sd);
    s.info = config.xi_sd * config.xi_sd * s.scale * s.scale;
    return s;
}

NuisancePath plr_standardized_condexp(const PlrConfig& config) {
    const PlrStandardization s = plr_standardization(config);
    NuisancePath p = config.condexp;
    for (int i = 0; i < p.size(); ++i) p.values[i] = (p.values[i] - s.rho_mean) * s.scale;
    return p;
}

SampleSet plr_generate(const PlrConfig& config, int n, SplitRng& rng) {
    if (n < 1) throw ValidationError("plr_generate: n must be at least 1");
    const PlrStandardization st = plr_standardization(config);
    SampleSet s;
    s.seed = rng.seed();
    s.observations.resize(n, 3);
    for (int i = 0; i < n; ++i) {
        const double v = rng.uniform();
        const double xi = config.xi_sd * rng.normal();
        const double u = (config.condexp(v) - st.rho_mean + xi) * st.scale;
        const double e = rng.normal();
        s.observations(i, 0) = config.theta0 * u + config.eta0(v) + e;
        s.observations(i, 1) = u;
        s.observations(i, 2) = v;
    }
    return s;
}

Eigen::MatrixXd ibm_prior_cov(int k, const Eigen::VectorXd& knots) {
    if (k < 0) throw ValidationError("ibm_prior_cov: k must be nonnegative");
    const int m = static_cast<int>(knots.size());
    for (int i = 0; i < m; ++i)
        if (knots[i] < 0.0 || knots[i] > 1.0)
            throw ValidationError("ibm_prior_cov: knots must lie in [0,1]");
    const double kfact2 = factorial(k) * factorial(k);
    Eigen::MatrixXd cov(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = i; j < m; ++j) {
            const double s = knots[i], t = knots[j];
            double poly = 0.0;
            double term = 1.0;  // (st)^p / (p!)^2
            for (int p = 0; p <= k; ++p) {
                if (p > 0) term *= (s * t) / (static_cast<double>(p) * p);
                poly += term;
            }
            double integral;
            const double upper = std::min(s, t);
            if (k == 0) {
                integral = upper;
            } else {
                integral = integrate(
                    [&](double u) { return std::pow(s - u, k) * std::pow(t - u, k) / kfact2; },
                    0.0, upper, 1e-10);
            }
            cov(i, j) = cov(j, i) = poly + integral;
        }
    }
    return cov;
}

double discrete_holder_norm(const NuisancePath& path, double alpha) {
    double sup = 0.0, semi = 0.0;
    for (int i = 0; i < path.size(); ++i) {
        sup = std::max(sup, std::abs(path.values[i]));
        for (int j = i + 1; j < path.size(); ++j) {
            const double gap = std::pow(path.knots[j] - path.knots[i], alpha);
            semi = std::max(semi, std::abs(path.values[j] - path.values[i]) / gap);
        }
    }
    return sup + semi;
}

NuisancePath plr_sample_prior(int k, const Eigen::VectorXd& knots, SplitRng& rng,
                              const std::optional<HolderBall>& conditioned) {
    const int m = static_cast<int>(knots.size());
    const Eigen::MatrixXd K =
        ibm_prior_cov(k, knots) + kJitter * Eigen::MatrixXd::Identity(m, m);
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success)
        throw NumericalError("plr_sample_prior: covariance not factorizable");
    const Eigen::MatrixXd C = llt.matrixL();
    if (conditioned && !(conditioned->bound > 0.0))
        throw ValidationError("plr_sample_prior: Holder bound must be positive");
    for (long attempt = 0; attempt < 100000; ++attempt) {
        NuisancePath p{knots, C * rng.normal_vector(m)};
        if (!conditioned) return p;
        if (discrete_holder_norm(p, conditioned->alpha) < conditioned->bound) return p;
    }
    throw NumericalError(
        "plr_sample_prior: rejection exceeded 1e5 attempts; Holder bound too small");
}

EfficientInfluence plr_efficient_influence(const PlrConfig& config) {
    const PlrStandardization st = plr_standardization(config);
    const NuisancePath cond = plr_standardized_condexp(config);
    const NuisancePath eta0 = config.eta0;
    const double theta0 = config.theta0;
    return scalar_influence(
        [theta0, eta0, cond](const Eigen::VectorXd& x) {
            const double resid = x[0] - theta0 * x[1] - eta0(x[2]);
            return resid * (x[1] - cond(x[2]));
        },
        st.info);
}

NuisancePath plr_eta_star(double theta, const PlrConfig& config) {
    const NuisancePath cond = plr_standardized_condexp(config);
    // Union knot grid keeps the combination exactly piecewise-linear.
    std::vector<double> ks(config.eta0.knots.data(),
                           config.eta0.knots.data() + config.eta0.size());
    ks.insert(ks.end(), cond.knots.data(), cond.knots.data() + cond.size());
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    Eigen::VectorXd knots = Eigen::Map<Eigen::VectorXd>(ks.data(), static_cast<int>(ks.size()));
    Eigen::VectorXd values(knots.size());
    for (int i = 0; i < knots.size(); ++i)
        values[i] = config.eta0(knots[i]) - (theta - config.theta0) * cond(knots[i]);
    return NuisancePath{std::move(knots), std::move(values)};
}

double plr_loglik(double theta, const NuisancePath& eta, const SampleSet& sample) {
    double out = 0.0;
    for (int i = 0; i < sample.n(); ++i) {
        const double r = sample.observations(i, 0) - theta * sample.observations(i, 1) -
                         eta(sample.observations(i, 2));
        out -= 0.5 * r * r;
    }
    return out;
}

double plr_nuisance_hellinger(const NuisancePath& eta1, const NuisancePath& eta2,
                              int quadrature_points) {
    double h2 = 0.0;
    const int nv = quadrature_points;
    double prev = 0.0;
    for (int i = 0; i <= nv; ++i) {
        const double v = static_cast<double>(i) / nv;
        const double d = eta1(v) - eta2(v);
        const double f = 2.0 * (1.0 - std::exp(-d * d / 8.0));
        if (i > 0) h2 += 0.5 * (prev + f) / nv;
        prev = f;
    }
    return std::sqrt(h2);
}

double plr_exact_log_sn_ratio(const SampleSet& sample, const PlrConfig& config, double h) {
    const ExactCore core = build_exact_core(sample, config, Eigen::VectorXd());
    const double root_n = std::sqrt(static_cast<double>(sample.n()));
    const double t0 = config.theta0, th = config.theta0 + h / root_n;
    auto q = [&](double theta) { return -2.0 * theta * core.uSy + theta * theta * core.uSu; };
    return -0.5 * (q(th) - q(t0));
}

PlrConditionalPosterior plr_conditional_nuisance(const SampleSet& sample,
                                                 const PlrConfig& config, double theta) {
    const ExactCore core = build_exact_core(sample, config, Eigen::VectorXd());
    PlrConditionalPosterior out;
    out.knots = core.knots;
    out.prior_chol = core.C;
    const Eigen::VectorXd resid = core.y_eff - theta * core.u;
    out.mean_w = core.M_llt.solve(core.A.transpose() * resid);
    out.posterior_chol_w = core.M_llt.matrixL();
    return out;
}

NuisancePath PlrConditionalPosterior::draw(SplitRng& rng) const {
    const int m = static_cast<int>(knots.size());
    // w | data ~ N(mean_w, M^{-1}); with M = G G', a draw is mean + G^{-T} z.
    Eigen::VectorXd z = rng.normal_vector(m);
    posterior_chol_w.transpose().triangularView<Eigen::Upper>().solveInPlace(z);
    return NuisancePath{knots, prior_chol * (mean_w + z)};
}

NuisancePath PlrConditionalPosterior::mean_path() const {
    return NuisancePath{knots, prior_chol * mean_w};
}

namespace {

// Metropolis-within-Gibbs over (theta, whitened nuisance knots) with
// prior-preserving autoregressive path proposals.
Chain plr_gibbs_theta_chain(const SampleSet& sample, const PlrConfig& config,
                            const PlrPosteriorOptions& options, SplitRng& rng) {
    const ExactCore core = build_exact_core(sample, config, options.eta_prior_mean);
    const int m = config.knots_m;
    const int steps = options.mcmc_steps;
    const int burn_in =
        options.mcmc_burn_in >= 0 ? options.mcmc_burn_in : std::min(steps / 5, 10000);
    if (burn_in >= steps)
        throw ValidationError("plr posterior: mcmc steps do not exceed burn-in");

    const double u2 = core.u2;
    const bool gaussian_prior = std::holds_alternative<GaussianLaw>(config.theta_prior);

    auto in_ball = [&](const Eigen::VectorXd& w) {
        if (!options.conditioned) return true;
        NuisancePath p{core.knots, core.C * w};
        return discrete_holder_norm(p, options.conditioned->alpha) < options.conditioned->bound;
    };

    Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
    if (!in_ball(w))
        throw ValidationError("plr posterior: zero path outside the Holder ball");
    double theta = config.theta0;
    double beta = options.pcn_blend;
    double ll = core.loglik_w(theta, w);

    Chain chain;
    chain.states.resize(steps - burn_in, 1);
    chain.log_values.resize(steps - burn_in);
    long accepted_post = 0;
    const double target_accept = 0.234;

    for (int step = 0; step < steps; ++step) {
        // theta update: exact conjugate draw (gaussian prior) or grid draw.
        const double uz = core.uy - core.At_u.dot(w);
        if (gaussian_prior) {
            const GaussianLaw& g = std::get<GaussianLaw>(config.theta_prior);
            const double prec = u2 + 1.0 / g.cov(0, 0);
            const double mean = (uz + g.center[0] / g.cov(0, 0)) / prec;
            theta = mean + rng.normal() / std::sqrt(prec);
        } else {
            const GridDensity& gd = std::get<GridDensity>(config.theta_prior);
            Eigen::VectorXd logf(gd.size());
            for (int i = 0; i < gd.size(); ++i) {
                const double t = gd.grid[i];
                const double lp = gd.values[i] > 0.0 ? std::log(gd.values[i]) : kNegInf;
                logf[i] = lp + t * uz - 0.5 * t * t * u2;
            }
            theta = sample_log_linear_density(gd.grid, logf, rng);
        }
        ll = core.loglik_w(theta, w);

        // path update: pCN blend with a fresh prior draw.
        const Eigen::VectorXd w_prop =
            beta * w + std::sqrt(1.0 - beta * beta) * rng.normal_vector(m);
        bool accept = false;
        if (in_ball(w_prop)) {
            const double ll_prop = core.loglik_w(theta, w_prop);
            accept = std::log(rng.uniform()) < ll_prop - ll;
            if (accept) {
                w = w_prop;
                ll = ll_prop;
            }
        }
        if (step < burn_in) {
            const double gain = 1.0 / std::pow(step + 1.0, 0.7);
            // Larger beta means smaller moves and higher acceptance.
            double lam = std::log(1.0 - beta) + gain * ((accept ? 1.0 : 0.0) - target_accept);
            beta = std::min(0.999, std::max(0.01, 1.0 - std::exp(lam)));
        } else {
            const int i = step - burn_in;
            chain.states(i, 0) = theta;
            chain.log_values[i] = ll;
            if (accept) ++accepted_post;
        }
    }
    chain.accept_rate = static_cast<double>(accepted_post) / (steps - burn_in);
    chain.proposal_scale_history.push_back(beta);
    return chain;
}

}  // namespace

GridDensity plr_marginal_posterior(const SampleSet& sample, const PlrConfig& config,
                                   const Eigen::VectorXd& h_grid,
                                   const PlrPosteriorOptions& options, SplitRng* rng) {
    if (sample.n() < 1) throw ValidationError("plr_marginal_posterior: empty sample");
    const double root_n = std::sqrt(static_cast<double>(sample.n()));
    if (options.mode == PlrPosteriorOptions::Mode::exact) {
        const ExactCore core = build_exact_core(sample, config, options.eta_prior_mean,
                                                options.degenerate_nuisance);
        const LogTarget loglik = scalar_target([&](double h) {
            const double theta = config.theta0 + h / root_n;
            return -0.5 * (-2.0 * theta * core.uSy + theta * theta * core.uSu);
        });
        const LogTarget logprior = scalar_target([&](double h) {
            return log_theta_prior(config.theta_prior, config.theta0 + h / root_n);
        });
        return grid_posterior(loglik, logprior, h_grid);
    }
    if (rng == nullptr)
        throw ValidationError("plr_marginal_posterior: mcmc mode needs an rng");
    Chain chain = plr_gibbs_theta_chain(sample, config, options, *rng);
    chain.states = (root_n * (chain.states.array() - config.theta0)).matrix();
    return chain_to_density(chain, 0, h_grid);
}

double plr_perturbation_probe(const SampleSet& sample, const PlrConfig& config, double h,
                              double rho, int mcmc_budget, SplitRng& rng) {
    if (!(rho > 0.0)) throw ValidationError("plr_perturbation_probe: rho must be positive");
    if (mcmc_budget < 100) throw ValidationError("plr_perturbation_probe: budget too small");
    const double theta = config.theta0 + h / std::sqrt(static_cast<double>(sample.n()));
    const NuisancePath eta_star = plr_eta_star(theta, config);
    const ExactCore core = build_exact_core(sample, config, Eigen::VectorXd());
    const int m = config.knots_m;

    const int burn_in = std::min(mcmc_budget / 5, 10000);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
    double ll = core.loglik_w(theta, w);
    double beta = 0.9;

    std::vector<double> distances;
    distances.reserve(mcmc_budget - burn_in);
    long below = 0;
    for (int step = 0; step < mcmc_budget; ++step) {
        const Eigen::VectorXd prop =
            beta * w + std::sqrt(1.0 - beta * beta) * rng.normal_vector(m);
        const double ll_prop = core.loglik_w(theta, prop);
        const bool accept = std::log(rng.uniform()) < ll_prop - ll;
        if (accept) {
            w = prop;
            ll = ll_prop;
        }
        if (step < burn_in) {
            const double gain = 1.0 / std::pow(step + 1.0, 0.7);
            double lam = std::log(1.0 - beta) + gain * ((accept ? 1.0 : 0.0) - 0.234);
            beta = std::min(0.999, std::max(0.01, 1.0 - std::exp(lam)));
        } else {
            NuisancePath path{core.knots, core.C * w};
            const double d = plr_nuisance_hellinger(path, eta_star, 128);
            distances.push_back(d);
            if (d < rho) ++below;
        }
    }

    Chain diag;
    diag.states =
        Eigen::Map<Eigen::VectorXd>(distances.data(), static_cast<long>(distances.size()));
    diag.log_values = Eigen::VectorXd::Zero(diag.states.rows());
    if (effective_sample_size(diag, 0) < 20.0)
        throw DiagnosticsError("plr_perturbation_probe: ESS below 20");
    return static_cast<double>(below) / distances.size();
}

}  // namespace bvmlab
