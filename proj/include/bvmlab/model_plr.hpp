#pragma once

#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "bvmlab/lan_toolkit.hpp"
#include "bvmlab/nuisance_path.hpp"
#include "bvmlab/posterior_engine.hpp"
#include "bvmlab/rng.hpp"
#include "bvmlab/stat_core.hpp"

namespace bvmlab {

// Partial linear regression Y = theta*U + eta(V) + e with e ~ N(0,1),
// V ~ Uniform[0,1] and U = rho(V) + xi standardized so that EU = 0, EU^2 = 1.
// The raw conditional-mean shape rho is given by `condexp`; the standardized
// E[U|V] used by scores and least-favourable calculations is derived from it
// analytically (see plr_standardized_condexp).
struct PlrConfig {
    double theta0 = 0.0;
    NuisancePath eta0;
    NuisancePath condexp;
    double xi_sd = 1.0;
    int prior_k = 1;
    double holder_alpha = 0.75;
    double holder_bound = 10.0;
    std::variant<GaussianLaw, GridDensity> theta_prior = make_gaussian_law(0.0, 100.0);
    int knots_m = 32;
};

// Exact moments of the standardization: mean and variance of rho(V) under
// V ~ Uniform[0,1], and the joint scale 1/sqrt(Var rho + xi_sd^2).
struct PlrStandardization {
    double rho_mean = 0.0;
    double rho_var = 0.0;
    double scale = 1.0;
    double info = 1.0;  // efficient information xi_sd^2 * scale^2
};

PlrStandardization plr_standardization(const PlrConfig& config);

// E[U|V=v] after standardization, on the union of condexp's knots.
NuisancePath plr_standardized_condexp(const PlrConfig& config);

// Observation rows are (y, u, v).
SampleSet plr_generate(const PlrConfig& config, int n, SplitRng& rng);

// Covariance of the k-fold integrated Brownian motion prior released at
// random polynomial start: sum_{i<=k} (st)^i/(i!)^2 + int_0^1 (s-u)_+^k (t-u)_+^k / (k!)^2 du.
Eigen::MatrixXd ibm_prior_cov(int k, const Eigen::VectorXd& knots);

struct HolderBall {
    double alpha = 0.75;
    double bound = 10.0;
};

// Discrete Holder norm on the knot grid: sup |eta| + max |eta_i - eta_j| / |t_i - t_j|^alpha.
double discrete_holder_norm(const NuisancePath& path, double alpha);

NuisancePath plr_sample_prior(int k, const Eigen::VectorXd& knots, SplitRng& rng,
                              const std::optional<HolderBall>& conditioned = std::nullopt);

struct PlrPosteriorOptions {
    enum class Mode { exact, mcmc };
    Mode mode = Mode::exact;
    int mcmc_steps = 100000;
    int mcmc_burn_in = -1;                // -1: min(steps/5, 1e4)
    double pcn_blend = 0.9;               // autoregressive coefficient of path proposals
    std::optional<HolderBall> conditioned;  // restrict the nuisance prior to a Holder ball
    Eigen::VectorXd eta_prior_mean;        // optional prior mean on the knots (default 0)
    bool degenerate_nuisance = false;      // point-mass nuisance prior at eta_prior_mean
};

// Marginal posterior for h = sqrt(n)(theta - theta0) on h_grid. Exact mode
// integrates the Gaussian nuisance out in closed form; mcmc mode runs
// Metropolis-within-Gibbs over (theta, eta-knots).
GridDensity plr_marginal_posterior(const SampleSet& sample, const PlrConfig& config,
                                   const Eigen::VectorXd& h_grid,
                                   const PlrPosteriorOptions& options = {},
                                   SplitRng* rng = nullptr);

EfficientInfluence plr_efficient_influence(const PlrConfig& config);

// KL-minimizing nuisance at theta: eta0 - (theta - theta0) E[U|V].
NuisancePath plr_eta_star(double theta, const PlrConfig& config);

// Joint log-likelihood up to a theta/eta-independent constant.
double plr_loglik(double theta, const NuisancePath& eta, const SampleSet& sample);

// Model Hellinger distance between nuisances at theta0:
// H^2 = int_0^1 2(1 - exp(-(eta1-eta2)^2(v)/8)) dv.
double plr_nuisance_hellinger(const NuisancePath& eta1, const NuisancePath& eta2,
                              int quadrature_points = 512);

// Exact log(s_n(h)/s_n(0)) for the unconditioned Gaussian nuisance prior.
double plr_exact_log_sn_ratio(const SampleSet& sample, const PlrConfig& config, double h);

// Exact Gaussian conditional posterior of the nuisance given theta; used by
// the exact marginal and available as an oracle against MCMC output.
struct PlrConditionalPosterior {
    Eigen::VectorXd knots;
    Eigen::VectorXd mean_w;    // posterior mean in whitened prior coordinates
    Eigen::MatrixXd prior_chol;      // C with K = C C'
    Eigen::MatrixXd posterior_chol_w;  // lower L with posterior cov in w-coords = L L'

    NuisancePath draw(SplitRng& rng) const;
    NuisancePath mean_path() const;
};

PlrConditionalPosterior plr_conditional_nuisance(const SampleSet& sample,
                                                 const PlrConfig& config, double theta);

// Posterior mass of {d_H(eta, eta*(theta)) < rho} under the eta-posterior
// conditioned on theta = theta0 + h/sqrt(n), estimated by pCN MCMC.
double plr_perturbation_probe(const SampleSet& sample, const PlrConfig& config, double h,
                              double rho, int mcmc_budget, SplitRng& rng);

}  // namespace bvmlab
