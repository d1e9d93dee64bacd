#pragma once

#include <string>

#include <Eigen/Dense>

#include "bvmlab/rng.hpp"
#include "bvmlab/stat_core.hpp"

namespace bvmlab {

// Log-slope perturbation defined on [0, infinity): continuous piecewise-linear
// on the knot range, constant tail beyond the last knot.
struct LscriptPath {
    Eigen::VectorXd knots;   // increasing, starting at 0
    Eigen::VectorXd values;  // bounded by the ball radius S
    double tail = 0.0;       // value on [last knot, infinity)
    Eigen::VectorXd cumint;  // integral up to each knot, set by make_lscript_path

    int size() const { return static_cast<int>(knots.size()); }
    double operator()(double t) const;
    // Exact integral of the piecewise-linear path over [0, x].
    double integral(double x) const;
    double sup_abs() const;
};

LscriptPath make_lscript_path(Eigen::VectorXd knots, Eigen::VectorXd values);
LscriptPath constant_lscript(double value, double t_max);

// Support-boundary model: densities x -> exp(-alpha x + int_0^x lscript)/Z on
// [0, inf), shifted to [theta, inf).
struct BoundaryConfig {
    double theta0 = 0.0;
    LscriptPath lscript0;
    double alpha = 2.0;
    double S = 1.0;
    GridDensity theta_prior;  // continuous and positive near theta0
    double grid_T = 0.0;      // 0: solve exp(-(alpha-S) T) < 1e-10
    double prior_S = 1.0;     // ball radius used by prior draws

    double effective_T() const;
};

BoundaryConfig default_boundary_config();

// Normalizer int_0^inf exp(-alpha y + int_0^y lscript) dy: Gauss-Legendre on
// [0, T] plus the closed-form exponential tail.
double esscher_normalizer(const LscriptPath& lscript, double alpha, double T);

double esscher_density(const LscriptPath& lscript, double alpha, double x);

// Prior on log-slopes: lscript(t) = S * (2/pi) atan(Z + W_t) with W Brownian
// on [0,1]; the half-line is reached through t -> t/(1+t).
LscriptPath boundary_sample_prior(double S, const Eigen::VectorXd& knots01, SplitRng& rng);

SampleSet boundary_generate(const BoundaryConfig& config, int n, SplitRng& rng);

// Posterior for the location of the rate-1 exponential shift family:
// density proportional to prior(theta) * exp(n theta) on (-inf, X_(1)].
GridDensity exp_location_exact_posterior(const SampleSet& sample, const GridDensity& prior,
                                         int grid_points = 2001);

struct BoundaryPosterior {
    GridDensity h_density;  // over h = n(theta - theta0)
    double delta_n = 0.0;   // n(X_(1) - theta0)
    double gamma = 0.0;     // eta0(0)
    double theta_ess = 0.0;
    double path_accept_rate = 0.0;
};

std::string boundary_posterior_to_json(const BoundaryPosterior& post);

struct BoundaryMcmcOptions {
    int burn_in = -1;              // -1: min(iters/5, 1e4)
    double blend = 0.9;            // autoregressive coefficient of path proposals
    bool degenerate_nuisance = false;  // pin the path at lscript0
    int theta_grid_points = 161;
    int prior_knots = 64;          // Brownian grid resolution on [0,1]
    int h_grid_points = 201;
};

// Metropolis-within-Gibbs over (theta, path): theta by an exact draw from its
// grid conditional on (-inf, X_(1)], path by prior-preserving blends on the
// underlying gaussian coordinates accepted on the likelihood ratio.
BoundaryPosterior boundary_posterior(const SampleSet& sample, const BoundaryConfig& config,
                                     int iters, SplitRng& rng,
                                     const BoundaryMcmcOptions& options = {});

}  // namespace bvmlab
