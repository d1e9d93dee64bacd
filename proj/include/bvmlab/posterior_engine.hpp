#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvmlab/rng.hpp"
#include "bvmlab/stat_core.hpp"

namespace bvmlab {

// Unnormalized log-density over a state vector. eval must return a finite
// value or -inf (zero density); +inf and NaN are hard errors when hit.
struct LogTarget {
    std::function<double(const Eigen::VectorXd&)> eval;
    int dimension = 1;

    double operator()(const Eigen::VectorXd& x) const { return eval(x); }
};

LogTarget scalar_target(std::function<double(double)> f);

struct Chain {
    Eigen::MatrixXd states;          // one row per stored step
    Eigen::VectorXd log_values;      // log-target at each stored state
    double accept_rate = 0.0;        // post-burn-in acceptance fraction
    std::vector<double> proposal_scale_history;

    int length() const { return static_cast<int>(states.rows()); }
    int dim() const { return static_cast<int>(states.cols()); }
};

// Exact 1-D posterior on a grid: density proportional to
// exp(loglik + logprior), log-sum-exp stabilized, trapezoid-normalized.
GridDensity grid_posterior(const LogTarget& loglik, const LogTarget& logprior,
                           const Eigen::VectorXd& grid);

struct RwOptions {
    int burn_in = -1;                // -1: min(steps/5, 1e4)
    double target_accept = -1.0;     // -1: 0.44 scalar, 0.234 otherwise
    Eigen::VectorXd initial_scales;  // empty: all ones
};

// Adaptive Gaussian random-walk Metropolis. Scales adapt toward the target
// acceptance rate during burn-in only and are frozen afterwards; the chain
// stores post-burn-in states only.
Chain rw_metropolis(const LogTarget& target, const Eigen::VectorXd& init, int steps,
                    SplitRng& rng, bool adapt, const RwOptions& options = {});

// Initial-positive-sequence autocorrelation estimator; returns a value in
// (0, length], with floor 1 for constant chains.
double effective_sample_size(const Chain& chain, int coordinate);

// Histogram of one coordinate on the grid's bins, one pass of triangular
// smoothing, normalized. Warns below ESS 100, throws below ESS 20.
GridDensity chain_to_density(const Chain& chain, int coordinate,
                             const Eigen::VectorXd& grid);

std::string chain_to_csv(const Chain& chain);
std::string chain_diagnostics_json(const Chain& chain);

// Exact draw from the continuous density proportional to exp(logf) with
// logf piecewise-linear on the grid (log-linear segment inversion).
double sample_log_linear_density(const Eigen::VectorXd& grid, const Eigen::VectorXd& logf,
                                 SplitRng& rng);

}  // namespace bvmlab
