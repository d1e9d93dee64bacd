#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bvmlab/lan_toolkit.hpp"
#include "bvmlab/posterior_engine.hpp"
#include "bvmlab/rng.hpp"
#include "bvmlab/stat_core.hpp"

namespace bvmlab {

// Finite mixing measure on [0,1].
struct MixingDistribution {
    Eigen::VectorXd atoms;
    Eigen::VectorXd weights;

    int size() const { return static_cast<int>(atoms.size()); }
};

MixingDistribution make_mixing_distribution(Eigen::VectorXd atoms, Eigen::VectorXd weights);

// Normal location mixture p_{sigma,F}(x) = sum_j w_j phi_sigma(x - z_j) with
// kernel scale sigma in [sigma_min, sigma_max] and a Dirichlet-process prior
// on the mixing distribution.
struct MixtureConfig {
    double sigma0 = 0.5;
    MixingDistribution F0;
    double sigma_min = 0.25;
    double sigma_max = 1.25;
    double dp_mass = 1.0;
    GridDensity dp_base;      // strictly positive on [0,1]
    GridDensity sigma_prior;  // on [sigma_min, sigma_max]
};

MixtureConfig default_mixture_config();

double mixture_density(double sigma, const MixingDistribution& F, double x);

struct MixtureEnvelope {
    double lower = 0.0;
    double upper = 0.0;
};

// Two-sided envelope of the mixture family over sigma in [s_minus, s_plus]
// and all mixing distributions on [0,1].
MixtureEnvelope mixture_envelope(double x, double sigma_minus, double sigma_plus,
                                 double m_env);

// Checks lower <= p_{sigma,F} <= upper over grids of (sigma, F, x); throws
// NumericalError at the first violated point.
void validate_mixture_envelope(double sigma_minus, double sigma_plus, double m_env,
                               int sigma_points, int mixtures, double x_lo, double x_hi,
                               int x_points, SplitRng& rng);

SampleSet mixture_generate(const MixtureConfig& config, int n, SplitRng& rng);

struct DpGibbsOptions {
    int burn_in = -1;   // -1: min(iters/5, 1e4)
    int aux_draws = 3;  // auxiliary locations per reassignment
    int sigma_grid_points = 201;
    std::optional<double> pin_single_cluster_at;  // degenerate-F surrogate
};

struct DpGibbsResult {
    Chain sigma_chain;               // one column: kernel scale
    double location_accept_rate = 0.0;
    std::vector<int> cluster_counts;  // per kept sweep
};

// Collapsed Chinese-restaurant sampler with auxiliary-variable updates for
// the non-conjugate base, Metropolis location moves and grid-Gibbs sigma
// updates from sigma_prior times the likelihood.
DpGibbsResult dp_gibbs(const SampleSet& sample, const MixtureConfig& config, int iters,
                       SplitRng& rng, const DpGibbsOptions& options = {});

// Minimizer of -int p0 log p_{sigma,F} over mixing distributions supported on
// z_grid, by multiplicative-gradient (EM) iterations.
MixingDistribution kl_minimizer_F(double sigma, const GridDensity& p0,
                                  const Eigen::VectorXd& z_grid);

double mixture_kl_objective(double sigma, const GridDensity& p0,
                            const MixingDistribution& F);

// Efficient information for the kernel scale: analytic ordinary score,
// F0-centered spline nuisance scores, projection via project_efficient_score.
ProjectionResult mixture_efficient_info(double sigma0, const MixingDistribution& F0,
                                        int basis_size, int mc_size, SplitRng& rng);

std::string mixing_distribution_to_csv(const MixingDistribution& F);

}  // namespace bvmlab
