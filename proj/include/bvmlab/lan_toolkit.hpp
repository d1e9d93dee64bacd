#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvmlab/nuisance_path.hpp"
#include "bvmlab/stat_core.hpp"

namespace bvmlab {

// Efficient score function together with the efficient Fisher information.
struct EfficientInfluence {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> score;
    Eigen::MatrixXd info;

    int dim() const { return static_cast<int>(info.rows()); }
};

EfficientInfluence scalar_influence(std::function<double(const Eigen::VectorXd&)> score,
                                    double info);

// Localization convention: h = sqrt(n)(theta - theta0) for regular models,
// h = n(theta - theta0) for irregular ones.
struct LocalFrame {
    enum class Rate { sqrt_n, linear_n };
    Eigen::VectorXd theta0;
    Rate rate = Rate::sqrt_n;

    double theta_of_h(double h, int n) const {
        const double denom = rate == Rate::sqrt_n ? std::sqrt(static_cast<double>(n))
                                                  : static_cast<double>(n);
        return theta0[0] + h / denom;
    }
};

struct ExpansionReport {
    int n = 0;
    std::vector<double> h_values;
    std::vector<double> remainders;
    double median_abs = 0.0;
};

ExpansionReport make_expansion_report(int n, std::vector<double> h_values,
                                      std::vector<double> remainders);
std::string expansion_report_to_json(const ExpansionReport& report);

// The efficient central sequence: info^{-1} n^{-1/2} sum score(X_i),
// solved via Cholesky.
Eigen::VectorXd delta_tilde(const SampleSet& sample, const EfficientInfluence& infl);

using LogLikRatio = std::function<double(const Eigen::VectorXd& h, const SampleSet&)>;

// Local log-likelihood-ratio remainder against the quadratic expansion
// h' Gamma_n - h' info h / 2 with Gamma_n = n^{-1/2} sum score(X_i).
// A -inf likelihood ratio reports failure as -inf, not an exception.
double lan_remainder(const LogLikRatio& loglik_ratio, const SampleSet& sample,
                     const Eigen::VectorXd& h, const EfficientInfluence& infl);

struct LaeRemainderResult {
    double remainder = 0.0;
    bool in_support = false;
    double delta_n = 0.0;
};

// One-sided expansion: on {h <= Delta_n} (Delta_n = n(X_(1) - theta0)) the
// remainder is log-ratio - h*gamma; outside, the log-ratio must be -inf.
LaeRemainderResult lae_remainder(const std::function<double(double, const SampleSet&)>& loglik_ratio,
                                 const SampleSet& sample, double h, double gamma,
                                 double theta0);

using ThetaEtaLogLik =
    std::function<double(double theta, const NuisancePath& eta, const SampleSet&)>;

// Monte Carlo estimate of log s_n(h) up to a normalization shared across h:
// log (1/J) sum_j exp[loglik(theta_n(h), eta_j) - loglik(theta0, eta0_ref)].
// The same draws must be reused for every h (common random numbers).
double integrated_likelihood(const SampleSet& sample, double h,
                             const std::vector<NuisancePath>& nuisance_prior_draws,
                             const ThetaEtaLogLik& loglik, const LocalFrame& frame,
                             const NuisancePath& eta0_ref);

// log(s_n(h)/s_n(0)) minus the quadratic expansion in the efficient score.
double ilan_remainder(const SampleSet& sample, double h,
                      const std::vector<NuisancePath>& nuisance_prior_draws,
                      const ThetaEtaLogLik& loglik, const LocalFrame& frame,
                      const NuisancePath& eta0_ref, const EfficientInfluence& infl);

// || sqrt(n)(theta_hat - theta0) - I^{-1} n^{-1/2} sum score(X_i) ||.
double mle_linearity_gap(const SampleSet& sample, const Eigen::VectorXd& theta_hat,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& score,
                         const Eigen::MatrixXd& info, const Eigen::VectorXd& theta0);

using ObsFunction = std::function<double(const Eigen::VectorXd&)>;

struct ProjectionResult {
    EfficientInfluence influence;      // residual score and its second moment
    Eigen::VectorXd coefficients;      // minimizer over the basis span
    Eigen::VectorXd orthogonality;     // empirical <residual, g_j>
    Eigen::VectorXd orthogonality_se;  // Monte Carlo standard errors of the above
    double info_se = 0.0;              // standard error of the information estimate
    bool ridged = false;               // rank-deficient Gram resolved by ridge
};

// Least-squares projection of the ordinary score onto the empirical span of
// the nuisance basis in L2(P0); the residual is the efficient score estimate
// and its empirical second moment the efficient information.
ProjectionResult project_efficient_score(const ObsFunction& ordinary_score,
                                         const std::vector<ObsFunction>& nuisance_basis,
                                         const SampleSet& p0_sample);

}  // namespace bvmlab
