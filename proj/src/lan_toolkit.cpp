#include "bvmlab/lan_toolkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "bvmlab/errors.hpp"

namespace bvmlab {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double median_of_abs(std::vector<double> v) {
    for (double& x : v) x = std::abs(x);
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n == 0 ? 0.0 : (n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
}
}  // namespace

EfficientInfluence scalar_influence(std::function<double(const Eigen::VectorXd&)> score,
                                    double info) {
    EfficientInfluence infl;
    infl.score = [s = std::move(score)](const Eigen::VectorXd& x) {
        Eigen::VectorXd v(1);
        v[0] = s(x);
        return v;
    };
    infl.info.resize(1, 1);
    infl.info(0, 0) = info;
    return infl;
}

ExpansionReport make_expansion_report(int n, std::vector<double> h_values,
                                      std::vector<double> remainders) {
    if (h_values.size() != remainders.size())
        throw ValidationError("ExpansionReport: h and remainder lengths differ");
    ExpansionReport r;
    r.n = n;
    r.h_values = std::move(h_values);
    r.remainders = std::move(remainders);
    r.median_abs = median_of_abs(r.remainders);
    return r;
}

std::string expansion_report_to_json(const ExpansionReport& report) {
    nlohmann::json j;
    j["n"] = report.n;
    j["h"] = report.h_values;
    j["remainder"] = report.remainders;
    j["median_abs"] = report.median_abs;
    return j.dump();
}

Eigen::VectorXd delta_tilde(const SampleSet& sample, const EfficientInfluence& infl) {
    if (sample.n() < 1) throw ValidationError("delta_tilde: empty sample");
    const int k = infl.dim();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < sample.n(); ++i) sum += infl.score(sample.row(i));
    sum /= std::sqrt(static_cast<double>(sample.n()));
    Eigen::LLT<Eigen::MatrixXd> llt(infl.info);
    if (llt.info() != Eigen::Success)
        throw NumericalError("delta_tilde: efficient information is singular");
    return llt.solve(sum);
}

double lan_remainder(const LogLikRatio& loglik_ratio, const SampleSet& sample,
                     const Eigen::VectorXd& h, const EfficientInfluence& infl) {
    const double log_ratio = loglik_ratio(h, sample);
    if (log_ratio == kNegInf) return kNegInf;
    const int k = infl.dim();
    Eigen::VectorXd gamma_n = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < sample.n(); ++i) gamma_n += infl.score(sample.row(i));
    gamma_n /= std::sqrt(static_cast<double>(sample.n()));
    const double quadratic = h.dot(gamma_n) - 0.5 * h.dot(infl.info * h);
    return log_ratio - quadratic;
}

LaeRemainderResult lae_remainder(
    const std::function<double(double, const SampleSet&)>& loglik_ratio,
    const SampleSet& sample, double h, double gamma, double theta0) {
    if (!(gamma > 0.0)) throw ValidationError("lae_remainder: gamma must be positive");
    const double min_obs = sample.observations.col(0).minCoeff();
    LaeRemainderResult out;
    out.delta_n = sample.n() * (min_obs - theta0);
    out.in_support = h <= out.delta_n;
    const double log_ratio = loglik_ratio(h, sample);
    if (!out.in_support) {
        if (log_ratio != kNegInf)
            throw NumericalError(
                "lae_remainder: finite likelihood ratio outside {h <= Delta_n}");
        out.remainder = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    if (log_ratio == kNegInf)
        throw NumericalError("lae_remainder: -inf likelihood ratio inside the support");
    out.remainder = log_ratio - h * gamma;
    return out;
}

double integrated_likelihood(const SampleSet& sample, double h,
                             const std::vector<NuisancePath>& nuisance_prior_draws,
                             const ThetaEtaLogLik& loglik, const LocalFrame& frame,
                             const NuisancePath& eta0_ref) {
    if (nuisance_prior_draws.empty())
        throw ValidationError("integrated_likelihood: need at least one prior draw");
    const double theta = frame.theta_of_h(h, sample.n());
    const double ref = loglik(frame.theta0[0], eta0_ref, sample);
    double maxterm = kNegInf;
    std::vector<double> terms;
    terms.reserve(nuisance_prior_draws.size());
    for (const NuisancePath& eta : nuisance_prior_draws) {
        const double t = loglik(theta, eta, sample) - ref;
        terms.push_back(t);
        maxterm = std::max(maxterm, t);
    }
    if (maxterm == kNegInf)
        throw NumericalError("integrated_likelihood: all integrand terms are zero");
    double s = 0.0;
    for (double t : terms) s += t == kNegInf ? 0.0 : std::exp(t - maxterm);
    return maxterm + std::log(s / terms.size());
}

double ilan_remainder(const SampleSet& sample, double h,
                      const std::vector<NuisancePath>& nuisance_prior_draws,
                      const ThetaEtaLogLik& loglik, const LocalFrame& frame,
                      const NuisancePath& eta0_ref, const EfficientInfluence& infl) {
    const double log_sn_h =
        integrated_likelihood(sample, h, nuisance_prior_draws, loglik, frame, eta0_ref);
    const double log_sn_0 =
        integrated_likelihood(sample, 0.0, nuisance_prior_draws, loglik, frame, eta0_ref);
    double score_sum = 0.0;
    for (int i = 0; i < sample.n(); ++i) score_sum += infl.score(sample.row(i))[0];
    score_sum /= std::sqrt(static_cast<double>(sample.n()));
    const double quadratic = h * score_sum - 0.5 * h * h * infl.info(0, 0);
    return (log_sn_h - log_sn_0) - quadratic;
}

double mle_linearity_gap(const SampleSet& sample, const Eigen::VectorXd& theta_hat,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& score,
                         const Eigen::MatrixXd& info, const Eigen::VectorXd& theta0) {
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success)
        throw NumericalError("mle_linearity_gap: information matrix is singular");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(theta0.size());
    for (int i = 0; i < sample.n(); ++i) sum += score(sample.row(i));
    sum /= std::sqrt(static_cast<double>(sample.n()));
    const Eigen::VectorXd linear = llt.solve(sum);
    const double root_n = std::sqrt(static_cast<double>(sample.n()));
    return (root_n * (theta_hat - theta0) - linear).norm();
}

ProjectionResult project_efficient_score(const ObsFunction& ordinary_score,
                                         const std::vector<ObsFunction>& nuisance_basis,
                                         const SampleSet& p0_sample) {
    const int n = p0_sample.n();
    const int b = static_cast<int>(nuisance_basis.size());
    if (n < 2) throw ValidationError("project_efficient_score: sample too small");

    Eigen::VectorXd ell(n);
    Eigen::MatrixXd g(n, b);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd x = p0_sample.row(i);
        ell[i] = ordinary_score(x);
        for (int j = 0; j < b; ++j) g(i, j) = nuisance_basis[j](x);
    }

    ProjectionResult out;
    Eigen::VectorXd residual = ell;
    out.coefficients = Eigen::VectorXd::Zero(b);
    if (b > 0) {
        Eigen::MatrixXd gram = g.transpose() * g / n;
        const Eigen::VectorXd cross = g.transpose() * ell / n;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success) {
            const double ridge = 1e-10 * gram.trace() / b + 1e-300;
            gram += ridge * Eigen::MatrixXd::Identity(b, b);
            llt.compute(gram);
            if (llt.info() != Eigen::Success)
                throw NumericalError("project_efficient_score: Gram matrix unusable");
            out.ridged = true;
        }
        out.coefficients = llt.solve(cross);
        residual -= g * out.coefficients;
    }

    const Eigen::VectorXd sq = residual.array().square();
    const double info = sq.mean();
    out.info_se = std::sqrt((sq.array() - info).square().mean() / n);

    out.orthogonality.resize(b);
    out.orthogonality_se.resize(b);
    for (int j = 0; j < b; ++j) {
        const Eigen::VectorXd prod = residual.array() * g.col(j).array();
        out.orthogonality[j] = prod.mean();
        out.orthogonality_se[j] =
            std::sqrt((prod.array() - out.orthogonality[j]).square().mean() / n);
    }

    // The returned score re-evaluates the basis at fresh observations so the
    // influence function remains usable beyond the fitting sample.
    auto coeffs = out.coefficients;
    auto basis_copy = nuisance_basis;
    auto score_copy = ordinary_score;
    out.influence = scalar_influence(
        [coeffs, basis_copy, score_copy](const Eigen::VectorXd& x) {
            double v = score_copy(x);
            for (int j = 0; j < coeffs.size(); ++j) v -= coeffs[j] * basis_copy[j](x);
            return v;
        },
        info);
    return out;
}

}  // namespace bvmlab
