#include "bvmlab/posterior_engine.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bvmlab/errors.hpp"

namespace bvmlab {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double checked_eval(const LogTarget& target, const Eigen::VectorXd& x) {
    const double v = target(x);
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw NumericalError("log-target returned NaN or +inf");
    return v;
}
}  // namespace

LogTarget scalar_target(std::function<double(double)> f) {
    LogTarget t;
    t.dimension = 1;
    t.eval = [f = std::move(f)](const Eigen::VectorXd& x) { return f(x[0]); };
    return t;
}

GridDensity grid_posterior(const LogTarget& loglik, const LogTarget& logprior,
                           const Eigen::VectorXd& grid) {
    if (grid.size() < 2) throw ValidationError("grid_posterior: grid needs at least 2 points");
    Eigen::VectorXd logpost(grid.size());
    double maxval = kNegInf;
    for (int i = 0; i < grid.size(); ++i) {
        Eigen::VectorXd x(1);
        x[0] = grid[i];
        const double v = checked_eval(loglik, x) + checked_eval(logprior, x);
        logpost[i] = v;
        maxval = std::max(maxval, v);
    }
    if (maxval == kNegInf)
        throw NumericalError("grid_posterior: posterior mass is zero on the whole grid");
    Eigen::VectorXd vals(grid.size());
    for (int i = 0; i < grid.size(); ++i)
        vals[i] = logpost[i] == kNegInf ? 0.0 : std::exp(logpost[i] - maxval);
    return make_grid_density(grid, vals);
}

Chain rw_metropolis(const LogTarget& target, const Eigen::VectorXd& init, int steps,
                    SplitRng& rng, bool adapt, const RwOptions& options) {
    const int d = static_cast<int>(init.size());
    if (steps < 1) throw ValidationError("rw_metropolis: steps must be at least 1");
    int burn_in = options.burn_in >= 0 ? options.burn_in
                                       : std::min(steps / 5, 10000);
    if (burn_in >= steps)
        throw ValidationError("rw_metropolis: steps do not exceed the burn-in length");
    double current_lp = checked_eval(target, init);
    if (current_lp == kNegInf)
        throw ValidationError("rw_metropolis: init lies outside the target support");

    const double target_accept =
        options.target_accept > 0 ? options.target_accept : (d == 1 ? 0.44 : 0.234);
    Eigen::VectorXd scales = options.initial_scales.size() == d
                                 ? options.initial_scales
                                 : Eigen::VectorXd::Ones(d);
    scales *= 2.38 / std::sqrt(static_cast<double>(d));

    Chain chain;
    const int kept = steps - burn_in;
    chain.states.resize(kept, d);
    chain.log_values.resize(kept);

    Eigen::VectorXd x = init;
    Eigen::VectorXd prop(d);
    long accepted_post = 0;
    for (int step = 0; step < steps; ++step) {
        for (int j = 0; j < d; ++j) prop[j] = x[j] + scales[j] * rng.normal();
        const double lp = checked_eval(target, prop);
        bool accept = false;
        if (lp > kNegInf) {
            const double log_ratio = lp - current_lp;
            accept = log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
        }
        if (accept) {
            x = prop;
            current_lp = lp;
        }
        if (adapt && step < burn_in) {
            // Robbins-Monro on a common log-factor, frozen after burn-in.
            const double gain = 1.0 / std::pow(step + 1.0, 0.7);
            const double delta = gain * ((accept ? 1.0 : 0.0) - target_accept);
            scales *= std::exp(delta);
            if ((step + 1) % 100 == 0)
                chain.proposal_scale_history.push_back(std::exp(scales.array().log().mean()));
        }
        if (step >= burn_in) {
            const int i = step - burn_in;
            chain.states.row(i) = x.transpose();
            chain.log_values[i] = current_lp;
            if (accept) ++accepted_post;
        }
    }
    chain.accept_rate = kept > 0 ? static_cast<double>(accepted_post) / kept : 0.0;
    return chain;
}

double effective_sample_size(const Chain& chain, int coordinate) {
    const int n = chain.length();
    if (n < 10) throw ValidationError("effective_sample_size: chain shorter than 10");
    if (coordinate < 0 || coordinate >= chain.dim())
        throw ValidationError("effective_sample_size: coordinate out of range");
    const Eigen::VectorXd x = chain.states.col(coordinate);
    if ((x.array() - x[0]).abs().maxCoeff() == 0.0) return 1.0;
    const double mean = x.mean();
    const Eigen::VectorXd c = x.array() - mean;
    const double var = c.squaredNorm() / n;
    if (var <= 0.0) return 1.0;

    auto autocov = [&](int lag) {
        double s = 0.0;
        for (int i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
        return s / n;
    };

    // Geyer's initial positive sequence: sum adjacent autocovariance pairs
    // until a pair goes non-positive.
    double tau = autocov(0);
    for (int m = 1; 2 * m < n; ++m) {
        const double pair = autocov(2 * m - 1) + autocov(2 * m);
        if (pair <= 0.0) break;
        tau += 2.0 * pair;
    }
    const double ess = n * var / tau;
    return std::min(std::max(ess, 1.0), static_cast<double>(n));
}

GridDensity chain_to_density(const Chain& chain, int coordinate,
                             const Eigen::VectorXd& grid) {
    const Eigen::VectorXd col = chain.states.col(coordinate);
    const bool degenerate = (col.array() - col[0]).abs().maxCoeff() == 0.0;
    if (!degenerate) {
        // Mixing gate; a constant chain is a point mass and skips it.
        const double ess = effective_sample_size(chain, coordinate);
        if (ess < 20.0)
            throw DiagnosticsError("chain_to_density: effective sample size below 20");
        if (ess < 100.0)
            std::cerr << "chain_to_density: warning, effective sample size " << ess
                      << " below 100\n";
    }
    const int m = static_cast<int>(grid.size());
    // Bin edges at grid midpoints.
    Eigen::VectorXd edges(m + 1);
    edges[0] = grid[0] - 0.5 * (grid[1] - grid[0]);
    for (int j = 1; j < m; ++j) edges[j] = 0.5 * (grid[j - 1] + grid[j]);
    edges[m] = grid[m - 1] + 0.5 * (grid[m - 1] - grid[m - 2]);

    Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
    long inside = 0;
    for (int i = 0; i < chain.length(); ++i) {
        const double v = chain.states(i, coordinate);
        if (v < edges[0] || v >= edges[m]) continue;
        const double* b = edges.data();
        const int j = static_cast<int>(std::upper_bound(b, b + m + 1, v) - b) - 1;
        counts[std::min(j, m - 1)] += 1.0;
        ++inside;
    }
    if (inside == 0) throw NumericalError("chain_to_density: all mass outside grid");
    Eigen::VectorXd density(m);
    for (int j = 0; j < m; ++j) density[j] = counts[j] / (edges[j + 1] - edges[j]);
    // One pass of triangular smoothing.
    Eigen::VectorXd smoothed(m);
    for (int j = 0; j < m; ++j) {
        const double left = j > 0 ? density[j - 1] : density[j];
        const double right = j + 1 < m ? density[j + 1] : density[j];
        smoothed[j] = 0.25 * left + 0.5 * density[j] + 0.25 * right;
    }
    return make_grid_density(grid, smoothed);
}

std::string chain_to_csv(const Chain& chain) {
    std::ostringstream out;
    out.precision(17);
    out << "step";
    for (int j = 0; j < chain.dim(); ++j) out << ",coord" << j;
    out << ",logp\n";
    for (int i = 0; i < chain.length(); ++i) {
        out << i;
        for (int j = 0; j < chain.dim(); ++j) out << "," << chain.states(i, j);
        out << "," << chain.log_values[i] << "\n";
    }
    return out.str();
}

std::string chain_diagnostics_json(const Chain& chain) {
    nlohmann::json j;
    j["ess"] = effective_sample_size(chain, 0);
    j["accept_rate"] = chain.accept_rate;
    return j.dump();
}

double sample_log_linear_density(const Eigen::VectorXd& grid, const Eigen::VectorXd& logf,
                                 SplitRng& rng) {
    const int m = static_cast<int>(grid.size());
    if (m < 2 || logf.size() != m)
        throw ValidationError("sample_log_linear_density: bad grid");
    const double shift = logf.maxCoeff();
    if (shift == kNegInf)
        throw NumericalError("sample_log_linear_density: zero mass everywhere");

    // Per-segment mass of exp(linear) with the global max shifted out. A
    // segment with a -inf endpoint carries no mass in the log-linear limit.
    auto segment_mass = [&](int j) {
        const double a = logf[j] - shift, b = logf[j + 1] - shift;
        const double w = grid[j + 1] - grid[j];
        if (a == kNegInf || b == kNegInf) return 0.0;
        const double d = b - a;
        if (std::abs(d) < 1e-12) return w * std::exp(0.5 * (a + b));
        return w * (std::exp(b) - std::exp(a)) / d;
    };

    Eigen::VectorXd mass(m - 1);
    double total = 0.0;
    for (int j = 0; j + 1 < m; ++j) {
        mass[j] = segment_mass(j);
        total += mass[j];
    }
    if (!(total > 0.0))
        throw NumericalError("sample_log_linear_density: zero total mass");

    double target = rng.uniform() * total;
    int j = 0;
    while (j + 2 < m && (mass[j] == 0.0 || target > mass[j])) {
        target -= mass[j];
        ++j;
    }
    const double a = logf[j] - shift, b = logf[j + 1] - shift;
    const double w = grid[j + 1] - grid[j];
    if (a == kNegInf || b == kNegInf) return a == kNegInf ? grid[j + 1] : grid[j];
    const double s = (b - a) / w;
    double x;
    if (std::abs(s) * w < 1e-12) {
        x = target * std::exp(-a);
    } else {
        x = std::log1p(target * s * std::exp(-a)) / s;
    }
    return grid[j] + std::min(std::max(x, 0.0), w);
}

}  // namespace bvmlab
