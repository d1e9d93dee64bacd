#include "bvmlab/model_mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "bvmlab/errors.hpp"

namespace bvmlab {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::VectorXd linspace(double lo, double hi, int n) {
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    return g;
}
}  // namespace

MixingDistribution make_mixing_distribution(Eigen::VectorXd atoms, Eigen::VectorXd weights) {
    if (atoms.size() < 1 || atoms.size() != weights.size())
        throw ValidationError("MixingDistribution: atoms and weights lengths differ");
    double total = 0.0;
    for (int i = 0; i < atoms.size(); ++i) {
        if (atoms[i] < 0.0 || atoms[i] > 1.0)
            throw ValidationError("MixingDistribution: atoms must lie in [0,1]");
        if (weights[i] < 0.0) throw ValidationError("MixingDistribution: negative weight");
        total += weights[i];
    }
    if (std::abs(total - 1.0) > 1e-12)
        weights /= total;
    return MixingDistribution{std::move(atoms), std::move(weights)};
}

MixtureConfig default_mixture_config() {
    MixtureConfig cfg;
    cfg.sigma0 = 0.5;
    cfg.sigma_min = 0.25;
    cfg.sigma_max = 1.25;
    Eigen::VectorXd atoms(2), weights(2);
    atoms << 0.3, 0.7;
    weights << 0.5, 0.5;
    cfg.F0 = make_mixing_distribution(atoms, weights);
    cfg.dp_mass = 1.0;
    cfg.dp_base = make_grid_density(linspace(0, 1, 2), Eigen::VectorXd::Ones(2));
    cfg.sigma_prior = make_grid_density(linspace(cfg.sigma_min, cfg.sigma_max, 2),
                                        Eigen::VectorXd::Ones(2));
    return cfg;
}

double mixture_density(double sigma, const MixingDistribution& F, double x) {
    if (!(sigma > 0.0)) throw ValidationError("mixture_density: sigma must be positive");
    double p = 0.0;
    for (int j = 0; j < F.size(); ++j) p += F.weights[j] * normal_pdf(x - F.atoms[j], 0.0, sigma);
    return p;
}

MixtureEnvelope mixture_envelope(double x, double sigma_minus, double sigma_plus,
                                 double m_env) {
    if (!(0.0 < sigma_minus && sigma_minus < sigma_plus))
        throw ValidationError("mixture_envelope: need 0 < sigma_minus < sigma_plus");
    if (!(m_env > 1.0)) throw ValidationError("mixture_envelope: m_env must exceed 1");
    const double ratio = sigma_plus / sigma_minus;
    MixtureEnvelope env;
    double upper = 0.0;
    if (x < 0.0) upper += normal_pdf(x, 0.0, sigma_plus);
    if (x > 1.0) upper += normal_pdf(x - 1.0, 0.0, sigma_plus);
    if (x >= -m_env && x <= m_env) upper += normal_pdf(0.0, 0.0, sigma_plus);
    env.upper = ratio * upper;
    env.lower = (x < 0.5) ? normal_pdf(x - 1.0, 0.0, sigma_minus) / ratio
                          : normal_pdf(x, 0.0, sigma_minus) / ratio;
    return env;
}

void validate_mixture_envelope(double sigma_minus, double sigma_plus, double m_env,
                               int sigma_points, int mixtures, double x_lo, double x_hi,
                               int x_points, SplitRng& rng) {
    const Eigen::VectorXd sigmas = linspace(sigma_minus, sigma_plus, sigma_points);
    const Eigen::VectorXd xs = linspace(x_lo, x_hi, x_points);
    for (int f = 0; f < mixtures; ++f) {
        Eigen::VectorXd atoms(2), weights(2);
        atoms << rng.uniform(), rng.uniform();
        const double w = rng.uniform();
        weights << w, 1.0 - w;
        const MixingDistribution F = make_mixing_distribution(atoms, weights);
        for (int si = 0; si < sigmas.size(); ++si) {
            for (int xi = 0; xi < xs.size(); ++xi) {
                const double p = mixture_density(sigmas[si], F, xs[xi]);
                const MixtureEnvelope env =
                    mixture_envelope(xs[xi], sigma_minus, sigma_plus, m_env);
                if (!(env.lower <= p * (1.0 + 1e-12) + 1e-300 &&
                      p <= env.upper * (1.0 + 1e-12)))
                    throw NumericalError("mixture envelope violated (m_env too small?)");
            }
        }
    }
}

SampleSet mixture_generate(const MixtureConfig& config, int n, SplitRng& rng) {
    if (n < 1) throw ValidationError("mixture_generate: n must be at least 1");
    SampleSet s;
    s.seed = rng.seed();
    s.observations.resize(n, 1);
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        int j = 0;
        while (j + 1 < config.F0.size() && u > config.F0.weights[j]) {
            u -= config.F0.weights[j];
            ++j;
        }
        s.observations(i, 0) = config.F0.atoms[j] + config.sigma0 * rng.normal();
    }
    return s;
}

namespace {

double draw_from_grid_density(const GridDensity& d, SplitRng& rng) {
    Eigen::VectorXd logf(d.size());
    for (int i = 0; i < d.size(); ++i)
        logf[i] = d.values[i] > 0.0 ? std::log(d.values[i]) : kNegInf;
    return sample_log_linear_density(d.grid, logf, rng);
}

}  // namespace

DpGibbsResult dp_gibbs(const SampleSet& sample, const MixtureConfig& config, int iters,
                       SplitRng& rng, const DpGibbsOptions& options) {
    const int n = sample.n();
    if (n < 1) throw ValidationError("dp_gibbs: empty sample");
    const int burn_in = options.burn_in >= 0 ? options.burn_in : std::min(iters / 5, 10000);
    if (burn_in >= iters) throw ValidationError("dp_gibbs: iters do not exceed burn-in");
    const Eigen::VectorXd& x = sample.observations.col(0);

    std::vector<int> assign(n, 0);
    std::vector<double> locations;
    std::vector<int> counts;
    const bool pinned = options.pin_single_cluster_at.has_value();
    locations.push_back(pinned ? *options.pin_single_cluster_at : 0.5);
    counts.push_back(n);
    double sigma = 0.5 * (config.sigma_min + config.sigma_max);

    const Eigen::VectorXd sigma_grid =
        linspace(config.sigma_min, config.sigma_max, options.sigma_grid_points);
    Eigen::VectorXd sigma_logprior(sigma_grid.size());
    for (int g = 0; g < sigma_grid.size(); ++g) {
        const double pv = config.sigma_prior(sigma_grid[g]);
        sigma_logprior[g] = pv > 0.0 ? std::log(pv) : kNegInf;
    }

    DpGibbsResult out;
    out.sigma_chain.states.resize(iters - burn_in, 1);
    out.sigma_chain.log_values.resize(iters - burn_in);
    out.cluster_counts.reserve(iters - burn_in);
    long loc_accepted = 0, loc_attempts = 0;

    auto log_norm = [](double r, double s) { return -0.5 * r * r / (s * s) - std::log(s); };

    for (int sweep = 0; sweep < iters; ++sweep) {
        if (!pinned) {
            // (a) seating updates with auxiliary locations for the new-table case.
            for (int i = 0; i < n; ++i) {
                const int old = assign[i];
                counts[old] -= 1;
                const bool was_singleton = counts[old] == 0;
                std::vector<double> aux(options.aux_draws);
                if (was_singleton) aux[0] = locations[old];
                for (int a = was_singleton ? 1 : 0; a < options.aux_draws; ++a)
                    aux[a] = draw_from_grid_density(config.dp_base, rng);

                const int kc = static_cast<int>(locations.size());
                std::vector<double> logw;
                logw.reserve(kc + options.aux_draws);
                for (int c = 0; c < kc; ++c) {
                    if (counts[c] == 0)
                        logw.push_back(kNegInf);
                    else
                        logw.push_back(std::log(static_cast<double>(counts[c])) +
                                       log_norm(x[i] - locations[c], sigma));
                }
                const double aux_prior =
                    std::log(config.dp_mass / options.aux_draws);
                for (int a = 0; a < options.aux_draws; ++a)
                    logw.push_back(aux_prior + log_norm(x[i] - aux[a], sigma));

                double mx = kNegInf;
                for (double v : logw) mx = std::max(mx, v);
                double total = 0.0;
                for (double& v : logw) {
                    v = v == kNegInf ? 0.0 : std::exp(v - mx);
                    total += v;
                }
                double target = rng.uniform() * total;
                int pick = 0;
                while (pick + 1 < static_cast<int>(logw.size()) && target > logw[pick]) {
                    target -= logw[pick];
                    ++pick;
                }
                if (pick < kc) {
                    assign[i] = pick;
                    counts[pick] += 1;
                } else if (was_singleton) {
                    // Reoccupy the emptied table, possibly with an aux location.
                    locations[old] = aux[pick - kc];
                    assign[i] = old;
                    counts[old] = 1;
                } else {
                    locations.push_back(aux[pick - kc]);
                    counts.push_back(1);
                    assign[i] = static_cast<int>(locations.size()) - 1;
                }
                if (was_singleton && assign[i] != old) {
                    // Drop the emptied table by swapping in the last one.
                    const int last = static_cast<int>(locations.size()) - 1;
                    if (old != last) {
                        locations[old] = locations[last];
                        counts[old] = counts[last];
                        for (int& c : assign)
                            if (c == last) c = old;
                    }
                    locations.pop_back();
                    counts.pop_back();
                }
            }
            // (b) location updates from the exact grid conditional
            // base(z) * N(z; cluster mean, sigma^2 / count) on [0,1].
            for (size_t c = 0; c < locations.size(); ++c) {
                double sum = 0.0;
                for (int i = 0; i < n; ++i)
                    if (assign[i] == static_cast<int>(c)) sum += x[i];
                const double m_c = static_cast<double>(counts[c]);
                const double center = sum / m_c;
                const double width = sigma / std::sqrt(m_c);
                double lo = std::max(0.0, center - 7.0 * width);
                double hi = std::min(1.0, center + 7.0 * width);
                if (!(lo < hi)) {
                    lo = center <= 0.0 ? 0.0 : std::max(0.0, 1.0 - 14.0 * width);
                    hi = center <= 0.0 ? std::min(1.0, 14.0 * width) : 1.0;
                }
                const int gp = 65;
                Eigen::VectorXd zg(gp), logf(gp);
                bool any = false;
                for (int g = 0; g < gp; ++g) {
                    zg[g] = lo + (hi - lo) * g / (gp - 1);
                    const double bv = config.dp_base(zg[g]);
                    const double zc = zg[g] - center;
                    logf[g] = bv > 0.0
                                  ? std::log(bv) - 0.5 * m_c * zc * zc / (sigma * sigma)
                                  : kNegInf;
                    any = any || bv > 0.0;
                }
                if (!any) continue;  // base carries no mass near the cluster
                locations[c] = sample_log_linear_density(zg, logf, rng);
                ++loc_attempts;
                ++loc_accepted;
            }
        }
        // (c) sigma from its grid conditional given the cluster layout.
        double q = 0.0;
        for (int i = 0; i < n; ++i) {
            const double r = x[i] - locations[assign[i]];
            q += r * r;
        }
        Eigen::VectorXd logf(sigma_grid.size());
        for (int g = 0; g < sigma_grid.size(); ++g) {
            const double s = sigma_grid[g];
            logf[g] = sigma_logprior[g] - n * std::log(s) - 0.5 * q / (s * s);
        }
        sigma = sample_log_linear_density(sigma_grid, logf, rng);

        if (sweep >= burn_in) {
            const int idx = sweep - burn_in;
            out.sigma_chain.states(idx, 0) = sigma;
            out.sigma_chain.log_values[idx] = -n * std::log(sigma) - 0.5 * q / (sigma * sigma);
            out.cluster_counts.push_back(static_cast<int>(locations.size()));
        }
    }
    out.location_accept_rate =
        loc_attempts > 0 ? static_cast<double>(loc_accepted) / loc_attempts : 1.0;
    out.sigma_chain.accept_rate = 1.0;  // sigma draws are exact conditionals

    if (effective_sample_size(out.sigma_chain, 0) < 20.0)
        throw DiagnosticsError("dp_gibbs: sigma ESS below 20 after the full budget");
    return out;
}

double mixture_kl_objective(double sigma, const GridDensity& p0,
                            const MixingDistribution& F) {
    double obj = 0.0;
    for (int i = 0; i < p0.size(); ++i) {
        const double w = (i == 0                ? p0.grid[1] - p0.grid[0]
                          : i + 1 == p0.size() ? p0.grid[i] - p0.grid[i - 1]
                                                : p0.grid[i + 1] - p0.grid[i - 1]) /
                         2.0;
        if (p0.values[i] <= 0.0) continue;
        obj -= w * p0.values[i] * std::log(mixture_density(sigma, F, p0.grid[i]));
    }
    return obj;
}

MixingDistribution kl_minimizer_F(double sigma, const GridDensity& p0,
                                  const Eigen::VectorXd& z_grid) {
    const int nz = static_cast<int>(z_grid.size());
    if (nz < 1) throw ValidationError("kl_minimizer_F: empty atom grid");
    for (int j = 0; j < nz; ++j)
        if (z_grid[j] < 0.0 || z_grid[j] > 1.0)
            throw ValidationError("kl_minimizer_F: atoms must lie in [0,1]");
    const int nx = p0.size();
    // Trapezoid quadrature weights times p0 ordinates.
    Eigen::VectorXd mass(nx);
    for (int i = 0; i < nx; ++i) {
        const double w = (i == 0        ? p0.grid[1] - p0.grid[0]
                          : i + 1 == nx ? p0.grid[i] - p0.grid[i - 1]
                                        : p0.grid[i + 1] - p0.grid[i - 1]) /
                         2.0;
        mass[i] = w * p0.values[i];
    }
    Eigen::MatrixXd kern(nx, nz);
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nz; ++j)
            kern(i, j) = normal_pdf(p0.grid[i] - z_grid[j], 0.0, sigma);

    auto objective = [&](const Eigen::VectorXd& ww) {
        const Eigen::VectorXd mix = kern * ww;
        double obj = 0.0;
        for (int i = 0; i < nx; ++i)
            if (mass[i] > 0.0) obj -= mass[i] * std::log(mix[i]);
        return obj;
    };

    Eigen::VectorXd w = Eigen::VectorXd::Constant(nz, 1.0 / nz);
    double prev = objective(w);
    for (int iter = 0; iter < 10000; ++iter) {
        const Eigen::VectorXd mix = kern * w;
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(nz);
        for (int i = 0; i < nx; ++i)
            if (mass[i] > 0.0) grad += mass[i] / mix[i] * kern.row(i).transpose();
        // Multiplicative step: monotone and simplex-feasible by construction.
        w = (w.array() * grad.array()).matrix();
        w /= w.sum();
        const double obj = objective(w);
        if (prev - obj < 1e-10 && iter > 0) break;
        prev = obj;
    }
    return MixingDistribution{z_grid, w};
}

ProjectionResult mixture_efficient_info(double sigma0, const MixingDistribution& F0,
                                        int basis_size, int mc_size, SplitRng& rng) {
    if (basis_size < 0) throw ValidationError("mixture_efficient_info: negative basis size");
    if (mc_size < 100) throw ValidationError("mixture_efficient_info: mc_size too small");
    MixtureConfig cfg = default_mixture_config();
    cfg.sigma0 = sigma0;
    cfg.F0 = F0;
    const SampleSet s = mixture_generate(cfg, mc_size, rng);

    auto density = [sigma0, F0](double x) { return mixture_density(sigma0, F0, x); };
    const ObsFunction score = [sigma0, F0, density](const Eigen::VectorXd& obs) {
        const double x = obs[0];
        double num = 0.0;
        for (int j = 0; j < F0.size(); ++j) {
            const double d = x - F0.atoms[j];
            num += F0.weights[j] * normal_pdf(d, 0.0, sigma0) * (d * d - sigma0 * sigma0) /
                   (sigma0 * sigma0 * sigma0);
        }
        return num / density(x);
    };

    // F0-centered hat-function perturbations of the mixing distribution.
    std::vector<ObsFunction> basis;
    if (basis_size > 0) {
        const Eigen::VectorXd bknots = linspace(0, 1, basis_size);
        for (int b = 0; b < basis_size; ++b) {
            auto hat = [bknots, b](double z) {
                const int m = static_cast<int>(bknots.size());
                if (m == 1) return 1.0;
                const double width = bknots[1] - bknots[0];
                const double d = std::abs(z - bknots[b]) / width;
                return d >= 1.0 ? 0.0 : 1.0 - d;
            };
            double centered = 0.0;
            for (int j = 0; j < F0.size(); ++j) centered += F0.weights[j] * hat(F0.atoms[j]);
            basis.push_back([sigma0, F0, density, hat, centered](const Eigen::VectorXd& obs) {
                const double x = obs[0];
                double num = 0.0;
                for (int j = 0; j < F0.size(); ++j)
                    num += (hat(F0.atoms[j]) - centered) * F0.weights[j] *
                           normal_pdf(x - F0.atoms[j], 0.0, sigma0);
                return num / density(x);
            });
        }
    }

    ProjectionResult r = project_efficient_score(score, basis, s);
    // Second moment of the ordinary score bounds the efficient information.
    double raw = 0.0;
    for (int i = 0; i < s.n(); ++i) {
        const double v = score(s.row(i));
        raw += v * v;
    }
    raw /= s.n();
    if (r.influence.info(0, 0) < 1e-6 * raw)
        throw NumericalError(
            "mixture_efficient_info: near-singular efficient information");
    return r;
}

std::string mixing_distribution_to_csv(const MixingDistribution& F) {
    std::ostringstream out;
    out.precision(17);
    out << "atom,weight\n";
    for (int j = 0; j < F.size(); ++j) out << F.atoms[j] << "," << F.weights[j] << "\n";
    return out.str();
}

}  // namespace bvmlab
