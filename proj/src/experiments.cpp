#include "bvmlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>
#include <vector>

#include "bvmlab/errors.hpp"
#include "bvmlab/lan_toolkit.hpp"
#include "bvmlab/posterior_engine.hpp"

namespace bvmlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::VectorXd linspace(double lo, double hi, int n) {
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    return g;
}

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    return v.size() % 2 == 1 ? v[v.size() / 2]
                             : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

double quantile(std::vector<double> v, double p) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double pos = p * (v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double t = pos - lo;
    return (1.0 - t) * v[lo] + t * v[hi];
}

void run_parallel(int tasks, int jobs, const std::function<void(int)>& work) {
    jobs = std::max(1, jobs);
    if (jobs == 1) {
        for (int i = 0; i < tasks; ++i) work(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int w = 0; w < jobs; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < tasks; i = next.fetch_add(1)) work(i);
        });
    for (auto& t : pool) t.join();
}

double ks_to_standard_normal(std::vector<double> standardized) {
    std::sort(standardized.begin(), standardized.end());
    const double n = static_cast<double>(standardized.size());
    double worst = 0.0;
    for (size_t i = 0; i < standardized.size(); ++i) {
        const double c = normal_cdf(standardized[i]);
        worst = std::max(worst, std::abs((i + 1) / n - c));
        worst = std::max(worst, std::abs(i / n - c));
    }
    return worst;
}

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

// Cumulative trapezoid mass of a grid density over [lo, hi].
double density_mass(const GridDensity& d, double lo, double hi) {
    if (hi <= lo) return 0.0;
    const double a = std::max(lo, d.grid[0]);
    const double b = std::min(hi, d.grid[d.size() - 1]);
    if (b <= a) return 0.0;
    double mass = 0.0;
    for (int i = 0; i + 1 < d.size(); ++i) {
        const double s = std::max(a, d.grid[i]);
        const double t = std::min(b, d.grid[i + 1]);
        if (t <= s) continue;
        mass += 0.5 * (d(s) + d(t)) * (t - s);
    }
    return mass;
}

double density_quantile(const GridDensity& d, double p) {
    double acc = 0.0;
    for (int i = 0; i + 1 < d.size(); ++i) {
        const double seg = 0.5 * (d.values[i] + d.values[i + 1]) * (d.grid[i + 1] - d.grid[i]);
        if (acc + seg >= p) {
            // Linear-in-mass inversion inside the segment.
            const double frac = seg > 0.0 ? (p - acc) / seg : 0.5;
            return d.grid[i] + frac * (d.grid[i + 1] - d.grid[i]);
        }
        acc += seg;
    }
    return d.grid[d.size() - 1];
}

double density_mean(const GridDensity& d) {
    Eigen::VectorXd xi = d.grid.array() * d.values.array();
    return trapezoid_integral(d.grid, xi);
}

// ---------------------------------------------------------------------------
// Config handling
// ---------------------------------------------------------------------------

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.experiment = j.at("experiment").get<std::string>();
    cfg.n_values = j.value("n_values", std::vector<int>{});
    cfg.replications = j.value("replications", 1);
    cfg.seed = j.value("seed", 1ull);
    cfg.model_params = j.value("model_params", nlohmann::json::object());
    cfg.output_dir = j.value("output_dir", std::string("out"));
    cfg.jobs = j.value("jobs", 1);
    validate_experiment_config(cfg);
    return cfg;
}

ExperimentConfig experiment_config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config file not readable: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    return experiment_config_from_json(j);
}

void validate_experiment_config(const ExperimentConfig& config) {
    static const std::vector<std::string> known = {
        "parametric_demo", "plr_bvm",    "mixture_bvm",        "boundary_bvm",
        "coverage",        "ilan_probe", "perturbation_probe"};
    if (std::find(known.begin(), known.end(), config.experiment) == known.end())
        throw ValidationError("unknown experiment '" + config.experiment + "'");
    if (config.n_values.empty())
        throw ValidationError("n_values must be nonempty");
    for (size_t i = 0; i + 1 < config.n_values.size(); ++i)
        if (config.n_values[i] > config.n_values[i + 1])
            throw ValidationError("n_values must be ascending");
    const bool allow_zero = config.experiment == "parametric_demo";
    for (int n : config.n_values)
        if (n < (allow_zero ? 0 : 1))
            throw ValidationError("n_values must be positive");
    if (config.replications < 1)
        throw ValidationError("replications must be at least 1");
    if (config.jobs < 1) throw ValidationError("jobs must be at least 1");
}

// ---------------------------------------------------------------------------
// Model configs from params
// ---------------------------------------------------------------------------

PlrConfig plr_config_from_params(const nlohmann::json& params) {
    PlrConfig cfg;
    cfg.theta0 = params.value("theta0", 0.5);
    cfg.xi_sd = params.value("xi_sd", 1.0);
    cfg.prior_k = params.value("prior_k", 1);
    cfg.knots_m = params.value("knots_m", 32);
    // Smooth default shapes; rough shapes fight the integrated-Brownian
    // prior and bias the marginal posterior center at desk-scale n.
    const int nk = 129;
    const Eigen::VectorXd knots = linspace(0, 1, nk);
    Eigen::VectorXd rho(nk), eta(nk);
    const double rho_amp = params.value("condexp_amplitude", 0.8);
    const double eta_amp = params.value("eta_amplitude", 0.5);
    for (int i = 0; i < nk; ++i) {
        rho[i] = rho_amp * std::cos(M_PI * knots[i]);
        eta[i] = eta_amp * std::sin(M_PI * knots[i]) + 0.3;
    }
    cfg.condexp = make_nuisance_path(knots, rho);
    cfg.eta0 = make_nuisance_path(knots, eta);
    const double prior_sd = params.value("theta_prior_sd", 10.0);
    cfg.theta_prior = make_gaussian_law(0.0, prior_sd * prior_sd);
    return cfg;
}

MixtureConfig mixture_config_from_params(const nlohmann::json& params) {
    MixtureConfig cfg = default_mixture_config();
    cfg.sigma0 = params.value("sigma0", cfg.sigma0);
    cfg.sigma_min = params.value("sigma_min", cfg.sigma_min);
    cfg.sigma_max = params.value("sigma_max", cfg.sigma_max);
    cfg.dp_mass = params.value("dp_mass", cfg.dp_mass);
    if (params.contains("f0_atoms")) {
        const auto atoms = params.at("f0_atoms").get<std::vector<double>>();
        const auto weights = params.at("f0_weights").get<std::vector<double>>();
        Eigen::VectorXd a(atoms.size()), w(weights.size());
        for (size_t i = 0; i < atoms.size(); ++i) a[i] = atoms[i];
        for (size_t i = 0; i < weights.size(); ++i) w[i] = weights[i];
        cfg.F0 = make_mixing_distribution(a, w);
    }
    cfg.sigma_prior = make_grid_density(linspace(cfg.sigma_min, cfg.sigma_max, 2),
                                        Eigen::VectorXd::Ones(2));
    return cfg;
}

BoundaryConfig boundary_config_from_params(const nlohmann::json& params) {
    BoundaryConfig cfg = default_boundary_config();
    cfg.alpha = params.value("alpha", cfg.alpha);
    cfg.S = params.value("S", cfg.S);
    cfg.prior_S = params.value("prior_S", cfg.S);
    cfg.theta0 = params.value("theta0", cfg.theta0);
    if (params.value("zero_lscript0", false))
        cfg.lscript0 = constant_lscript(0.0, cfg.effective_T());
    return cfg;
}

// ---------------------------------------------------------------------------
// Report plumbing
// ---------------------------------------------------------------------------

std::string report_rows_to_csv(const ExperimentReport& report) {
    std::ostringstream out;
    for (size_t c = 0; c < report.columns.size(); ++c)
        out << (c ? "," : "") << report.columns[c];
    out << "\n";
    for (const auto& row : report.rows) {
        for (size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_double(row[c]);
        out << "\n";
    }
    return out.str();
}

ExperimentReport report_rows_from_csv(const std::string& csv) {
    ExperimentReport report;
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("report csv: missing header");
    std::istringstream hdr(line);
    std::string cell;
    while (std::getline(hdr, cell, ',')) report.columns.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::vector<double> values;
        while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
        if (values.size() != report.columns.size())
            throw ValidationError("report csv: ragged row");
        report.rows.push_back(std::move(values));
    }
    return report;
}

void emit_report(const ExperimentReport& report, const std::string& output_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(output_dir) / "figures", ec);
    if (ec) throw NumericalError("emit_report: cannot create " + output_dir);

    const auto write_file = [&](const fs::path& p, const std::string& content) {
        std::ofstream out(p);
        if (!out) throw NumericalError("emit_report: cannot write " + p.string());
        out << content;
    };
    write_file(fs::path(output_dir) / "report.csv", report_rows_to_csv(report));

    nlohmann::json j;
    j["experiment"] = report.experiment;
    j["columns"] = report.columns;
    j["summary"] = report.summary;
    write_file(fs::path(output_dir) / "report.json", j.dump(2) + "\n");

    for (const auto& [name, svg] : report.figures)
        write_file(fs::path(output_dir) / "figures" / (name + ".svg"), svg);
}

std::string svg_density_figure(const std::string& title, const std::vector<SvgCurve>& curves,
                               const std::vector<std::pair<double, std::string>>& vlines) {
    const int width = 640, height = 400, margin = 48;
    double xlo = 1e300, xhi = -1e300, yhi = 0.0;
    for (const auto& c : curves) {
        if (c.x.size() == 0) continue;
        xlo = std::min(xlo, c.x.minCoeff());
        xhi = std::max(xhi, c.x.maxCoeff());
        yhi = std::max(yhi, c.y.maxCoeff());
    }
    if (!(xhi > xlo)) {
        xlo = 0.0;
        xhi = 1.0;
    }
    if (yhi <= 0.0) yhi = 1.0;
    yhi *= 1.08;
    auto px = [&](double x) {
        return margin + (x - xlo) / (xhi - xlo) * (width - 2 * margin);
    };
    auto py = [&](double y) {
        return height - margin - y / yhi * (height - 2 * margin);
    };
    std::ostringstream out;
    out.precision(6);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
        << "\" fill=\"white\"/>\n"
        << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n"
        << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
        << width - margin << "\" y2=\"" << height - margin
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n"
        << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (const auto& [x, color] : vlines) {
        if (x < xlo || x > xhi) continue;
        out << "<line x1=\"" << px(x) << "\" y1=\"" << margin << "\" x2=\"" << px(x)
            << "\" y2=\"" << height - margin << "\" stroke=\"" << color
            << "\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
    }
    int legend_y = margin + 4;
    for (const auto& c : curves) {
        out << "<polyline fill=\"none\" stroke=\"" << c.color << "\" stroke-width=\"1.5\"";
        if (c.dashed) out << " stroke-dasharray=\"6 4\"";
        out << " points=\"";
        for (int i = 0; i < c.x.size(); ++i)
            out << px(c.x[i]) << "," << py(std::max(0.0, c.y[i])) << " ";
        out << "\"/>\n";
        out << "<text x=\"" << width - margin - 4 << "\" y=\"" << legend_y
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
            << c.color << "\">" << c.label << "</text>\n";
        legend_y += 14;
    }
    out << "</svg>\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

namespace {

SvgCurve curve_from_density(const GridDensity& d, const std::string& label,
                            const std::string& color, bool dashed = false) {
    return SvgCurve{label, color, dashed, d.grid, d.values};
}

SvgCurve curve_from_law(const GaussianLaw& law, double lo, double hi,
                        const std::string& label, const std::string& color) {
    const Eigen::VectorXd x = linspace(lo, hi, 301);
    Eigen::VectorXd y(x.size());
    for (int i = 0; i < x.size(); ++i) y[i] = law_density(law, x[i]);
    return SvgCurve{label, color, true, x, y};
}

SvgCurve curve_from_law(const NegExpLaw& law, double lo, double hi,
                        const std::string& label, const std::string& color) {
    const Eigen::VectorXd x = linspace(lo, hi, 601);
    Eigen::VectorXd y(x.size());
    for (int i = 0; i < x.size(); ++i) y[i] = law_density(law, x[i]);
    return SvgCurve{label, color, true, x, y};
}

}  // namespace

ExperimentReport run_parametric_demo(const ExperimentConfig& config) {
    ExperimentReport report;
    report.experiment = config.experiment;
    report.columns = {"n", "replication", "tv_to_limit", "delta", "info_or_gamma",
                      "ess", "localized_mass"};
    const double theta_true = config.model_params.value("theta_true", 0.5);
    const Eigen::VectorXd grid = linspace(-1.0, 2.0, 1501);

    // Polynomial prior on [-1,2]: 0.2 + (theta+1)(2-theta), normalized.
    const LogTarget logprior = scalar_target([](double t) {
        if (t < -1.0 || t > 2.0) return kNegInf;
        return std::log(0.2 + (t + 1.0) * (2.0 - t));
    });
    {
        Eigen::VectorXd pv(grid.size());
        for (int i = 0; i < grid.size(); ++i)
            pv[i] = std::exp(logprior.eval(Eigen::VectorXd::Constant(1, grid[i])));
        const GridDensity prior_density = make_grid_density(grid, pv);
        report.figures.emplace_back(
            "panel_n0",
            svg_density_figure("prior (n = 0)",
                               {curve_from_density(prior_density, "prior", "#1f6fb2")}));
    }

    SplitRng master(config.seed);
    std::vector<int> ns;
    for (int n : config.n_values)
        if (n >= 1) ns.push_back(n);

    struct Cell {
        std::vector<double> row;
        GridDensity posterior;
        double mle = 0.0, map = 0.0;
    };
    std::vector<Cell> cells(ns.size() * config.replications);
    run_parallel(static_cast<int>(cells.size()), config.jobs, [&](int idx) {
        const int ni = idx / config.replications;
        const int rep = idx % config.replications;
        const int n = ns[ni];
        SplitRng rng = master.fork(n, rep);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += theta_true + rng.normal();
        const double xbar = sum / n;
        const LogTarget loglik =
            scalar_target([&](double t) { return -0.5 * n * (t - xbar) * (t - xbar); });
        const GridDensity post = grid_posterior(loglik, logprior, grid);
        const double mle = std::min(2.0, std::max(-1.0, xbar));
        int arg = 0;
        for (int i = 1; i < post.size(); ++i)
            if (post.values[i] > post.values[arg]) arg = i;
        const double tv = tv_to_law(post, make_gaussian_law(mle, 1.0 / n));
        const double root_n = std::sqrt(static_cast<double>(n));
        const double mn = std::log(std::max(2.0, static_cast<double>(n)));
        const double localized =
            density_mass(post, theta_true - mn / root_n, theta_true + mn / root_n);
        Cell cell;
        cell.row = {static_cast<double>(n), static_cast<double>(rep), tv,
                    root_n * (xbar - theta_true), 1.0, 0.0, localized};
        cell.posterior = post;
        cell.mle = mle;
        cell.map = post.grid[arg];
        cells[idx] = std::move(cell);
    });

    nlohmann::json per_n = nlohmann::json::array();
    for (size_t ni = 0; ni < ns.size(); ++ni) {
        std::vector<double> tvs;
        for (int rep = 0; rep < config.replications; ++rep) {
            const Cell& cell = cells[ni * config.replications + rep];
            report.rows.push_back(cell.row);
            tvs.push_back(cell.row[2]);
        }
        const Cell& first = cells[ni * config.replications];
        report.figures.emplace_back(
            "panel_n" + std::to_string(ns[ni]),
            svg_density_figure(
                "posterior vs limit, n = " + std::to_string(ns[ni]),
                {curve_from_density(first.posterior, "posterior", "#1f6fb2"),
                 curve_from_law(make_gaussian_law(first.mle, 1.0 / ns[ni]), -1.0, 2.0,
                                "normal limit", "#c23b22")},
                {{first.map, "#1f6fb2"}, {first.mle, "#c23b22"}}));
        per_n.push_back({{"n", ns[ni]},
                         {"median_tv", median(tvs)},
                         {"q75_tv", quantile(tvs, 0.75)}});
    }
    report.summary["per_n"] = per_n;
    return report;
}

ExperimentReport run_plr_bvm(const ExperimentConfig& config) {
    ExperimentReport report;
    report.experiment = config.experiment;
    report.columns = {"n", "replication", "tv_to_limit", "delta", "info_or_gamma",
                      "ess", "localized_mass"};
    const PlrConfig model = plr_config_from_params(config.model_params);
    const EfficientInfluence infl = plr_efficient_influence(model);
    const double info = infl.info(0, 0);
    const bool use_mcmc = config.model_params.value("mode", std::string("exact")) == "mcmc";
    const int mcmc_steps = config.model_params.value("mcmc_steps", 100000);

    SplitRng master(config.seed);
    const int reps = config.replications;
    struct Cell {
        std::vector<double> row;
        GridDensity posterior;
        double dt = 0.0;
        double cred_len = 0.0, center_gap = 0.0;
    };
    std::vector<Cell> cells(config.n_values.size() * reps);
    run_parallel(static_cast<int>(cells.size()), config.jobs, [&](int idx) {
        const int ni = idx / reps;
        const int rep = idx % reps;
        const int n = config.n_values[ni];
        SplitRng rng = master.fork(n, rep);
        const SampleSet s = plr_generate(model, n, rng);
        const double dt = delta_tilde(s, infl)[0];
        const double sd = 1.0 / std::sqrt(info);
        const Eigen::VectorXd h_grid = linspace(dt - 14 * sd, dt + 14 * sd, 2401);
        PlrPosteriorOptions opt;
        GridDensity post;
        double ess = 0.0;
        if (use_mcmc) {
            opt.mode = PlrPosteriorOptions::Mode::mcmc;
            opt.mcmc_steps = mcmc_steps;
            SplitRng mcmc_rng = master.fork(n, rep, 7);
            post = plr_marginal_posterior(s, model, h_grid, opt, &mcmc_rng);
            ess = -1.0;  // chain-based; see diagnostics in formats.md
        } else {
            post = plr_marginal_posterior(s, model, h_grid, opt);
        }
        const double tv = tv_to_law(post, make_gaussian_law(dt, 1.0 / info));
        const double mn = std::log(static_cast<double>(n));
        const double localized = density_mass(post, -mn, mn);
        const double qlo = density_quantile(post, 0.025);
        const double qhi = density_quantile(post, 0.975);
        Cell cell;
        cell.row = {static_cast<double>(n), static_cast<double>(rep), tv, dt, info, ess,
                    localized};
        cell.posterior = post;
        cell.dt = dt;
        cell.cred_len = qhi - qlo;
        cell.center_gap = std::abs(0.5 * (qlo + qhi) - dt);
        cells[idx] = std::move(cell);
    });

    const double z = normal_quantile(0.975);
    const double wald_len = 2.0 * z / std::sqrt(info);
    nlohmann::json per_n = nlohmann::json::array();
    for (size_t ni = 0; ni < config.n_values.size(); ++ni) {
        std::vector<double> tvs, lens, gaps, locs;
        for (int rep = 0; rep < reps; ++rep) {
            const Cell& cell = cells[ni * reps + rep];
            report.rows.push_back(cell.row);
            tvs.push_back(cell.row[2]);
            lens.push_back(cell.cred_len);
            gaps.push_back(cell.center_gap);
            locs.push_back(cell.row[6]);
        }
        const Cell& first = cells[ni * reps];
        report.figures.emplace_back(
            "plr_n" + std::to_string(config.n_values[ni]),
            svg_density_figure(
                "marginal posterior vs normal limit, n = " +
                    std::to_string(config.n_values[ni]),
                {curve_from_density(first.posterior, "posterior", "#1f6fb2"),
                 curve_from_law(make_gaussian_law(first.dt, 1.0 / info),
                                first.posterior.grid[0],
                                first.posterior.grid[first.posterior.size() - 1],
                                "normal limit", "#c23b22")}));
        per_n.push_back({{"n", config.n_values[ni]},
                         {"median_tv", median(tvs)},
                         {"q75_tv", quantile(tvs, 0.75)},
                         {"median_localized_mass", median(locs)},
                         {"median_credible_len", median(lens)},
                         {"wald_len", wald_len},
                         {"median_center_gap", median(gaps)}});
    }
    report.summary["per_n"] = per_n;
    report.summary["info"] = info;
    return report;
}

ExperimentReport run_mixture_bvm(const ExperimentConfig& config) {
    ExperimentReport report;
    report.experiment = config.experiment;
    // tv_to_limit carries the Kolmogorov distance of the standardized
    // marginal to the standard normal; info_or_gamma the implied information
    // 1/(n sd^2). See docs/formats.md.
    report.columns = {"n", "replication", "tv_to_limit", "delta", "info_or_gamma",
                      "ess", "localized_mass"};
    const MixtureConfig model = mixture_config_from_params(config.model_params);
    // 0 selects a budget that keeps the sigma effective sample size usable
    // as the chain's relaxation time grows with n.
    const int iters_opt = config.model_params.value("gibbs_iters", 0);

    SplitRng master(config.seed);
    const int reps = config.replications;
    struct Cell {
        std::vector<double> row;
        GridDensity marginal;
        bool has_marginal = false;
    };
    std::vector<Cell> cells(config.n_values.size() * reps);
    run_parallel(static_cast<int>(cells.size()), config.jobs, [&](int idx) {
        const int ni = idx / reps;
        const int rep = idx % reps;
        const int n = config.n_values[ni];
        const int iters = iters_opt > 0 ? iters_opt : 4000 + 20 * n;
        SplitRng data_rng = master.fork(n, rep);
        const SampleSet s = mixture_generate(model, n, data_rng);
        SplitRng gibbs_rng = master.fork(n, rep, 13);
        const DpGibbsResult res = dp_gibbs(s, model, iters, gibbs_rng);
        const Eigen::VectorXd sig = res.sigma_chain.states.col(0);
        const double mean = sig.mean();
        const double sd = std::sqrt((sig.array() - mean).square().mean());
        std::vector<double> std_draws(sig.size());
        for (int i = 0; i < sig.size(); ++i) std_draws[i] = (sig[i] - mean) / sd;
        const double ks = ks_to_standard_normal(std_draws);
        const double ess = effective_sample_size(res.sigma_chain, 0);
        const double root_n = std::sqrt(static_cast<double>(n));
        const double mn = std::log(static_cast<double>(n));
        long inside = 0;
        for (int i = 0; i < sig.size(); ++i)
            if (std::abs(root_n * (sig[i] - model.sigma0)) <= mn) ++inside;
        Cell cell;
        cell.row = {static_cast<double>(n),
                    static_cast<double>(rep),
                    ks,
                    root_n * (mean - model.sigma0),
                    1.0 / (n * sd * sd),
                    ess,
                    static_cast<double>(inside) / sig.size()};
        if (rep == 0) {
            const Eigen::VectorXd grid =
                linspace(std::max(model.sigma_min, mean - 6 * sd),
                         std::min(model.sigma_max, mean + 6 * sd), 101);
            cell.marginal = chain_to_density(res.sigma_chain, 0, grid);
            cell.has_marginal = true;
        }
        cells[idx] = std::move(cell);
    });

    auto cell_sd = [](const std::vector<double>& row) {
        return 1.0 / std::sqrt(row[0] * row[4]);
    };
    nlohmann::json per_n = nlohmann::json::array();
    for (size_t ni = 0; ni < config.n_values.size(); ++ni) {
        std::vector<double> kss, sds;
        for (int rep = 0; rep < reps; ++rep) {
            const Cell& cell = cells[ni * reps + rep];
            report.rows.push_back(cell.row);
            kss.push_back(cell.row[2]);
            sds.push_back(cell_sd(cell.row));
        }
        const Cell& first = cells[ni * reps];
        if (first.has_marginal)
            report.figures.emplace_back(
                "mixture_n" + std::to_string(config.n_values[ni]),
                svg_density_figure("kernel-scale marginal, n = " +
                                       std::to_string(config.n_values[ni]),
                                   {curve_from_density(first.marginal, "posterior",
                                                       "#1f6fb2")}));
        per_n.push_back({{"n", config.n_values[ni]},
                         {"median_ks", median(kss)},
                         {"median_sd", median(sds)}});
    }
    report.summary["per_n"] = per_n;

    // Per-replication regression slope of log sd on log n.
    if (config.n_values.size() >= 2) {
        std::vector<double> slopes;
        for (int rep = 0; rep < reps; ++rep) {
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            const double m = static_cast<double>(config.n_values.size());
            for (size_t ni = 0; ni < config.n_values.size(); ++ni) {
                const double x = std::log(static_cast<double>(config.n_values[ni]));
                const double y = std::log(cell_sd(cells[ni * reps + rep].row));
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            slopes.push_back((m * sxy - sx * sy) / (m * sxx - sx * sx));
        }
        report.summary["median_log_sd_slope"] = median(slopes);
    }
    return report;
}

ExperimentReport run_boundary_bvm(const ExperimentConfig& config) {
    ExperimentReport report;
    report.experiment = config.experiment;
    report.columns = {"n", "replication", "tv_to_limit", "delta", "info_or_gamma",
                      "ess", "localized_mass"};
    const BoundaryConfig model = boundary_config_from_params(config.model_params);
    const int iters = config.model_params.value("mcmc_iters", 4000);
    BoundaryMcmcOptions mcmc;
    mcmc.blend = config.model_params.value("blend", 0.9);

    SplitRng master(config.seed);
    const int reps = config.replications;
    struct Cell {
        std::vector<double> row;
        BoundaryPosterior post;
        bool keep_figure = false;
    };
    std::vector<Cell> cells(config.n_values.size() * reps);
    run_parallel(static_cast<int>(cells.size()), config.jobs, [&](int idx) {
        const int ni = idx / reps;
        const int rep = idx % reps;
        const int n = config.n_values[ni];
        SplitRng data_rng = master.fork(n, rep);
        const SampleSet s = boundary_generate(model, n, data_rng);
        SplitRng mcmc_rng = master.fork(n, rep, 29);
        const BoundaryPosterior post = boundary_posterior(s, model, iters, mcmc_rng, mcmc);
        const double tv =
            tv_to_law(post.h_density, make_negexp_law(post.delta_n, post.gamma));
        const double mn = std::log(static_cast<double>(n));
        const double localized = density_mass(post.h_density, -mn, mn);
        Cell cell;
        cell.row = {static_cast<double>(n), static_cast<double>(rep), tv, post.delta_n,
                    post.gamma,              post.theta_ess,          localized};
        cell.post = post;
        cell.keep_figure = rep == 0;
        cells[idx] = std::move(cell);
    });

    nlohmann::json per_n = nlohmann::json::array();
    for (size_t ni = 0; ni < config.n_values.size(); ++ni) {
        std::vector<double> tvs, esss;
        for (int rep = 0; rep < reps; ++rep) {
            const Cell& cell = cells[ni * reps + rep];
            report.rows.push_back(cell.row);
            tvs.push_back(cell.row[2]);
            esss.push_back(cell.row[5]);
        }
        const Cell& first = cells[ni * reps];
        report.figures.emplace_back(
            "boundary_n" + std::to_string(config.n_values[ni]),
            svg_density_figure(
                "boundary posterior vs exponential limit, n = " +
                    std::to_string(config.n_values[ni]),
                {curve_from_density(first.post.h_density, "posterior", "#1f6fb2"),
                 curve_from_law(make_negexp_law(first.post.delta_n, first.post.gamma),
                                first.post.h_density.grid[0], first.post.delta_n,
                                "exponential limit", "#c23b22")}));
        per_n.push_back({{"n", config.n_values[ni]},
                         {"median_tv", median(tvs)},
                         {"median_ess", median(esss)}});
    }
    report.summary["per_n"] = per_n;

    // Exact one-dimensional check: rate-1 exponential shift data, posterior
    // from the analytic grid rule against the negative-exponential law.
    if (config.model_params.value("exact_subexperiment", true)) {
        nlohmann::json exact = nlohmann::json::array();
        for (int n : {10, 100, 1000}) {
            std::vector<double> tvs;
            for (int rep = 0; rep < std::max(config.replications, 100); ++rep) {
                SplitRng rng = master.fork(n, rep, 31);
                SampleSet s;
                s.observations.resize(n, 1);
                for (int i = 0; i < n; ++i)
                    s.observations(i, 0) = model.theta0 + rng.exponential(1.0);
                const GridDensity post =
                    exp_location_exact_posterior(s, model.theta_prior, 3001);
                const double x_min = s.observations.col(0).minCoeff();
                tvs.push_back(tv_to_law(post, make_negexp_law(
                                                  x_min, static_cast<double>(n))));
            }
            exact.push_back({{"n", n}, {"median_tv", median(tvs)}});
        }
        report.summary["exact_subexperiment"] = exact;
    }
    return report;
}

ExperimentReport run_coverage(const ExperimentConfig& config) {
    ExperimentReport report;
    report.experiment = config.experiment;
    report.columns = {"n",
                      "nominal",
                      "credible_coverage",
                      "wald_coverage",
                      "mean_credible_len",
                      "mean_wald_len"};
    const PlrConfig model = plr_config_from_params(config.model_params);
    const EfficientInfluence infl = plr_efficient_influence(model);
    const double info = infl.info(0, 0);
    std::vector<double> levels =
        config.model_params.value("levels", std::vector<double>{0.5, 0.95});

    SplitRng master(config.seed);
    const int reps = config.replications;
    struct Cell {
        std::vector<double> cred_lo, cred_hi;
        double dt = 0.0;
    };
    std::vector<Cell> cells(config.n_values.size() * reps);
    run_parallel(static_cast<int>(cells.size()), config.jobs, [&](int idx) {
        const int ni = idx / reps;
        const int rep = idx % reps;
        const int n = config.n_values[ni];
        SplitRng rng = master.fork(n, rep);
        const SampleSet s = plr_generate(model, n, rng);
        const double dt = delta_tilde(s, infl)[0];
        const double sd = 1.0 / std::sqrt(info);
        const Eigen::VectorXd h_grid = linspace(dt - 14 * sd, dt + 14 * sd, 2401);
        const GridDensity post = plr_marginal_posterior(s, model, h_grid);
        Cell cell;
        cell.dt = dt;
        for (double level : levels) {
            const double a = (1.0 - level) / 2.0;
            cell.cred_lo.push_back(density_quantile(post, a));
            cell.cred_hi.push_back(density_quantile(post, 1.0 - a));
        }
        cells[idx] = std::move(cell);
    });

    for (size_t ni = 0; ni < config.n_values.size(); ++ni) {
        for (size_t li = 0; li < levels.size(); ++li) {
            const double z = normal_quantile(1.0 - (1.0 - levels[li]) / 2.0);
            long cred_cover = 0, wald_cover = 0;
            double cred_len = 0.0;
            for (int rep = 0; rep < reps; ++rep) {
                const Cell& cell = cells[ni * reps + rep];
                // True h is 0 by construction of the replication.
                if (cell.cred_lo[li] <= 0.0 && 0.0 <= cell.cred_hi[li]) ++cred_cover;
                if (std::abs(cell.dt) <= z / std::sqrt(info)) ++wald_cover;
                cred_len += cell.cred_hi[li] - cell.cred_lo[li];
            }
            report.rows.push_back({static_cast<double>(config.n_values[ni]), levels[li],
                                   static_cast<double>(cred_cover) / reps,
                                   static_cast<double>(wald_cover) / reps,
                                   cred_len / reps, 2.0 * z / std::sqrt(info)});
        }
    }
    report.summary["levels"] = levels;
    report.summary["replications"] = reps;
    return report;
}

ExperimentReport run_ilan_probe(const ExperimentConfig& config) {
    ExperimentReport report;
    report.experiment = config.experiment;
    // remainder: Monte Carlo over the prior draws; remainder_exact: same
    // expansion with the closed-form gaussian ratio; exact_gap: their
    // difference, i.e. the pure Monte Carlo error of the ratio.
    report.columns = {"n", "replication", "h", "remainder", "remainder_exact", "exact_gap"};
    const PlrConfig model = plr_config_from_params(config.model_params);
    const EfficientInfluence infl = plr_efficient_influence(model);
    const int draws_j = config.model_params.value("prior_draws", 2000);
    std::vector<double> h_list =
        config.model_params.value("h_list", std::vector<double>{-2.0, -1.0, 1.0, 2.0});

    LocalFrame frame;
    frame.theta0 = Eigen::VectorXd::Constant(1, model.theta0);
    const ThetaEtaLogLik loglik = [](double theta, const NuisancePath& eta,
                                     const SampleSet& s) {
        return plr_loglik(theta, eta, s);
    };
    const Eigen::VectorXd knots = linspace(0, 1, model.knots_m);

    SplitRng master(config.seed);
    const int reps = config.replications;
    struct Cell {
        std::vector<std::vector<double>> rows;
    };
    std::vector<Cell> cells(config.n_values.size() * reps);
    run_parallel(static_cast<int>(cells.size()), config.jobs, [&](int idx) {
        const int ni = idx / reps;
        const int rep = idx % reps;
        const int n = config.n_values[ni];
        SplitRng data_rng = master.fork(n, rep);
        const SampleSet s = plr_generate(model, n, data_rng);
        // Common random numbers: one set of prior draws reused for all h.
        SplitRng prior_rng = master.fork(n, rep, 17);
        std::vector<NuisancePath> draws;
        draws.reserve(draws_j);
        for (int j = 0; j < draws_j; ++j)
            draws.push_back(plr_sample_prior(model.prior_k, knots, prior_rng));

        double score_sum = 0.0;
        for (int i = 0; i < s.n(); ++i) score_sum += infl.score(s.row(i))[0];
        score_sum /= std::sqrt(static_cast<double>(n));

        const double log_sn0 =
            integrated_likelihood(s, 0.0, draws, loglik, frame, model.eta0);
        Cell cell;
        for (double h : h_list) {
            const double log_snh =
                integrated_likelihood(s, h, draws, loglik, frame, model.eta0);
            const double ratio = log_snh - log_sn0;
            const double quadratic = h * score_sum - 0.5 * h * h * infl.info(0, 0);
            const double exact = plr_exact_log_sn_ratio(s, model, h);
            cell.rows.push_back({static_cast<double>(n), static_cast<double>(rep), h,
                                 ratio - quadratic, exact - quadratic, ratio - exact});
        }
        cells[idx] = std::move(cell);
    });

    nlohmann::json per_n = nlohmann::json::array();
    for (size_t ni = 0; ni < config.n_values.size(); ++ni) {
        std::vector<double> rems, exact_rems, gaps;
        for (int rep = 0; rep < reps; ++rep) {
            for (const auto& row : cells[ni * reps + rep].rows) {
                report.rows.push_back(row);
                rems.push_back(std::abs(row[3]));
                exact_rems.push_back(std::abs(row[4]));
                gaps.push_back(std::abs(row[5]));
            }
        }
        per_n.push_back({{"n", config.n_values[ni]},
                         {"median_abs_remainder", median(rems)},
                         {"median_abs_remainder_exact", median(exact_rems)},
                         {"median_abs_exact_gap", median(gaps)}});
    }
    report.summary["per_n"] = per_n;
    return report;
}

ExperimentReport run_perturbation_probe(const ExperimentConfig& config) {
    ExperimentReport report;
    report.experiment = config.experiment;
    report.columns = {"n", "replication", "h", "rho", "mass"};
    const PlrConfig model = plr_config_from_params(config.model_params);
    const double rho = config.model_params.value("rho", 0.35);
    const int budget = config.model_params.value("mcmc_budget", 40000);
    std::vector<double> h_list =
        config.model_params.value("h_list", std::vector<double>{0.0, 2.0});

    SplitRng master(config.seed);
    const int reps = config.replications;
    struct Cell {
        std::vector<std::vector<double>> rows;
    };
    std::vector<Cell> cells(config.n_values.size() * reps);
    run_parallel(static_cast<int>(cells.size()), config.jobs, [&](int idx) {
        const int ni = idx / reps;
        const int rep = idx % reps;
        const int n = config.n_values[ni];
        SplitRng data_rng = master.fork(n, rep);
        const SampleSet s = plr_generate(model, n, data_rng);
        Cell cell;
        for (size_t hi = 0; hi < h_list.size(); ++hi) {
            SplitRng probe_rng = master.fork(n, rep, 100 + hi);
            const double mass =
                plr_perturbation_probe(s, model, h_list[hi], rho, budget, probe_rng);
            cell.rows.push_back({static_cast<double>(n), static_cast<double>(rep),
                                 h_list[hi], rho, mass});
        }
        cells[idx] = std::move(cell);
    });

    nlohmann::json per_n = nlohmann::json::array();
    for (size_t ni = 0; ni < config.n_values.size(); ++ni) {
        nlohmann::json per_h = nlohmann::json::object();
        for (size_t hi = 0; hi < h_list.size(); ++hi) {
            std::vector<double> masses;
            for (int rep = 0; rep < reps; ++rep) {
                const auto& row = cells[ni * reps + rep].rows[hi];
                masses.push_back(row[4]);
            }
            per_h["h=" + format_double(h_list[hi])] = median(masses);
        }
        for (int rep = 0; rep < reps; ++rep)
            for (const auto& row : cells[ni * reps + rep].rows) report.rows.push_back(row);
        per_n.push_back({{"n", config.n_values[ni]}, {"median_mass", per_h}});
    }
    report.summary["per_n"] = per_n;
    return report;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
    validate_experiment_config(config);
    if (config.experiment == "parametric_demo") return run_parametric_demo(config);
    if (config.experiment == "plr_bvm") return run_plr_bvm(config);
    if (config.experiment == "mixture_bvm") return run_mixture_bvm(config);
    if (config.experiment == "boundary_bvm") return run_boundary_bvm(config);
    if (config.experiment == "coverage") return run_coverage(config);
    if (config.experiment == "ilan_probe") return run_ilan_probe(config);
    if (config.experiment == "perturbation_probe") return run_perturbation_probe(config);
    throw ValidationError("unknown experiment '" + config.experiment + "'");
}

}  // namespace bvmlab
