#include "bvmlab/stat_core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace bvmlab {

namespace {
constexpr double kTwoPi = 6.283185307179586476925287;
constexpr double kTailMass = 1e-10;
}  // namespace

// ---------------------------------------------------------------------------
// Normal special functions
// ---------------------------------------------------------------------------

double normal_pdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(kTwoPi));
}

double normal_cdf(double x, double mean, double sd) {
    return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal_quantile: p must lie in (0,1)");
    // Acklam's rational approximation followed by one Halley refinement.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(kTwoPi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

// ---------------------------------------------------------------------------
// GridDensity
// ---------------------------------------------------------------------------

double GridDensity::operator()(double x) const {
    const int m = size();
    if (x < grid[0] || x > grid[m - 1]) return 0.0;
    const double* begin = grid.data();
    const int j = static_cast<int>(std::upper_bound(begin, begin + m, x) - begin);
    if (j == 0) return values[0];
    if (j == m) return values[m - 1];
    const double t = (x - grid[j - 1]) / (grid[j] - grid[j - 1]);
    return values[j - 1] + t * (values[j] - values[j - 1]);
}

double trapezoid_integral(const Eigen::VectorXd& grid, const Eigen::VectorXd& values) {
    double s = 0.0;
    for (int i = 0; i + 1 < grid.size(); ++i)
        s += 0.5 * (grid[i + 1] - grid[i]) * (values[i] + values[i + 1]);
    return s;
}

GridDensity make_grid_density(Eigen::VectorXd grid, Eigen::VectorXd raw_values) {
    if (grid.size() < 2) throw ValidationError("make_grid_density: grid needs at least 2 points");
    if (grid.size() != raw_values.size())
        throw ValidationError("make_grid_density: grid and values lengths differ");
    for (int i = 0; i + 1 < grid.size(); ++i)
        if (!(grid[i] < grid[i + 1]))
            throw ValidationError("make_grid_density: grid is not strictly increasing");
    bool all_zero = true;
    for (int i = 0; i < raw_values.size(); ++i) {
        if (raw_values[i] < 0.0)
            throw ValidationError("make_grid_density: negative density value");
        if (!std::isfinite(raw_values[i]))
            throw ValidationError("make_grid_density: non-finite density value");
        if (raw_values[i] > 0.0) all_zero = false;
    }
    if (all_zero) throw ValidationError("make_grid_density: all values are zero");
    const double mass = trapezoid_integral(grid, raw_values);
    GridDensity d;
    d.grid = std::move(grid);
    d.values = raw_values / mass;
    return d;
}

// ---------------------------------------------------------------------------
// Laws
// ---------------------------------------------------------------------------

GaussianLaw make_gaussian_law(Eigen::VectorXd center, Eigen::MatrixXd cov) {
    if (cov.rows() != cov.cols() || cov.rows() != center.size())
        throw ValidationError("GaussianLaw: dimension mismatch");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw ValidationError("GaussianLaw: covariance not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw ValidationError("GaussianLaw: covariance not positive-definite");
    return GaussianLaw{std::move(center), std::move(cov)};
}

GaussianLaw make_gaussian_law(double mean, double variance) {
    Eigen::VectorXd c(1);
    c[0] = mean;
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = variance;
    return make_gaussian_law(std::move(c), std::move(v));
}

NegExpLaw make_negexp_law(double location, double rate) {
    if (!(rate > 0.0)) throw ValidationError("NegExpLaw: rate must be positive");
    return NegExpLaw{location, rate};
}

double law_density(const GaussianLaw& law, const Eigen::VectorXd& x) {
    if (x.size() != law.center.size())
        throw ValidationError("law_density: dimension mismatch");
    const int k = law.dim();
    Eigen::LLT<Eigen::MatrixXd> llt(law.cov);
    if (llt.info() != Eigen::Success)
        throw NumericalError("law_density: covariance factorization failed");
    const Eigen::VectorXd diff = x - law.center;
    const Eigen::VectorXd w = llt.matrixL().solve(diff);
    double logdet = 0.0;
    for (int i = 0; i < k; ++i) logdet += std::log(llt.matrixL()(i, i));
    return std::exp(-0.5 * w.squaredNorm() - logdet - 0.5 * k * std::log(kTwoPi));
}

double law_density(const GaussianLaw& law, double x) {
    Eigen::VectorXd v(1);
    v[0] = x;
    return law_density(law, v);
}

double law_density(const NegExpLaw& law, double x) {
    if (x > law.location) return 0.0;
    return law.rate * std::exp(law.rate * (x - law.location));
}

SampleSet sample_law(const GaussianLaw& law, int n, SplitRng& rng) {
    if (n < 1) throw ValidationError("sample_law: n must be at least 1");
    const int k = law.dim();
    Eigen::LLT<Eigen::MatrixXd> llt(law.cov);
    const Eigen::MatrixXd L = llt.matrixL();
    SampleSet s;
    s.seed = rng.seed();
    s.observations.resize(n, k);
    for (int i = 0; i < n; ++i)
        s.observations.row(i) = (law.center + L * rng.normal_vector(k)).transpose();
    return s;
}

SampleSet sample_law(const NegExpLaw& law, int n, SplitRng& rng) {
    if (n < 1) throw ValidationError("sample_law: n must be at least 1");
    SampleSet s;
    s.seed = rng.seed();
    s.observations.resize(n, 1);
    for (int i = 0; i < n; ++i)
        s.observations(i, 0) = law.location - rng.exponential(law.rate);
    return s;
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

namespace {

// Sorted union of the two grids, deduplicated.
Eigen::VectorXd union_grid(const GridDensity& p, const GridDensity& q) {
    std::vector<double> u(p.grid.data(), p.grid.data() + p.grid.size());
    u.insert(u.end(), q.grid.data(), q.grid.data() + q.grid.size());
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    return Eigen::Map<Eigen::VectorXd>(u.data(), static_cast<int>(u.size()));
}

}  // namespace

double tv_distance(const GridDensity& p, const GridDensity& q) {
    const Eigen::VectorXd u = union_grid(p, q);
    Eigen::VectorXd diff(u.size());
    for (int i = 0; i < u.size(); ++i) diff[i] = std::abs(p(u[i]) - q(u[i]));
    return 0.5 * trapezoid_integral(u, diff);
}

double hellinger_distance(const GridDensity& p, const GridDensity& q) {
    const Eigen::VectorXd u = union_grid(p, q);
    Eigen::VectorXd integrand(u.size());
    for (int i = 0; i < u.size(); ++i) {
        const double a = std::sqrt(std::max(0.0, p(u[i])));
        const double b = std::sqrt(std::max(0.0, q(u[i])));
        integrand[i] = (a - b) * (a - b);
    }
    return std::sqrt(trapezoid_integral(u, integrand));
}

namespace {

// Tabulate an analytic law on p's grid extended to cover all but kTailMass
// of the law's mass; returns the tabulation and the mass left outside it.
struct LawTable {
    GridDensity density;
    double tail_mass;
};

LawTable tabulate_on_extended_grid(const GridDensity& p, double lo, double hi,
                                   const std::function<double(double)>& pdf,
                                   const std::function<double(double)>& cdf,
                                   double jump_at = std::numeric_limits<double>::quiet_NaN()) {
    std::vector<double> pts(p.grid.data(), p.grid.data() + p.grid.size());
    const int extra = 20000;
    for (int i = 0; i <= extra; ++i) pts.push_back(lo + (hi - lo) * i / extra);
    // Represent a density jump explicitly so interpolation cannot smear it.
    if (std::isfinite(jump_at) && jump_at > lo && jump_at < hi) {
        pts.push_back(jump_at);
        pts.push_back(std::nextafter(jump_at, hi));
    }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    Eigen::VectorXd grid = Eigen::Map<Eigen::VectorXd>(pts.data(), static_cast<int>(pts.size()));
    Eigen::VectorXd vals(grid.size());
    for (int i = 0; i < grid.size(); ++i) vals[i] = pdf(grid[i]);
    LawTable t;
    t.tail_mass = cdf(grid[0]) + (1.0 - cdf(grid[grid.size() - 1]));
    // Keep the analytic ordinates: the tabulation is a stand-in for the law
    // itself, not a renormalized density.
    t.density.grid = std::move(grid);
    t.density.values = std::move(vals);
    return t;
}

}  // namespace

double tv_to_law(const GridDensity& p, const GaussianLaw& law) {
    if (law.dim() != 1) throw ValidationError("tv_to_law: only 1-D laws supported");
    const double mu = law.center[0];
    const double sd = std::sqrt(law.cov(0, 0));
    const double z = -normal_quantile(kTailMass / 2.0);
    const double lo = std::min(mu - z * sd, p.grid[0]);
    const double hi = std::max(mu + z * sd, p.grid[p.size() - 1]);
    LawTable t = tabulate_on_extended_grid(
        p, lo, hi, [&](double x) { return normal_pdf(x, mu, sd); },
        [&](double x) { return normal_cdf(x, mu, sd); });
    return tv_distance(p, t.density) + 0.5 * t.tail_mass;
}

double tv_to_law(const GridDensity& p, const NegExpLaw& law) {
    const double lo = std::min(law.location + std::log(kTailMass) / law.rate, p.grid[0]);
    const double hi = std::max(law.location, p.grid[p.size() - 1]);
    LawTable t = tabulate_on_extended_grid(
        p, lo, hi, [&](double x) { return law_density(law, x); },
        [&](double x) {
            return x >= law.location ? 1.0 : std::exp(law.rate * (x - law.location));
        },
        law.location);
    return tv_distance(p, t.density) + 0.5 * t.tail_mass;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string grid_density_to_csv(const GridDensity& d) {
    std::ostringstream out;
    out.precision(17);
    out << "x,density\n";
    for (int i = 0; i < d.size(); ++i) out << d.grid[i] << "," << d.values[i] << "\n";
    return out.str();
}

GridDensity grid_density_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line.rfind("x,density", 0) != 0)
        throw ValidationError("grid_density_from_csv: missing x,density header");
    std::vector<double> xs, vs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ValidationError("grid_density_from_csv: malformed row");
        xs.push_back(std::stod(line.substr(0, comma)));
        vs.push_back(std::stod(line.substr(comma + 1)));
    }
    GridDensity d;
    d.grid = Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<int>(xs.size()));
    d.values = Eigen::Map<Eigen::VectorXd>(vs.data(), static_cast<int>(vs.size()));
    return d;
}

std::string sample_to_csv(const SampleSet& s, const std::string& header) {
    const auto commas = std::count(header.begin(), header.end(), ',');
    if (commas + 1 != s.dim())
        throw ValidationError("sample_to_csv: header arity does not match columns");
    std::ostringstream out;
    out.precision(17);
    out << header << "\n";
    for (int i = 0; i < s.n(); ++i) {
        for (int j = 0; j < s.dim(); ++j) out << (j ? "," : "") << s.observations(i, j);
        out << "\n";
    }
    return out.str();
}

SampleSet sample_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("sample_from_csv: empty input");
    const int dim = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
    std::vector<double> values;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        int got = 0;
        while (std::getline(row, cell, ',')) {
            values.push_back(std::stod(cell));
            ++got;
        }
        if (got != dim) throw ValidationError("sample_from_csv: ragged row");
        ++rows;
    }
    SampleSet s;
    s.observations.resize(rows, dim);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < dim; ++j) s.observations(i, j) = values[i * dim + j];
    return s;
}

std::string law_to_json(const GaussianLaw& law) {
    nlohmann::json j;
    j["kind"] = "gaussian";
    j["center"] = std::vector<double>(law.center.data(), law.center.data() + law.center.size());
    std::vector<std::vector<double>> cov(law.dim(), std::vector<double>(law.dim()));
    for (int i = 0; i < law.dim(); ++i)
        for (int k = 0; k < law.dim(); ++k) cov[i][k] = law.cov(i, k);
    j["cov"] = cov;
    return j.dump();
}

std::string law_to_json(const NegExpLaw& law) {
    nlohmann::json j;
    j["kind"] = "negexp";
    j["location"] = law.location;
    j["rate"] = law.rate;
    return j.dump();
}

Law1D law_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "gaussian") {
        const auto center = j.at("center").get<std::vector<double>>();
        const auto cov = j.at("cov").get<std::vector<std::vector<double>>>();
        const int k = static_cast<int>(center.size());
        Eigen::VectorXd c(k);
        Eigen::MatrixXd v(k, k);
        for (int i = 0; i < k; ++i) {
            c[i] = center[i];
            for (int m = 0; m < k; ++m) v(i, m) = cov.at(i).at(m);
        }
        return make_gaussian_law(std::move(c), std::move(v));
    }
    if (kind == "negexp")
        return make_negexp_law(j.at("location").get<double>(), j.at("rate").get<double>());
    throw ValidationError("law_from_json: unknown kind '" + kind + "'");
}

}  // namespace bvmlab
