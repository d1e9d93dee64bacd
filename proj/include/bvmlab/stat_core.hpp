#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "bvmlab/errors.hpp"
#include "bvmlab/rng.hpp"

namespace bvmlab {

// ---------------------------------------------------------------------------
// Normal special functions
// ---------------------------------------------------------------------------

double normal_pdf(double x, double mean = 0.0, double sd = 1.0);
double normal_cdf(double x, double mean = 0.0, double sd = 1.0);
// Inverse standard-normal CDF, accurate to full double precision.
double normal_quantile(double p);

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// Normalized density tabulated on a strictly increasing 1-D grid; the
// universal comparison format for posteriors and limit laws. Construct via
// make_grid_density, which validates and rescales to unit trapezoid mass.
struct GridDensity {
    Eigen::VectorXd grid;
    Eigen::VectorXd values;

    int size() const { return static_cast<int>(grid.size()); }
    // Linear interpolation, zero outside the tabulated support.
    double operator()(double x) const;
};

struct GaussianLaw {
    Eigen::VectorXd center;
    Eigen::MatrixXd cov;

    int dim() const { return static_cast<int>(center.size()); }
};

GaussianLaw make_gaussian_law(Eigen::VectorXd center, Eigen::MatrixXd cov);
GaussianLaw make_gaussian_law(double mean, double variance);

// Negative exponential: density rate*exp(rate*(x-location)) on (-inf, location].
struct NegExpLaw {
    double location = 0.0;
    double rate = 1.0;
};

NegExpLaw make_negexp_law(double location, double rate);

// Observations as rows of a matrix, with the seed that produced them.
struct SampleSet {
    Eigen::MatrixXd observations;
    std::uint64_t seed = 0;

    int n() const { return static_cast<int>(observations.rows()); }
    int dim() const { return static_cast<int>(observations.cols()); }
    Eigen::VectorXd row(int i) const { return observations.row(i).transpose(); }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

double trapezoid_integral(const Eigen::VectorXd& grid, const Eigen::VectorXd& values);

GridDensity make_grid_density(Eigen::VectorXd grid, Eigen::VectorXd raw_values);

double law_density(const GaussianLaw& law, const Eigen::VectorXd& x);
double law_density(const GaussianLaw& law, double x);
double law_density(const NegExpLaw& law, double x);

SampleSet sample_law(const GaussianLaw& law, int n, SplitRng& rng);
SampleSet sample_law(const NegExpLaw& law, int n, SplitRng& rng);

// Total variation 1/2 * integral |p-q| on the union grid with linear
// interpolation and zero extension outside each support.
double tv_distance(const GridDensity& p, const GridDensity& q);

// Hellinger distance (integral (sqrt p - sqrt q)^2)^(1/2), range [0, sqrt 2].
double hellinger_distance(const GridDensity& p, const GridDensity& q);

// TV between a tabulated density and an analytic 1-D law: the law is
// tabulated on p's grid extended until the untabulated tail mass is below
// 1e-10, and that tail mass enters as an explicit correction.
double tv_to_law(const GridDensity& p, const GaussianLaw& law);
double tv_to_law(const GridDensity& p, const NegExpLaw& law);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

using Law1D = std::variant<GaussianLaw, NegExpLaw>;

std::string grid_density_to_csv(const GridDensity& d);
GridDensity grid_density_from_csv(const std::string& csv);

// Datasets as CSV with a comma-separated header naming the columns, e.g.
// "y,u,v" for regression triples or "x" for univariate samples.
std::string sample_to_csv(const SampleSet& s, const std::string& header);
SampleSet sample_from_csv(const std::string& csv);

std::string law_to_json(const GaussianLaw& law);
std::string law_to_json(const NegExpLaw& law);
Law1D law_from_json(const std::string& text);

}  // namespace bvmlab
