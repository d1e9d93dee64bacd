#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bvmlab/model_boundary.hpp"
#include "bvmlab/model_mixture.hpp"
#include "bvmlab/model_plr.hpp"
#include "bvmlab/stat_core.hpp"

namespace bvmlab {

// Batch experiment description, usually parsed from a JSON config file.
struct ExperimentConfig {
    std::string experiment;  // parametric_demo | plr_bvm | mixture_bvm |
                             // boundary_bvm | coverage | ilan_probe |
                             // perturbation_probe
    std::vector<int> n_values;
    int replications = 1;
    std::uint64_t seed = 1;
    nlohmann::json model_params;
    std::string output_dir = "out";
    int jobs = 1;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig experiment_config_from_file(const std::string& path);
void validate_experiment_config(const ExperimentConfig& config);

// Generic numeric report: fixed columns per experiment (see docs/formats.md),
// deterministic rows, a summary with medians/quantiles, and SVG figures.
struct ExperimentReport {
    std::string experiment;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    nlohmann::json summary;
    std::vector<std::pair<std::string, std::string>> figures;  // name -> svg
};

std::string report_rows_to_csv(const ExperimentReport& report);
ExperimentReport report_rows_from_csv(const std::string& csv);

ExperimentReport run_parametric_demo(const ExperimentConfig& config);
ExperimentReport run_plr_bvm(const ExperimentConfig& config);
ExperimentReport run_mixture_bvm(const ExperimentConfig& config);
ExperimentReport run_boundary_bvm(const ExperimentConfig& config);
ExperimentReport run_coverage(const ExperimentConfig& config);
ExperimentReport run_ilan_probe(const ExperimentConfig& config);
ExperimentReport run_perturbation_probe(const ExperimentConfig& config);

ExperimentReport run_experiment(const ExperimentConfig& config);

// Writes report.csv, report.json and figures/*.svg under output_dir.
void emit_report(const ExperimentReport& report, const std::string& output_dir);

// Minimal SVG density-overlay figure.
struct SvgCurve {
    std::string label;
    std::string color;
    bool dashed = false;
    Eigen::VectorXd x;
    Eigen::VectorXd y;
};

std::string svg_density_figure(const std::string& title, const std::vector<SvgCurve>& curves,
                               const std::vector<std::pair<double, std::string>>& vlines = {});

// Summaries of a tabulated density by cumulative trapezoid mass.
double density_mass(const GridDensity& d, double lo, double hi);
double density_quantile(const GridDensity& d, double p);
double density_mean(const GridDensity& d);

// Default PLR laboratory configuration shared by the PLR-based experiments;
// model_params may override theta0, xi_sd, knots_m, prior_k and the gaussian
// theta-prior standard deviation.
PlrConfig plr_config_from_params(const nlohmann::json& params);
MixtureConfig mixture_config_from_params(const nlohmann::json& params);
BoundaryConfig boundary_config_from_params(const nlohmann::json& params);

}  // namespace bvmlab
