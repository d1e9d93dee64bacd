// bvmlab: batch experiments probing posterior limit laws in three
// semiparametric models. See README.md and docs/formats.md.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bvmlab/errors.hpp"
#include "bvmlab/experiments.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::int64_t seed = -1;
    int jobs = 0;
    std::string out_dir;
};

int run(const std::string& experiment, const CliOptions& opts, bool validate_only) {
    using namespace bvmlab;
    try {
        ExperimentConfig config = experiment_config_from_file(opts.config_path);
        if (!experiment.empty() && config.experiment != experiment) {
            std::cerr << "config error: config file declares experiment '"
                      << config.experiment << "', subcommand expects '" << experiment
                      << "'\n";
            return 2;
        }
        if (opts.seed >= 0) config.seed = static_cast<std::uint64_t>(opts.seed);
        if (opts.jobs > 0) config.jobs = opts.jobs;
        if (!opts.out_dir.empty()) config.output_dir = opts.out_dir;
        validate_experiment_config(config);
        if (validate_only) {
            std::cout << "config ok: experiment=" << config.experiment
                      << " n_values=" << config.n_values.size()
                      << " replications=" << config.replications << "\n";
            return 0;
        }
        const ExperimentReport report = run_experiment(config);
        emit_report(report, config.output_dir);
        std::cout << "wrote " << report.rows.size() << " rows to " << config.output_dir
                  << "/report.csv\n";
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DiagnosticsError& e) {
        std::cerr << "diagnostics failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bvmlab: posterior limit-law experiments"};
    app.require_subcommand(1);

    const std::vector<std::string> experiments = {
        "parametric_demo", "plr_bvm",    "mixture_bvm",        "boundary_bvm",
        "coverage",        "ilan_probe", "perturbation_probe"};

    CliOptions opts;
    std::string pending;
    bool validate_only = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON experiment config")
            ->required();
        sub->add_option("--seed", opts.seed, "override the master seed");
        sub->add_option("--jobs", opts.jobs, "concurrent replications");
        sub->add_option("--out", opts.out_dir, "override the output directory");
    };

    for (const std::string& name : experiments) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
        add_common(sub);
        sub->callback([&, name] {
            pending = name;
            validate_only = false;
        });
    }
    CLI::App* validate = app.add_subcommand("validate", "check a config without running");
    add_common(validate);
    validate->callback([&] {
        pending.clear();
        validate_only = true;
    });

    CLI11_PARSE(app, argc, argv);
    return run(pending, opts, validate_only);
}
