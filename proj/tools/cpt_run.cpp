// Experiment runner: trains every (seed x arm x size) cell of a config,
// appends metrics.csv, and writes report.txt, scaling_fits.csv and plots.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cpt/errors.hpp"
#include "cpt/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Continual pre-training experiments with experience replay and Reptile"};

    std::string config_path;
    std::string arm;
    std::int64_t seed = -1;
    std::string out_dir;
    bool resume = false;
    bool report_only = false;

    app.add_option("--config", config_path, "Path to the JSON run config")
        ->check(CLI::ExistingFile);
    app.add_option("--arm", arm, "Run only this arm (e.g. replay25)");
    app.add_option("--seed", seed, "Run only this seed");
    app.add_option("--out", out_dir, "Override the config's output_dir");
    app.add_flag("--resume", resume, "Continue an interrupted run (completed cells are skipped)");
    app.add_flag("--report-only", report_only,
                 "Skip training; regenerate the report from metrics.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (report_only && config_path.empty()) {
            if (out_dir.empty()) {
                std::cerr << "error: --report-only needs --out or --config\n";
                return 1;
            }
            const auto rows = cpt::emit_report(out_dir);
            std::cout << "report regenerated for " << rows.size() << " rows in " << out_dir
                      << "\n";
            return 0;
        }
        if (config_path.empty()) {
            std::cerr << "error: --config is required\n";
            return 1;
        }

        cpt::RunOptions options;
        if (!arm.empty()) {
            options.arm_filter = arm;
        }
        if (seed >= 0) {
            options.seed_filter = static_cast<std::uint64_t>(seed);
        }
        if (!out_dir.empty()) {
            options.out_override = out_dir;
        }
        options.resume = resume;
        options.report_only = report_only;

        const cpt::RunSummary summary = cpt::run_experiment(config_path, options);
        std::cout << "cells: " << summary.cells_total << " total, " << summary.cells_trained
                  << " trained, " << summary.cells_skipped << " already complete\n";
        return 0;
    } catch (const cpt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
