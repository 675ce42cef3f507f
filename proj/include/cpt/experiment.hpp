#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cpt/engine.hpp"

namespace cpt {

/// One experiment arm: a training mode plus its replay ratio.
struct ArmSpec {
    std::string name;   // config name, e.g. "replay25"
    std::string label;  // report label, e.g. "25% Replay"
    TrainMode mode = TrainMode::sequential;
    double alpha = 0.0;
};

/// The arm table in report order.
const std::vector<ArmSpec>& known_arms();
const ArmSpec& arm_by_name(const std::string& name);

/// Everything a full experiment needs; parsed from a JSON config file where
/// every field is optional and defaults to the desk-scale setup below.
struct RunConfig {
    // Stream
    std::size_t vocab_size = 32;
    std::size_t seq_len = 64;
    std::size_t num_tasks = 3;
    std::uint64_t tokens_per_task = 200000;
    double concentration = 0.1;
    std::uint64_t task_seed = 7;  // tasks are shared across seeds

    // Model ladder
    std::size_t embed_dim = 16;
    std::size_t context = 2;
    std::vector<std::size_t> hidden_dims = {16, 32, 64, 128};

    // Training
    std::size_t batch_size = 16;
    std::uint64_t reptile_interval = 50;
    double reptile_rate = 0.1;
    double peak_lr = 1e-3;
    double min_lr = 1e-4;
    std::uint64_t warmup_steps = 40;
    std::size_t eval_interval = 50;
    std::size_t validation_rows = 128;

    // Buffer
    std::uint64_t buffer_capacity_tokens = 0;  // 0 = size to hold the whole stream
    std::size_t buffer_file_size = 1024;
    std::size_t buffer_queue_capacity = 4;
    std::size_t buffer_dtype_bytes = 4;
    std::size_t metadata_write_interval = 1;
    bool async_prefetch = false;

    // Matrix
    std::vector<std::string> arms = {"sequential", "replay25", "replay50", "reptile",
                                     "mer25",      "mer50",    "joint"};
    std::vector<std::uint64_t> seeds = {1, 2, 3};

    // Output
    std::filesystem::path output_dir = "runs/default";

    // Uncalibrated constant for the compute-per-token axis (cost of one
    // forward+backward token per parameter).
    double flops_per_token_constant = 6.0;

    void validate() const;  // throws ConfigError listing every bad field
};

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

struct RunOptions {
    std::optional<std::string> arm_filter;
    std::optional<std::uint64_t> seed_filter;
    std::optional<std::filesystem::path> out_override;
    bool resume = false;
    bool report_only = false;
};

struct RunSummary {
    std::size_t cells_total = 0;
    std::size_t cells_trained = 0;
    std::size_t cells_skipped = 0;
};

/// Report row: per-task retained losses and the aggregate stability /
/// plasticity numbers, mean +/- std over seeds.
struct ReportRow {
    std::string arm_label;
    std::size_t hidden_dim = 0;
    std::uint64_t model_size = 0;
    std::size_t num_seeds = 0;
    std::vector<double> task_retained;      // mean over seeds, per task
    std::vector<double> task_retained_std;
    double avg_retained = 0.0;
    double avg_retained_std = 0.0;
    double avg_learned = 0.0;
    double avg_learned_std = 0.0;
    double avg_forgetting = 0.0;  // = avg_retained - avg_learned per run
    double avg_forgetting_std = 0.0;
};

/// Run every (seed x arm x size) cell that is not yet marked complete,
/// append its rows to metrics.csv, write final checkpoints, then regenerate
/// report.txt / scaling_fits.csv / plots from the CSV.
RunSummary run_experiment(const std::filesystem::path& config_path, const RunOptions& options = {});

/// Rebuild the report artifacts from an existing metrics.csv. Returns the
/// rows in report order. Throws NothingToReportError on an empty directory.
std::vector<ReportRow> emit_report(const std::filesystem::path& metrics_dir);

/// metrics.csv schema, exactly this header.
extern const char* kMetricsCsvHeader;

/// A parsed metrics.csv row.
struct MetricsCsvRow {
    std::uint64_t seed = 0;
    std::string arm;
    std::uint64_t model_size = 0;
    double alpha = 0.0;
    std::uint64_t reptile_k = 0;
    double reptile_eps = 0.0;
    std::uint64_t update_step = 0;
    int eval_task = 0;
    int train_task = 0;
    double val_loss_nats = 0.0;
};

std::vector<MetricsCsvRow> read_metrics_csv(const std::filesystem::path& csv_path);

/// Group rows of one (seed, arm, size) cell into a MetricsLog; boundaries are
/// recovered from the train_task column (final step for joint cells).
MetricsLog log_from_rows(const std::vector<MetricsCsvRow>& rows);

}  // namespace cpt
