#include "cpt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cpt/errors.hpp"
#include "cpt/metrics.hpp"
#include "cpt/rng.hpp"
#include "cpt/svg_plot.hpp"

namespace cpt {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace

const char* kMetricsCsvHeader =
    "seed,arm,model_size,alpha,reptile_k,reptile_eps,update_step,eval_task,train_task,"
    "val_loss_nats";

const std::vector<ArmSpec>& known_arms() {
    static const std::vector<ArmSpec> arms = {
        {"sequential", "No Replay", TrainMode::sequential, 0.0},
        {"replay25", "25% Replay", TrainMode::replay, 0.25},
        {"replay50", "50% Replay", TrainMode::replay, 0.5},
        {"reptile", "Reptile Only", TrainMode::reptile, 0.0},
        {"mer25", "25% Replay + Reptile", TrainMode::mer, 0.25},
        {"mer50", "50% Replay + Reptile", TrainMode::mer, 0.5},
        {"joint", "Joint", TrainMode::joint, 0.0},
    };
    return arms;
}

const ArmSpec& arm_by_name(const std::string& name) {
    for (const ArmSpec& arm : known_arms()) {
        if (arm.name == name) {
            return arm;
        }
    }
    throw std::invalid_argument("unknown arm '" + name + "'");
}

void RunConfig::validate() const {
    std::vector<std::string> bad;
    if (vocab_size < 2) bad.push_back("vocab_size (need >= 2)");
    if (seq_len < 2) bad.push_back("seq_len (need >= 2)");
    if (num_tasks < 1) bad.push_back("num_tasks (need >= 1)");
    if (tokens_per_task < seq_len) bad.push_back("tokens_per_task (need >= seq_len)");
    if (!(concentration > 0.0)) bad.push_back("concentration (need > 0)");
    if (embed_dim < 1) bad.push_back("embed_dim (need >= 1)");
    if (context < 1 || context >= seq_len) bad.push_back("context (need 1 <= context < seq_len)");
    if (hidden_dims.empty()) bad.push_back("hidden_dims (need at least one size)");
    for (std::size_t h : hidden_dims) {
        if (h < 1) {
            bad.push_back("hidden_dims (entries must be >= 1)");
            break;
        }
    }
    if (batch_size < 1) bad.push_back("batch_size (need >= 1)");
    if (reptile_interval < 1) bad.push_back("reptile_interval (need >= 1)");
    if (reptile_rate < 0.0 || reptile_rate > 1.0) bad.push_back("reptile_rate (need in [0, 1])");
    if (!(peak_lr > 0.0)) bad.push_back("peak_lr (need > 0)");
    if (min_lr < 0.0 || min_lr > peak_lr) bad.push_back("min_lr (need 0 <= min_lr <= peak_lr)");
    if (eval_interval < 1) bad.push_back("eval_interval (need >= 1)");
    if (validation_rows < 1) bad.push_back("validation_rows (need >= 1)");
    if (buffer_file_size < batch_size) {
        bad.push_back("buffer_file_size (need >= batch_size)");
    }
    if (buffer_queue_capacity < 1) bad.push_back("buffer_queue_capacity (need >= 1)");
    if (buffer_dtype_bytes != 2 && buffer_dtype_bytes != 4) {
        bad.push_back("buffer_dtype_bytes (need 2 or 4)");
    }
    if (buffer_dtype_bytes == 2 && vocab_size > 0x10000) {
        bad.push_back("buffer_dtype_bytes (2-byte storage needs vocab_size <= 65536)");
    }
    if (metadata_write_interval < 1) bad.push_back("metadata_write_interval (need >= 1)");
    if (arms.empty()) bad.push_back("arms (need at least one)");
    for (const std::string& a : arms) {
        bool found = false;
        for (const ArmSpec& spec : known_arms()) {
            found = found || spec.name == a;
        }
        if (!found) {
            bad.push_back("arms (unknown arm '" + a + "')");
        }
    }
    if (seeds.empty()) bad.push_back("seeds (need at least one)");
    if (output_dir.empty()) bad.push_back("output_dir (need a path)");
    if (!(flops_per_token_constant > 0.0)) bad.push_back("flops_per_token_constant (need > 0)");

    if (!bad.empty()) {
        std::string msg = "invalid config fields: ";
        for (std::size_t i = 0; i < bad.size(); ++i) {
            msg += (i ? "; " : "") + bad[i];
        }
        throw ConfigError(msg);
    }
}

namespace {

template <class T>
void read_field(const json& j, const char* name, T& out) {
    if (j.contains(name)) {
        try {
            out = j.at(name).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("invalid config fields: ") + name + " (wrong type)");
        }
    }
}

}  // namespace

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) {
        throw ConfigError("config root must be a JSON object");
    }

    static const std::set<std::string> kKnown = {
        "vocab_size",       "seq_len",          "num_tasks",
        "tokens_per_task",  "concentration",    "task_seed",
        "embed_dim",        "context",          "hidden_dims",
        "batch_size",       "reptile_interval", "reptile_rate",
        "peak_lr",          "min_lr",           "warmup_steps",
        "eval_interval",    "validation_rows",  "buffer_capacity_tokens",
        "buffer_file_size", "buffer_queue_capacity", "buffer_dtype_bytes",
        "metadata_write_interval", "async_prefetch", "arms",
        "seeds",            "output_dir",       "flops_per_token_constant"};
    std::vector<std::string> unknown;
    for (const auto& [key, value] : j.items()) {
        if (!kKnown.count(key)) {
            unknown.push_back(key);
        }
    }
    if (!unknown.empty()) {
        std::string msg = "invalid config fields: ";
        for (std::size_t i = 0; i < unknown.size(); ++i) {
            msg += (i ? "; " : "") + unknown[i] + " (unknown field)";
        }
        throw ConfigError(msg);
    }

    RunConfig c;
    read_field(j, "vocab_size", c.vocab_size);
    read_field(j, "seq_len", c.seq_len);
    read_field(j, "num_tasks", c.num_tasks);
    read_field(j, "tokens_per_task", c.tokens_per_task);
    read_field(j, "concentration", c.concentration);
    read_field(j, "task_seed", c.task_seed);
    read_field(j, "embed_dim", c.embed_dim);
    read_field(j, "context", c.context);
    read_field(j, "hidden_dims", c.hidden_dims);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "reptile_interval", c.reptile_interval);
    read_field(j, "reptile_rate", c.reptile_rate);
    read_field(j, "peak_lr", c.peak_lr);
    read_field(j, "min_lr", c.min_lr);
    read_field(j, "warmup_steps", c.warmup_steps);
    read_field(j, "eval_interval", c.eval_interval);
    read_field(j, "validation_rows", c.validation_rows);
    read_field(j, "buffer_capacity_tokens", c.buffer_capacity_tokens);
    read_field(j, "buffer_file_size", c.buffer_file_size);
    read_field(j, "buffer_queue_capacity", c.buffer_queue_capacity);
    read_field(j, "buffer_dtype_bytes", c.buffer_dtype_bytes);
    read_field(j, "metadata_write_interval", c.metadata_write_interval);
    read_field(j, "async_prefetch", c.async_prefetch);
    read_field(j, "arms", c.arms);
    read_field(j, "seeds", c.seeds);
    std::string out_dir;
    read_field(j, "output_dir", out_dir);
    if (!out_dir.empty()) {
        c.output_dir = out_dir;
    }
    read_field(j, "flops_per_token_constant", c.flops_per_token_constant);
    c.validate();
    return c;
}

void save_run_config(const RunConfig& c, const fs::path& path) {
    json j;
    j["vocab_size"] = c.vocab_size;
    j["seq_len"] = c.seq_len;
    j["num_tasks"] = c.num_tasks;
    j["tokens_per_task"] = c.tokens_per_task;
    j["concentration"] = c.concentration;
    j["task_seed"] = c.task_seed;
    j["embed_dim"] = c.embed_dim;
    j["context"] = c.context;
    j["hidden_dims"] = c.hidden_dims;
    j["batch_size"] = c.batch_size;
    j["reptile_interval"] = c.reptile_interval;
    j["reptile_rate"] = c.reptile_rate;
    j["peak_lr"] = c.peak_lr;
    j["min_lr"] = c.min_lr;
    j["warmup_steps"] = c.warmup_steps;
    j["eval_interval"] = c.eval_interval;
    j["validation_rows"] = c.validation_rows;
    j["buffer_capacity_tokens"] = c.buffer_capacity_tokens;
    j["buffer_file_size"] = c.buffer_file_size;
    j["buffer_queue_capacity"] = c.buffer_queue_capacity;
    j["buffer_dtype_bytes"] = c.buffer_dtype_bytes;
    j["metadata_write_interval"] = c.metadata_write_interval;
    j["async_prefetch"] = c.async_prefetch;
    j["arms"] = c.arms;
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir.string();
    j["flops_per_token_constant"] = c.flops_per_token_constant;
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

namespace {

TaskStream build_stream(const RunConfig& rc, std::uint64_t cell_seed) {
    TaskStream stream = make_stream(rc.task_seed, rc.vocab_size, rc.concentration, rc.num_tasks,
                                    rc.tokens_per_task, rc.seq_len);
    stream.seed = cell_seed;  // sample draws vary per seed; tasks stay shared
    return stream;
}

std::uint64_t total_update_steps(const TaskStream& stream, const ArmSpec& arm,
                                 std::size_t batch_size, std::size_t incoming_rows) {
    if (arm.mode == TrainMode::joint) {
        const std::size_t total = stream.total_samples();
        return (total + batch_size - 1) / batch_size;
    }
    std::uint64_t steps = 0;
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        const std::size_t samples = stream.task_samples(t);
        steps += (samples + incoming_rows - 1) / incoming_rows;
    }
    return steps;
}

TrainConfig cell_train_config(const RunConfig& rc, const ArmSpec& arm, const TaskStream& stream,
                              std::uint64_t seed) {
    TrainConfig tc;
    tc.batch_size = rc.batch_size;
    tc.replay_ratio = arm.alpha;
    tc.reptile_interval = rc.reptile_interval;
    const bool uses_reptile = arm.mode == TrainMode::reptile || arm.mode == TrainMode::mer;
    tc.reptile_rate = uses_reptile ? rc.reptile_rate : 0.0;
    tc.mode = arm.mode;
    tc.seed = seed;
    tc.eval_interval = rc.eval_interval;
    tc.async_prefetch = rc.async_prefetch;

    const std::uint64_t total = total_update_steps(stream, arm, tc.batch_size, tc.incoming_rows());
    tc.schedule.peak_lr = rc.peak_lr;
    tc.schedule.min_lr = rc.min_lr;
    tc.schedule.total_steps = total;
    tc.schedule.warmup_steps = std::min(rc.warmup_steps, total);
    return tc;
}

BufferConfig cell_buffer_config(const RunConfig& rc, const fs::path& cell_dir,
                                const TaskStream& stream, std::uint64_t seed) {
    BufferConfig bc;
    bc.file_size = rc.buffer_file_size;
    bc.seq_len = rc.seq_len;
    if (rc.buffer_capacity_tokens > 0) {
        bc.capacity_tokens = rc.buffer_capacity_tokens;
    } else {
        // Size the store to hold every incoming sample of the run.
        const std::uint64_t files =
            (stream.total_samples() + rc.buffer_file_size - 1) / rc.buffer_file_size;
        bc.capacity_tokens = std::max<std::uint64_t>(files, 1) * rc.buffer_file_size * rc.seq_len;
    }
    bc.data_dir = cell_dir / "buffer";
    bc.queue_capacity = rc.buffer_queue_capacity;
    bc.dtype_bytes = rc.buffer_dtype_bytes;
    bc.metadata_write_interval = rc.metadata_write_interval;
    bc.seed = rng::derive_seed(seed, rng::Stream::buffer, 97);
    return bc;
}

std::string cell_name(const ArmSpec& arm, std::size_t hidden, std::uint64_t seed) {
    return arm.name + "_h" + std::to_string(hidden) + "_s" + std::to_string(seed);
}

struct CellRows {
    std::vector<std::string> lines;
};

CellRows run_cell(const RunConfig& rc, const ArmSpec& arm, std::size_t hidden,
                  std::uint64_t seed, const fs::path& cell_dir) {
    // Start from a clean slate so a crashed attempt cannot leak state.
    fs::remove_all(cell_dir);
    fs::create_directories(cell_dir);

    TaskStream stream = build_stream(rc, seed);
    ModelDims dims{rc.vocab_size, rc.embed_dim, rc.context, hidden};
    const ModelParams initial =
        init_params(dims, rng::derive_seed(seed, rng::Stream::engine, hidden));

    TrainConfig tc = cell_train_config(rc, arm, stream, seed);
    tc.diagnostic_dir = cell_dir / "diagnostics";

    EvalSuite eval;
    eval.task_validation.reserve(stream.tasks.size());
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        eval.task_validation.push_back(validation_set(stream, t, rc.validation_rows));
    }

    std::unique_ptr<ReplayBuffer> buffer;
    const bool wants_buffer = arm.alpha > 0.0 || arm.mode == TrainMode::mer;
    if (wants_buffer) {
        buffer = std::make_unique<ReplayBuffer>(cell_buffer_config(rc, cell_dir, stream, seed));
    }

    TrainResult result = arm.mode == TrainMode::joint
                             ? joint_train(stream, initial, tc, eval)
                             : train(stream, initial, tc, buffer.get(), eval);

    const fs::path step_dir =
        cell_dir / ("step_" + std::to_string(result.counters.update_steps));
    fs::create_directories(step_dir);
    save_params(result.params, step_dir / "params.bin");
    save_adamw_state(result.opt_state, step_dir / "optim.bin");

    CellRows rows;
    rows.lines.reserve(result.log.records.size());
    for (const MetricsRecord& r : result.log.records) {
        std::ostringstream line;
        line << seed << ',' << arm.name << ',' << dims.param_count() << ','
             << fmt_double(arm.alpha) << ',' << (tc.reptile_rate > 0.0 ? tc.reptile_interval : 0)
             << ',' << fmt_double(tc.reptile_rate) << ',' << r.update_step << ',' << r.eval_task
             << ',' << r.train_task << ',' << fmt_double(r.val_loss);
        rows.lines.push_back(line.str());
    }
    return rows;
}

void append_rows(const fs::path& csv_path, const CellRows& rows) {
    const bool fresh = !fs::exists(csv_path);
    std::ofstream out(csv_path, std::ios::app);
    if (!out) {
        throw std::runtime_error("cannot append to " + csv_path.string());
    }
    if (fresh) {
        out << kMetricsCsvHeader << '\n';
    }
    for (const std::string& line : rows.lines) {
        out << line << '\n';
    }
}

json task_to_json(const TaskSpec& task) {
    json j;
    j["task_id"] = task.task_id;
    j["vocab_size"] = task.vocab_size;
    j["token_budget"] = task.token_budget;
    j["transition"] = task.transition;
    j["initial"] = task.initial;
    return j;
}

}  // namespace

RunSummary run_experiment(const fs::path& config_path, const RunOptions& options) {
    RunConfig rc = load_run_config(config_path);
    if (options.out_override) {
        rc.output_dir = *options.out_override;
    }
    fs::create_directories(rc.output_dir);

    if (!options.report_only) {
        save_run_config(rc, rc.output_dir / "run_config.json");
        // Task specs, for reproducibility of the exact languages used.
        const TaskStream stream = build_stream(rc, rc.seeds.front());
        json tasks = json::array();
        for (const TaskSpec& t : stream.tasks) {
            tasks.push_back(task_to_json(t));
        }
        std::ofstream tasks_out(rc.output_dir / "tasks.json", std::ios::trunc);
        tasks_out << tasks.dump(2) << '\n';
    }

    RunSummary summary;
    const fs::path csv_path = rc.output_dir / "metrics.csv";

    if (!options.report_only) {
        for (std::size_t hidden : rc.hidden_dims) {
            for (const std::string& arm_name : rc.arms) {
                if (options.arm_filter && *options.arm_filter != arm_name) {
                    continue;
                }
                const ArmSpec& arm = arm_by_name(arm_name);
                for (std::uint64_t seed : rc.seeds) {
                    if (options.seed_filter && *options.seed_filter != seed) {
                        continue;
                    }
                    summary.cells_total += 1;
                    const fs::path cell_dir = rc.output_dir / cell_name(arm, hidden, seed);
                    const fs::path marker = cell_dir / "COMPLETE";
                    if (fs::exists(marker)) {
                        summary.cells_skipped += 1;
                        continue;
                    }
                    const CellRows rows = run_cell(rc, arm, hidden, seed, cell_dir);
                    append_rows(csv_path, rows);
                    std::ofstream(marker) << "ok\n";
                    summary.cells_trained += 1;
                }
            }
        }
    }

    emit_report(rc.output_dir);
    return summary;
}

std::vector<MetricsCsvRow> read_metrics_csv(const fs::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) {
        throw NothingToReportError("no metrics.csv at " + csv_path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw NothingToReportError("metrics.csv is empty");
    }
    if (line != kMetricsCsvHeader) {
        throw ParseError("header", "metrics.csv header does not match the schema");
    }
    std::vector<MetricsCsvRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        line_no += 1;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) {
            cols.push_back(col);
        }
        if (cols.size() != 10) {
            throw ParseError("row", "line " + std::to_string(line_no) + " has " +
                                        std::to_string(cols.size()) + " columns, want 10");
        }
        try {
            MetricsCsvRow r;
            r.seed = std::stoull(cols[0]);
            r.arm = cols[1];
            r.model_size = std::stoull(cols[2]);
            r.alpha = std::stod(cols[3]);
            r.reptile_k = std::stoull(cols[4]);
            r.reptile_eps = std::stod(cols[5]);
            r.update_step = std::stoull(cols[6]);
            r.eval_task = std::stoi(cols[7]);
            r.train_task = std::stoi(cols[8]);
            r.val_loss_nats = std::stod(cols[9]);
            rows.push_back(std::move(r));
        } catch (const std::exception&) {
            throw ParseError("row", "line " + std::to_string(line_no) + " is not parseable");
        }
    }
    return rows;
}

MetricsLog log_from_rows(const std::vector<MetricsCsvRow>& rows) {
    MetricsLog log;
    int max_task = -1;
    std::uint64_t final_step = 0;
    bool joint = false;
    for (const MetricsCsvRow& r : rows) {
        log.records.push_back({r.update_step, r.eval_task, r.val_loss_nats, r.train_task});
        max_task = std::max(max_task, r.eval_task);
        final_step = std::max(final_step, r.update_step);
        joint = joint || r.train_task < 0;
    }
    if (max_task < 0) {
        throw IncompleteLogError("no rows for this cell");
    }
    std::sort(log.records.begin(), log.records.end(),
              [](const MetricsRecord& a, const MetricsRecord& b) {
                  return a.update_step < b.update_step ||
                         (a.update_step == b.update_step && a.eval_task < b.eval_task);
              });
    log.task_boundaries.assign(static_cast<std::size_t>(max_task) + 1, final_step);
    if (!joint) {
        for (int t = 0; t <= max_task; ++t) {
            std::uint64_t boundary = 0;
            for (const MetricsCsvRow& r : rows) {
                if (r.train_task == t) {
                    boundary = std::max(boundary, r.update_step);
                }
            }
            log.task_boundaries[static_cast<std::size_t>(t)] = boundary;
        }
    }
    return log;
}

namespace {

struct CellKey {
    std::string arm;
    std::uint64_t model_size;
    std::uint64_t seed;
    bool operator<(const CellKey& o) const {
        return std::tie(arm, model_size, seed) < std::tie(o.arm, o.model_size, o.seed);
    }
};

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) {
        return 0.0;
    }
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::size_t hidden_for_model_size(const RunConfig& rc, std::uint64_t model_size) {
    for (std::size_t h : rc.hidden_dims) {
        ModelDims dims{rc.vocab_size, rc.embed_dim, rc.context, h};
        if (dims.param_count() == model_size) {
            return h;
        }
    }
    return 0;
}

}  // namespace

std::vector<ReportRow> emit_report(const fs::path& metrics_dir) {
    const fs::path csv_path = metrics_dir / "metrics.csv";
    const std::vector<MetricsCsvRow> all_rows = read_metrics_csv(csv_path);
    if (all_rows.empty()) {
        throw NothingToReportError("metrics.csv has no data rows");
    }

    RunConfig rc;  // defaults; refined from the resolved config when present
    const fs::path cfg_path = metrics_dir / "run_config.json";
    if (fs::exists(cfg_path)) {
        rc = load_run_config(cfg_path);
    }

    std::map<CellKey, std::vector<MetricsCsvRow>> cells;
    for (const MetricsCsvRow& r : all_rows) {
        cells[{r.arm, r.model_size, r.seed}].push_back(r);
    }

    // Per-cell statistics.
    struct CellStats {
        std::vector<double> task_retained;
        double retained = 0.0;
        double learned = 0.0;
        double forgetting = 0.0;
        double alpha = 0.0;
    };
    std::map<CellKey, CellStats> stats;
    std::set<std::uint64_t> sizes;
    for (const auto& [key, rows] : cells) {
        const MetricsLog log = log_from_rows(rows);
        CellStats cs;
        const std::uint64_t last = log.final_step();
        for (int t = 0; t < log.num_tasks(); ++t) {
            cs.task_retained.push_back(log.loss_at(t, last));
        }
        cs.retained = retained_loss(log);
        cs.learned = learned_loss(log);
        cs.forgetting = mean_end_of_run_forgetting(log);
        cs.alpha = rows.front().alpha;
        stats[key] = cs;
        sizes.insert(key.model_size);
    }

    // Aggregate over seeds in fixed arm order.
    std::vector<ReportRow> report_rows;
    for (std::uint64_t size : sizes) {
        for (const ArmSpec& arm : known_arms()) {
            std::vector<double> retained, learned, forgetting;
            std::vector<std::vector<double>> per_task;
            std::size_t n_seeds = 0;
            for (const auto& [key, cs] : stats) {
                if (key.arm != arm.name || key.model_size != size) {
                    continue;
                }
                n_seeds += 1;
                retained.push_back(cs.retained);
                learned.push_back(cs.learned);
                forgetting.push_back(cs.forgetting);
                per_task.resize(std::max(per_task.size(), cs.task_retained.size()));
                for (std::size_t t = 0; t < cs.task_retained.size(); ++t) {
                    per_task[t].push_back(cs.task_retained[t]);
                }
            }
            if (n_seeds == 0) {
                continue;
            }
            ReportRow row;
            row.arm_label = arm.label;
            row.model_size = size;
            row.hidden_dim = hidden_for_model_size(rc, size);
            row.num_seeds = n_seeds;
            for (const auto& t : per_task) {
                row.task_retained.push_back(mean(t));
                row.task_retained_std.push_back(sample_std(t));
            }
            row.avg_retained = mean(retained);
            row.avg_retained_std = sample_std(retained);
            row.avg_learned = mean(learned);
            row.avg_learned_std = sample_std(learned);
            row.avg_forgetting = mean(forgetting);
            row.avg_forgetting_std = sample_std(forgetting);
            report_rows.push_back(std::move(row));
        }
    }

    // report.txt
    {
        std::ofstream out(metrics_dir / "report.txt", std::ios::trunc);
        out << "Continual pre-training report (validation losses in nats; mean +/- std over "
               "seeds)\n";
        out << "Forgetting = retained - learned, measured at the end of the run.\n\n";
        for (std::uint64_t size : sizes) {
            std::size_t num_tasks = 0;
            for (const ReportRow& row : report_rows) {
                if (row.model_size == size) {
                    num_tasks = std::max(num_tasks, row.task_retained.size());
                }
            }
            out << "== model_size=" << size << " params";
            const std::size_t h = hidden_for_model_size(rc, size);
            if (h != 0) {
                out << " (hidden_dim=" << h << ")";
            }
            out << " ==\n";
            out << "arm, ";
            for (std::size_t t = 0; t < num_tasks; ++t) {
                out << "task" << t << " retained, ";
            }
            out << "AVG retained, AVG learned, AVG forgetting, seeds\n";
            for (const ReportRow& row : report_rows) {
                if (row.model_size != size) {
                    continue;
                }
                out << row.arm_label << ", ";
                for (std::size_t t = 0; t < num_tasks; ++t) {
                    if (t < row.task_retained.size()) {
                        out << fmt_fixed(row.task_retained[t]) << "+/-"
                            << fmt_fixed(row.task_retained_std[t]) << ", ";
                    } else {
                        out << "-, ";
                    }
                }
                out << fmt_fixed(row.avg_retained) << "+/-" << fmt_fixed(row.avg_retained_std)
                    << ", " << fmt_fixed(row.avg_learned) << "+/-"
                    << fmt_fixed(row.avg_learned_std) << ", " << fmt_fixed(row.avg_forgetting)
                    << "+/-" << fmt_fixed(row.avg_forgetting_std) << ", " << row.num_seeds
                    << "\n";
            }
            out << "\n";
        }
        out << "Compute-per-token axis uses an uncalibrated constant of "
            << rc.flops_per_token_constant << " * params per token, scaled by 1/(1-alpha).\n";
    }

    // scaling_fits.csv: power-law fits across >= 4 model sizes, per arm.
    {
        std::ofstream out(metrics_dir / "scaling_fits.csv", std::ios::trunc);
        out << "arm,axis,metric,a,b,c,rmse\n";
        for (const ArmSpec& arm : known_arms()) {
            std::vector<double> xs_size, xs_compute, retained_y, learned_y;
            for (std::uint64_t size : sizes) {
                std::vector<double> retained, learned;
                double alpha = 0.0;
                for (const auto& [key, cs] : stats) {
                    if (key.arm == arm.name && key.model_size == size) {
                        retained.push_back(cs.retained);
                        learned.push_back(cs.learned);
                        alpha = cs.alpha;
                    }
                }
                if (retained.empty()) {
                    continue;
                }
                xs_size.push_back(static_cast<double>(size));
                xs_compute.push_back(rc.flops_per_token_constant * static_cast<double>(size) /
                                     (1.0 - alpha));
                retained_y.push_back(mean(retained));
                learned_y.push_back(mean(learned));
            }
            if (xs_size.size() < 4) {
                continue;
            }
            const struct {
                const char* axis;
                const std::vector<double>* xs;
            } axes[] = {{"model_size", &xs_size}, {"compute_per_token", &xs_compute}};
            const struct {
                const char* metric;
                const std::vector<double>* ys;
            } metrics_list[] = {{"retained", &retained_y}, {"learned", &learned_y}};
            for (const auto& ax : axes) {
                for (const auto& me : metrics_list) {
                    const PowerLawFit fit = fit_power_law(*ax.xs, *me.ys);
                    out << arm.name << ',' << ax.axis << ',' << me.metric << ','
                        << fmt_double(fit.a) << ',' << fmt_double(fit.b) << ','
                        << fmt_double(fit.c) << ',' << fmt_double(fit.residual) << '\n';
                }
            }
        }
    }

    // Plots.
    {
        const fs::path plot_dir = metrics_dir / "plots";
        fs::create_directories(plot_dir);

        for (std::uint64_t size : sizes) {
            SvgPlot plot("Validation loss across tasks, model_size=" + std::to_string(size),
                         "update step", "mean validation loss (nats)");
            for (const ArmSpec& arm : known_arms()) {
                // First seed with data for this (arm, size).
                const std::vector<MetricsCsvRow>* cell = nullptr;
                for (const auto& [key, rows] : cells) {
                    if (key.arm == arm.name && key.model_size == size) {
                        cell = &rows;
                        break;
                    }
                }
                if (!cell) {
                    continue;
                }
                std::map<std::uint64_t, std::pair<double, int>> by_step;
                for (const MetricsCsvRow& r : *cell) {
                    auto& acc = by_step[r.update_step];
                    acc.first += r.val_loss_nats;
                    acc.second += 1;
                }
                std::vector<std::pair<double, double>> points;
                for (const auto& [step, acc] : by_step) {
                    points.emplace_back(static_cast<double>(step), acc.first / acc.second);
                }
                plot.add_line(arm.label, std::move(points));
            }
            plot.write(plot_dir / ("val_loss_size" + std::to_string(size) + ".svg"));
        }

        for (const char* metric : {"retained", "learned"}) {
            SvgPlot plot(std::string(metric) + " loss vs compute per token",
                         "compute per token (uncalibrated FLOPs)",
                         std::string("mean ") + metric + " loss (nats)");
            plot.set_log_x(true);
            for (const ArmSpec& arm : known_arms()) {
                std::vector<std::pair<double, double>> points;
                for (std::uint64_t size : sizes) {
                    std::vector<double> vals;
                    double alpha = 0.0;
                    for (const auto& [key, cs] : stats) {
                        if (key.arm == arm.name && key.model_size == size) {
                            vals.push_back(std::string(metric) == "retained" ? cs.retained
                                                                             : cs.learned);
                            alpha = cs.alpha;
                        }
                    }
                    if (!vals.empty()) {
                        points.emplace_back(rc.flops_per_token_constant *
                                                static_cast<double>(size) / (1.0 - alpha),
                                            mean(vals));
                    }
                }
                if (!points.empty()) {
                    plot.add_points(arm.label, std::move(points));
                }
            }
            plot.write(plot_dir / ("scaling_" + std::string(metric) + ".svg"));
        }
    }

    return report_rows;
}

}  // namespace cpt
