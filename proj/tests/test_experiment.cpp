#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cpt/errors.hpp"
#include "cpt/experiment.hpp"

using namespace cpt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("cpt_experiment_tests_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// A deliberately tiny matrix so a full run takes a couple of seconds.
fs::path write_tiny_config(const fs::path& dir, const std::string& extra = "") {
    const fs::path path = dir / "config.json";
    std::ofstream out(path);
    out << R"({
        "vocab_size": 16, "seq_len": 32, "context": 2, "embed_dim": 8,
        "hidden_dims": [16],
        "num_tasks": 2, "tokens_per_task": 6400, "concentration": 0.2,
        "batch_size": 8, "reptile_interval": 10, "reptile_rate": 0.1,
        "peak_lr": 0.003, "min_lr": 0.0003, "warmup_steps": 5,
        "eval_interval": 10, "validation_rows": 32,
        "buffer_file_size": 256,
        "arms": ["sequential", "replay50", "joint"],
        "seeds": [1],
        "output_dir": ")" << (dir / "out").string() << "\"" << extra << "\n}\n";
    return path;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("an empty config parses to validated defaults") {
    const fs::path dir = fresh_dir("defaults");
    const fs::path path = dir / "empty.json";
    std::ofstream(path) << "{}\n";
    const RunConfig c = load_run_config(path);
    CHECK(c.vocab_size == 32);
    CHECK(c.arms.size() == 7);
    CHECK(c.hidden_dims.size() == 4);
    fs::remove_all(dir);
}

TEST_CASE("unknown and invalid fields are reported by name") {
    const fs::path dir = fresh_dir("badcfg");
    const fs::path path = dir / "bad.json";
    std::ofstream(path) << R"({"vocab_sz": 32})";
    try {
        load_run_config(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("vocab_sz") != std::string::npos);
    }

    std::ofstream(path, std::ios::trunc)
        << R"({"vocab_size": 1, "seeds": [], "arms": ["warp"]})";
    try {
        load_run_config(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("vocab_size") != std::string::npos);
        CHECK(msg.find("seeds") != std::string::npos);
        CHECK(msg.find("warp") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("a full tiny run produces every artifact and is idempotent") {
    const fs::path dir = fresh_dir("run");
    const fs::path config = write_tiny_config(dir);

    const RunSummary first = run_experiment(config);
    CHECK(first.cells_total == 3);
    CHECK(first.cells_trained == 3);
    CHECK(first.cells_skipped == 0);

    const fs::path out = dir / "out";
    CHECK(fs::exists(out / "metrics.csv"));
    CHECK(fs::exists(out / "report.txt"));
    CHECK(fs::exists(out / "scaling_fits.csv"));
    CHECK(fs::exists(out / "run_config.json"));
    CHECK(fs::exists(out / "tasks.json"));
    CHECK(fs::exists(out / "plots"));

    // Checkpoints for the sequential cell: 400 samples / batch 8 = 50 steps.
    CHECK(fs::exists(out / "sequential_h16_s1" / "step_50" / "params.bin"));
    CHECK(fs::exists(out / "sequential_h16_s1" / "step_50" / "optim.bin"));
    CHECK(fs::exists(out / "replay50_h16_s1" / "buffer" / "metadata.json"));

    // Eval cadence: sequential has 50 update steps, eval every 10, plus the
    // step-0 baseline and boundary evals; 2 tasks per eval round.
    const auto rows = read_metrics_csv(out / "metrics.csv");
    std::size_t sequential_rows = 0;
    for (const auto& r : rows) {
        if (r.arm == "sequential") {
            ++sequential_rows;
        }
    }
    CHECK(sequential_rows >= (50 / 10) * 2);

    // Rerun: nothing retrains, the report regenerates.
    fs::remove(out / "report.txt");
    const RunSummary second = run_experiment(config);
    CHECK(second.cells_trained == 0);
    CHECK(second.cells_skipped == 3);
    CHECK(fs::exists(out / "report.txt"));
    fs::remove_all(dir);
}

TEST_CASE("identical config and seed reproduce metrics.csv byte for byte") {
    const fs::path dir_a = fresh_dir("det_a");
    const fs::path dir_b = fresh_dir("det_b");
    run_experiment(write_tiny_config(dir_a));
    run_experiment(write_tiny_config(dir_b));
    CHECK(slurp(dir_a / "out" / "metrics.csv") == slurp(dir_b / "out" / "metrics.csv"));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("arm and seed filters restrict the matrix; later runs fill it in") {
    const fs::path dir = fresh_dir("filters");
    const fs::path config = write_tiny_config(dir);

    RunOptions only_seq;
    only_seq.arm_filter = "sequential";
    const RunSummary partial = run_experiment(config, only_seq);
    CHECK(partial.cells_trained == 1);

    const RunSummary rest = run_experiment(config);
    CHECK(rest.cells_trained == 2);
    CHECK(rest.cells_skipped == 1);
    fs::remove_all(dir);
}

TEST_CASE("the report rows satisfy the metric identities and the arm order") {
    const fs::path dir = fresh_dir("report");
    run_experiment(write_tiny_config(dir));
    const auto rows = emit_report(dir / "out");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].arm_label == "No Replay");
    CHECK(rows[1].arm_label == "50% Replay");
    CHECK(rows[2].arm_label == "Joint");
    for (const ReportRow& row : rows) {
        CHECK(std::abs(row.avg_forgetting - (row.avg_retained - row.avg_learned)) < 1e-9);
        double task_mean = 0.0;
        for (double t : row.task_retained) {
            task_mean += t;
        }
        task_mean /= static_cast<double>(row.task_retained.size());
        CHECK(std::abs(task_mean - row.avg_retained) < 1e-9);
        CHECK(row.num_seeds == 1);
        CHECK(row.hidden_dim == 16);
    }
    fs::remove_all(dir);
}

TEST_CASE("reporting an empty directory fails loudly") {
    const fs::path dir = fresh_dir("empty_report");
    CHECK_THROWS_AS(emit_report(dir), NothingToReportError);
    fs::remove_all(dir);
}

TEST_CASE("metrics.csv round-trips through the reader") {
    const fs::path dir = fresh_dir("csv");
    const fs::path csv = dir / "metrics.csv";
    std::ofstream(csv) << kMetricsCsvHeader << "\n"
                       << "1,replay50,4242,0.5,50,0.1,10,0,1,2.5\n"
                       << "1,replay50,4242,0.5,50,0.1,20,0,1,2.75\n";
    const auto rows = read_metrics_csv(csv);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].arm == "replay50");
    CHECK(rows[0].alpha == 0.5);
    CHECK(rows[1].val_loss_nats == 2.75);

    std::ofstream(csv, std::ios::app) << "1,replay50,4242,0.5,50,0.1,30,0,1\n";  // 9 columns
    CHECK_THROWS_AS(read_metrics_csv(csv), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("boundaries are recovered from the train_task column") {
    std::vector<MetricsCsvRow> rows;
    auto push = [&](std::uint64_t step, int eval_task, int train_task, double v) {
        MetricsCsvRow r;
        r.update_step = step;
        r.eval_task = eval_task;
        r.train_task = train_task;
        r.val_loss_nats = v;
        rows.push_back(r);
    };
    // Two tasks; boundary of task 0 at step 5, of task 1 at step 9.
    for (int t = 0; t < 2; ++t) {
        push(0, t, 0, 3.0);
        push(5, t, 0, t == 0 ? 2.0 : 2.9);
        push(9, t, 1, t == 0 ? 2.4 : 2.1);
    }
    const MetricsLog log = log_from_rows(rows);
    CHECK(log.task_boundaries == std::vector<std::uint64_t>{5, 9});
    CHECK(retained_loss(log) == doctest::Approx((2.4 + 2.1) / 2.0));
    CHECK(learned_loss(log) == doctest::Approx((2.0 + 2.1) / 2.0));

    // Joint rows (train_task = -1) put every boundary at the final step.
    for (auto& r : rows) {
        r.train_task = -1;
    }
    const MetricsLog joint_log = log_from_rows(rows);
    CHECK(joint_log.task_boundaries == std::vector<std::uint64_t>{9, 9});
}
