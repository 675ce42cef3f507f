#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cpt/engine.hpp"
#include "cpt/errors.hpp"
#include "cpt/metrics.hpp"
#include "oracles.hpp"

using namespace cpt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("cpt_engine_tests_" + name);
    fs::remove_all(dir);
    return dir;
}

BufferConfig buffer_config(const fs::path& dir, std::size_t seq_len, std::size_t rows = 4096) {
    BufferConfig c;
    c.file_size = 512;
    const std::uint64_t files = (rows + c.file_size - 1) / c.file_size;
    c.capacity_tokens = files * c.file_size * seq_len;
    c.seq_len = seq_len;
    c.data_dir = dir;
    c.queue_capacity = 4;
    c.metadata_write_interval = 64;
    c.seed = 11;
    return c;
}

SampleBatch constant_rows(std::size_t n, std::size_t seq_len, std::uint32_t value) {
    SampleBatch b(seq_len);
    b.tokens.assign(n * seq_len, value);
    return b;
}

TrainConfig base_config(TrainMode mode, double alpha, std::size_t batch_size,
                        std::uint64_t total_steps) {
    TrainConfig tc;
    tc.batch_size = batch_size;
    tc.replay_ratio = alpha;
    tc.mode = mode;
    tc.schedule = {1e-2, std::min<std::uint64_t>(10, total_steps), total_steps, 1e-4};
    tc.eval_interval = 50;
    return tc;
}

}  // namespace

TEST_CASE("batch composition: 6 incoming plus 2 replay rows for N=8, alpha=0.25") {
    const fs::path dir = fresh_dir("compose");
    ReplayBuffer buffer(buffer_config(dir, 8, 512));
    buffer.add(constant_rows(64, 8, 1));  // warm

    const SampleBatch incoming = constant_rows(6, 8, 2);
    const SampleBatch batch = compose_batch(incoming, buffer, 0.25, 8);
    REQUIRE(batch.rows() == 8);
    for (std::size_t r = 0; r < 6; ++r) {
        CHECK(batch.row(r)[0] == 2);  // incoming rows come first
    }
    for (std::size_t r = 6; r < 8; ++r) {
        CHECK(batch.row(r)[0] == 1);  // replay rows from the buffer
    }
    fs::remove_all(dir);
}

TEST_CASE("alpha = 0 passes the incoming rows through untouched") {
    const fs::path dir = fresh_dir("compose_a0");
    ReplayBuffer buffer(buffer_config(dir, 8, 512));
    buffer.add(constant_rows(16, 8, 1));
    const SampleBatch incoming = constant_rows(4, 8, 2);
    const SampleBatch batch = compose_batch(incoming, buffer, 0.0, 4);
    CHECK(batch.tokens == incoming.tokens);
    CHECK_THROWS_AS(compose_batch(incoming, buffer, 1.0, 4), std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("a cold buffer yields an incoming-only batch") {
    const fs::path dir = fresh_dir("compose_cold");
    ReplayBuffer buffer(buffer_config(dir, 8, 512));
    const SampleBatch incoming = constant_rows(2, 8, 3);
    const SampleBatch batch = compose_batch(incoming, buffer, 0.5, 4);
    CHECK(batch.rows() == 2);
    fs::remove_all(dir);
}

TEST_CASE("the batch split is exact for every alpha and N") {
    for (double alpha : {0.0, 0.1, 0.25, 1.0 / 3.0, 0.5, 0.75, 0.9}) {
        for (std::size_t n : {1ul, 4ul, 8ul, 10ul, 64ul, 321ul}) {
            TrainConfig tc;
            tc.batch_size = n;
            tc.replay_ratio = alpha;
            CHECK(tc.replay_rows() + tc.incoming_rows() == n);
            CHECK(tc.replay_rows() == static_cast<std::size_t>(std::floor(alpha * double(n))));
        }
    }
}

TEST_CASE("reptile interpolation: examples and exact endpoints") {
    const ModelDims dims{4, 2, 1, 2};
    ModelParams anchor = ModelParams::zeros(dims);
    ModelParams current = ModelParams::zeros(dims);
    for (auto* f : anchor.fields()) {
        for (double& v : *f) v = 1.0;
    }
    for (auto* f : current.fields()) {
        for (double& v : *f) v = 2.0;
    }

    ModelParams x = current;
    reptile_update(x, anchor, 0.1);
    for (const auto* f : x.fields()) {
        for (double v : *f) {
            CHECK(v == doctest::Approx(1.1).epsilon(1e-15));
        }
    }

    x = current;
    reptile_update(x, anchor, 1.0);
    CHECK(x.w1 == current.w1);  // identity, bit for bit

    x = current;
    reptile_update(x, anchor, 0.0);
    CHECK(x.w1 == anchor.w1);  // full reset
}

TEST_CASE("reptile fires exactly every k update steps") {
    // 600 samples, incoming chunk 2 -> 300 update steps; k=100 -> 3 applications.
    TaskStream stream = make_stream(5, 8, 0.5, 1, 600 * 8, 8);
    const ModelDims dims{8, 4, 2, 8};
    TrainConfig tc = base_config(TrainMode::reptile, 0.0, 2, 300);
    tc.reptile_interval = 100;
    tc.reptile_rate = 0.1;

    const TrainResult result = train(stream, init_params(dims, 1), tc, nullptr, EvalSuite{
        {validation_set(stream, 0, 16)}, nullptr});
    CHECK(result.counters.update_steps == 300);
    CHECK(result.counters.reptile_applications == 3);
    CHECK(result.counters.reptile_elementwise_ops ==
          3 * 3 * ModelDims{8, 4, 2, 8}.param_count());
}

TEST_CASE("MER with k=1, eps=1 walks the same trajectory as plain replay") {
    const std::size_t L = 8;
    TaskStream stream = make_stream(9, 8, 0.3, 2, 100 * L, L);
    const ModelDims dims{8, 4, 2, 8};
    const ModelParams initial = init_params(dims, 3);

    auto run = [&](TrainMode mode, const fs::path& dir) {
        ReplayBuffer buffer(buffer_config(dir, L, 512));
        TrainConfig tc = base_config(mode, 0.5, 4, 100);
        tc.reptile_interval = 1;
        tc.reptile_rate = 1.0;
        EvalSuite eval{{validation_set(stream, 0, 8), validation_set(stream, 1, 8)}, nullptr};
        return train(stream, initial, tc, &buffer, eval);
    };
    const fs::path dir_a = fresh_dir("mer_identity_a");
    const fs::path dir_b = fresh_dir("mer_identity_b");
    const TrainResult mer = run(TrainMode::mer, dir_a);
    const TrainResult replay = run(TrainMode::replay, dir_b);
    CHECK(mer.params.embeddings == replay.params.embeddings);
    CHECK(mer.params.w1 == replay.params.w1);
    CHECK(mer.params.w2 == replay.params.w2);
    CHECK(mer.counters.processed_tokens == replay.counters.processed_tokens);
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("token accounting: warm 50 percent replay processes exactly 2x") {
    const std::size_t L = 8;
    TaskStream stream = make_stream(13, 8, 0.3, 1, 200 * L, L);
    const ModelDims dims{8, 4, 2, 8};

    const fs::path dir = fresh_dir("flops");
    ReplayBuffer buffer(buffer_config(dir, L, 512));
    buffer.add(constant_rows(32, L, 1));  // warm so every step gets replay

    TrainConfig tc = base_config(TrainMode::replay, 0.5, 8, 50);
    EvalSuite eval{{validation_set(stream, 0, 8)}, nullptr};
    const TrainResult result = train(stream, init_params(dims, 1), tc, &buffer, eval);

    CHECK(result.counters.processed_tokens == 2 * result.counters.incoming_tokens);
    fs::remove_all(dir);
}

TEST_CASE("the buffer ends up holding every incoming sample") {
    const std::size_t L = 8;
    TaskStream stream = make_stream(21, 8, 0.3, 2, 64 * L, L);
    const ModelDims dims{8, 4, 2, 8};
    const fs::path dir = fresh_dir("growth");
    ReplayBuffer buffer(buffer_config(dir, L, 512));
    TrainConfig tc = base_config(TrainMode::replay, 0.5, 8, 40);
    EvalSuite eval{{validation_set(stream, 0, 8), validation_set(stream, 1, 8)}, nullptr};
    const TrainResult result = train(stream, init_params(dims, 2), tc, &buffer, eval);

    CHECK(result.counters.incoming_samples == stream.total_samples());
    CHECK(buffer.state().total == result.counters.incoming_samples);
    fs::remove_all(dir);
}

TEST_CASE("boundaries, eval cadence and the metrics identity hold end to end") {
    const std::size_t L = 16;
    TaskStream stream = make_stream(33, 16, 0.2, 3, 40 * L, L);
    const ModelDims dims{16, 8, 2, 16};
    TrainConfig tc = base_config(TrainMode::sequential, 0.0, 8, 15);
    tc.eval_interval = 3;
    EvalSuite eval{{validation_set(stream, 0, 32), validation_set(stream, 1, 32),
                    validation_set(stream, 2, 32)},
                   nullptr};
    const TrainResult result = train(stream, init_params(dims, 4), tc, nullptr, eval);

    // 40 samples per task, chunks of 8 -> boundaries at steps 5, 10, 15.
    CHECK(result.log.task_boundaries == std::vector<std::uint64_t>{5, 10, 15});
    CHECK(result.counters.update_steps == 15);

    const double retained = retained_loss(result.log);
    const double learned = learned_loss(result.log);
    const double forgetting = mean_end_of_run_forgetting(result.log);
    CHECK(std::abs(retained - (learned + forgetting)) < 1e-9);

    // Records are sorted and the boundary evals exist for every task.
    for (std::size_t i = 1; i < result.log.records.size(); ++i) {
        CHECK(result.log.records[i].update_step >= result.log.records[i - 1].update_step);
    }
}

TEST_CASE("sequential training forgets the first task") {
    const std::size_t L = 32;
    TaskStream stream = make_stream(41, 16, 0.1, 2, 30000, L);
    const ModelDims dims{16, 8, 2, 32};
    TrainConfig tc = base_config(TrainMode::sequential, 0.0, 16, 120);
    tc.eval_interval = 20;
    EvalSuite eval{{validation_set(stream, 0, 64), validation_set(stream, 1, 64)}, nullptr};
    const TrainResult result = train(stream, init_params(dims, 5), tc, nullptr, eval);

    const double boundary = result.log.loss_at(0, result.log.task_boundaries[0]);
    const double final_loss = result.log.loss_at(0, result.log.final_step());
    CHECK(final_loss > boundary);
}

TEST_CASE("joint training interleaves tasks and defines boundaries at the end") {
    const std::size_t L = 16;
    TaskStream stream = make_stream(55, 16, 0.2, 2, 40 * L, L);
    const ModelDims dims{16, 8, 2, 16};
    TrainConfig tc = base_config(TrainMode::joint, 0.0, 8, 10);
    EvalSuite eval{{validation_set(stream, 0, 32), validation_set(stream, 1, 32)}, nullptr};
    const TrainResult result = joint_train(stream, init_params(dims, 6), tc, eval);

    CHECK(result.counters.update_steps == 10);
    CHECK(result.log.task_boundaries == std::vector<std::uint64_t>{10, 10});
    // Learned equals retained when boundaries sit at the final step.
    CHECK(std::abs(learned_loss(result.log) - retained_loss(result.log)) < 1e-12);

    // Deterministic for a fixed seed.
    const TrainResult again = joint_train(stream, init_params(dims, 6), tc, eval);
    CHECK(again.params.w1 == result.params.w1);
}

TEST_CASE("config validation enforces the mode constraints") {
    TrainConfig tc;
    tc.mode = TrainMode::sequential;
    tc.replay_ratio = 0.25;
    tc.schedule = {1e-3, 0, 10, 0.0};
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    tc.mode = TrainMode::reptile;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    tc.mode = TrainMode::replay;
    CHECK_NOTHROW(tc.validate());
    tc.replay_ratio = 1.0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("replay modes refuse to run without a buffer") {
    TaskStream stream = make_stream(5, 8, 0.5, 1, 64 * 8, 8);
    const ModelDims dims{8, 4, 2, 8};
    TrainConfig tc = base_config(TrainMode::replay, 0.5, 4, 16);
    EvalSuite eval{{validation_set(stream, 0, 8)}, nullptr};
    CHECK_THROWS_AS(train(stream, init_params(dims, 1), tc, nullptr, eval),
                    std::invalid_argument);
}

TEST_CASE("MER aligns cross-task gradients better than sequential training") {
    const std::size_t L = 32;
    const ModelDims dims{16, 8, 2, 32};
    double mer_cosine = 0.0;
    double seq_cosine = 0.0;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        TaskStream stream = make_stream(100, 16, 0.1, 2, 30000, L);
        stream.seed = seed;
        const ModelParams initial = init_params(dims, seed);
        EvalSuite eval{{validation_set(stream, 0, 64), validation_set(stream, 1, 64)}, nullptr};

        TrainConfig seq = base_config(TrainMode::sequential, 0.0, 16, 120);
        const TrainResult r_seq = train(stream, initial, seq, nullptr, eval);

        const fs::path dir = fresh_dir("align_" + std::to_string(seed));
        ReplayBuffer buffer(buffer_config(dir, L, 2048));
        TrainConfig mer = base_config(TrainMode::mer, 0.5, 16, 230);
        mer.reptile_interval = 25;
        mer.reptile_rate = 0.1;
        const TrainResult r_mer = train(stream, initial, mer, &buffer, eval);
        fs::remove_all(dir);

        const SampleBatch probe_a = validation_set(stream, 0, 32);
        const SampleBatch probe_b = validation_set(stream, 1, 32);
        seq_cosine += grad_alignment(r_seq.params, probe_a, probe_b).cosine;
        mer_cosine += grad_alignment(r_mer.params, probe_a, probe_b).cosine;
    }
    CHECK(mer_cosine / 3.0 > seq_cosine / 3.0);
}
