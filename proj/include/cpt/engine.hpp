#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cpt/metrics.hpp"
#include "cpt/model.hpp"
#include "cpt/optim.hpp"
#include "cpt/replay_buffer.hpp"
#include "cpt/task_stream.hpp"

namespace cpt {

enum class TrainMode { sequential, replay, reptile, mer, joint };

const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
    std::size_t batch_size = 32;        // N, rows per optimizer update
    double replay_ratio = 0.0;          // alpha, fraction of each batch from the buffer
    std::uint64_t reptile_interval = 50; // k, update steps between meta-updates
    double reptile_rate = 0.1;          // epsilon, interpolation coefficient
    ScheduleConfig schedule;
    TrainMode mode = TrainMode::sequential;
    std::uint64_t seed = 0;
    std::size_t eval_interval = 50;
    AdamWOptions adamw;
    bool async_prefetch = false;         // background prefetcher; sync reads reproduce bit-exactly
    std::filesystem::path diagnostic_dir; // where diverged params get dumped, if set

    std::size_t replay_rows() const;    // floor(alpha * N)
    std::size_t incoming_rows() const;  // N - replay_rows() == ceil((1-alpha)*N)
    void validate() const;
};

/// Per-task validation sets plus an optional sink for every metrics record.
struct EvalSuite {
    std::vector<SampleBatch> task_validation;
    std::function<void(const MetricsRecord&)> on_record;
};

struct TrainCounters {
    std::uint64_t update_steps = 0;
    std::uint64_t incoming_samples = 0;
    std::uint64_t incoming_tokens = 0;
    std::uint64_t processed_tokens = 0;       // rows * seq_len through forward/backward
    std::uint64_t reptile_applications = 0;
    std::uint64_t reptile_elementwise_ops = 0; // 3 per parameter per application
};

struct TrainResult {
    ModelParams params;
    MetricsLog log;
    TrainCounters counters;
    AdamWState opt_state;
};

/// Incoming rows plus floor(alpha*N) rows drawn from the buffer. On a cold
/// buffer the result is the incoming rows alone.
SampleBatch compose_batch(const SampleBatch& incoming, ReplayBuffer& buffer, double alpha,
                          std::size_t batch_size);

/// In place: current <- anchor + eps*(current - anchor), elementwise
/// (3 ops per parameter). eps == 1 leaves current bit-identical.
void reptile_update(ModelParams& current, const ModelParams& anchor, double eps);

/// One-pass continual training over the stream. One optimizer update per
/// incoming_rows() incoming samples (fewer at a task boundary; chunks never
/// span tasks). Incoming samples, and only those, are added to the buffer.
/// In reptile/mer modes the parameters are interpolated toward the anchor
/// every reptile_interval updates. All task validation sets are evaluated
/// every eval_interval updates, at every task boundary, and at the end.
TrainResult train(const TaskStream& stream, const ModelParams& initial, const TrainConfig& config,
                  ReplayBuffer* buffer, const EvalSuite& eval);

/// Same budget and schedule, but the stream is a uniform shuffle of all
/// tasks' samples; no buffer, no meta-updates. Every task's boundary is the
/// final step.
TrainResult joint_train(const TaskStream& stream, const ModelParams& initial,
                        const TrainConfig& config, const EvalSuite& eval);

}  // namespace cpt
