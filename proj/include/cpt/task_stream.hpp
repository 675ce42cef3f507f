#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cpt/sample_batch.hpp"

namespace cpt {

/// A synthetic "language": a first-order Markov chain over a shared vocabulary.
struct TaskSpec {
    int task_id = 0;
    std::size_t vocab_size = 0;
    std::vector<double> transition;  // vocab x vocab, row-stochastic
    std::vector<double> initial;     // probability vector over vocab
    std::uint64_t token_budget = 0;

    void validate() const;
    double transition_at(std::size_t from, std::size_t to) const {
        return transition[from * vocab_size + to];
    }
};

/// Dirichlet(concentration) rows, deterministic in the seed. task_id and
/// token_budget are left for the caller to assign.
TaskSpec make_task(std::uint64_t seed, std::size_t vocab_size, double concentration);

/// n independent rollouts of length seq_len: first token from `initial`,
/// the rest from `transition`. Deterministic in the seed.
SampleBatch sample_sequences(const TaskSpec& task, std::size_t n, std::size_t seq_len,
                             std::uint64_t seed);

/// Mean per-row KL divergence between two transition matrices, in nats.
double mean_row_kl(const TaskSpec& a, const TaskSpec& b);

/// The ordered, one-pass task sequence. Training and validation samples are
/// drawn from disjoint seed streams derived from `seed`.
struct TaskStream {
    std::vector<TaskSpec> tasks;
    std::size_t seq_len = 0;
    std::uint64_t seed = 0;

    // Budgets round down to whole samples; a sample never spans tasks.
    std::size_t task_samples(std::size_t task_index) const;
    std::size_t total_samples() const;
    void validate() const;
};

struct StreamCursor {
    std::size_t task = 0;
    std::size_t sample = 0;
};

struct Incoming {
    SampleBatch samples;  // one row
    int task_id = 0;
};

/// Next incoming sample, advancing the cursor. The cursor moves to the next
/// task before emitting when the current task's budget is exhausted.
/// Returns nullopt at end of stream.
std::optional<Incoming> next_incoming(const TaskStream& stream, StreamCursor& cursor);

/// Held-out per-task validation rows; seed stream disjoint from training.
SampleBatch validation_set(const TaskStream& stream, std::size_t task_index, std::size_t n);

/// Uniform shuffle of all (task, sample) slots for the joint i.i.d. baseline.
/// Sample content is identical to what the sequential stream would emit.
std::vector<std::pair<std::size_t, std::size_t>> joint_order(const TaskStream& stream);

/// Generate the training sample at a given slot (same content next_incoming
/// would produce for it).
SampleBatch training_sample(const TaskStream& stream, std::size_t task_index,
                            std::size_t sample_index);

/// Convenience: build an n-task stream with equal token budgets, task seeds
/// derived from `seed`.
TaskStream make_stream(std::uint64_t seed, std::size_t vocab_size, double concentration,
                       std::size_t num_tasks, std::uint64_t tokens_per_task, std::size_t seq_len);

}  // namespace cpt
