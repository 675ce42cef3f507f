#include "cpt/task_stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "cpt/rng.hpp"

namespace cpt {

namespace {

constexpr double kStochasticTol = 1e-9;

void normalize(std::vector<double>& v, std::size_t begin, std::size_t len) {
    double sum = 0.0;
    for (std::size_t i = begin; i < begin + len; ++i) {
        sum += v[i];
    }
    if (sum <= 0.0) {
        // All-zero draws can only happen for pathologically small concentration.
        for (std::size_t i = begin; i < begin + len; ++i) {
            v[i] = 1.0 / static_cast<double>(len);
        }
        return;
    }
    for (std::size_t i = begin; i < begin + len; ++i) {
        v[i] /= sum;
    }
}

std::uint32_t sample_categorical(const double* probs, std::size_t n, double u) {
    double cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cum += probs[i];
        if (u < cum) {
            return static_cast<std::uint32_t>(i);
        }
    }
    return static_cast<std::uint32_t>(n - 1);
}

}  // namespace

void TaskSpec::validate() const {
    if (vocab_size < 2) {
        throw std::invalid_argument("TaskSpec: vocab_size must be >= 2");
    }
    if (transition.size() != vocab_size * vocab_size || initial.size() != vocab_size) {
        throw std::invalid_argument("TaskSpec: matrix shapes do not match vocab_size");
    }
    for (std::size_t r = 0; r < vocab_size; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < vocab_size; ++c) {
            const double p = transition_at(r, c);
            if (p < 0.0) {
                throw std::invalid_argument("TaskSpec: negative transition probability");
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > kStochasticTol) {
            throw std::invalid_argument("TaskSpec: transition row does not sum to 1");
        }
    }
    const double isum = std::accumulate(initial.begin(), initial.end(), 0.0);
    if (std::abs(isum - 1.0) > kStochasticTol) {
        throw std::invalid_argument("TaskSpec: initial distribution does not sum to 1");
    }
}

TaskSpec make_task(std::uint64_t seed, std::size_t vocab_size, double concentration) {
    if (vocab_size < 2) {
        throw std::invalid_argument("make_task: vocab_size must be >= 2");
    }
    if (concentration <= 0.0) {
        throw std::invalid_argument("make_task: concentration must be > 0");
    }
    std::mt19937_64 gen(seed);
    std::gamma_distribution<double> gamma(concentration, 1.0);

    TaskSpec task;
    task.vocab_size = vocab_size;
    task.transition.resize(vocab_size * vocab_size);
    task.initial.resize(vocab_size);
    for (double& v : task.transition) {
        v = gamma(gen);
    }
    for (std::size_t r = 0; r < vocab_size; ++r) {
        normalize(task.transition, r * vocab_size, vocab_size);
    }
    for (double& v : task.initial) {
        v = gamma(gen);
    }
    normalize(task.initial, 0, vocab_size);
    return task;
}

SampleBatch sample_sequences(const TaskSpec& task, std::size_t n, std::size_t seq_len,
                             std::uint64_t seed) {
    if (n < 1) {
        throw std::invalid_argument("sample_sequences: n must be >= 1");
    }
    if (seq_len < 1) {
        throw std::invalid_argument("sample_sequences: seq_len must be >= 1");
    }
    std::mt19937_64 gen(seed);
    SampleBatch batch(seq_len);
    batch.tokens.resize(n * seq_len);
    for (std::size_t r = 0; r < n; ++r) {
        std::uint32_t* row = batch.tokens.data() + r * seq_len;
        row[0] = sample_categorical(task.initial.data(), task.vocab_size, rng::uniform01(gen));
        for (std::size_t t = 1; t < seq_len; ++t) {
            const double* trow = task.transition.data() + row[t - 1] * task.vocab_size;
            row[t] = sample_categorical(trow, task.vocab_size, rng::uniform01(gen));
        }
    }
    return batch;
}

double mean_row_kl(const TaskSpec& a, const TaskSpec& b) {
    if (a.vocab_size != b.vocab_size) {
        throw std::invalid_argument("mean_row_kl: vocab mismatch");
    }
    const std::size_t v = a.vocab_size;
    double total = 0.0;
    for (std::size_t r = 0; r < v; ++r) {
        for (std::size_t c = 0; c < v; ++c) {
            const double p = a.transition_at(r, c);
            const double q = b.transition_at(r, c);
            if (p > 0.0) {
                total += p * std::log(p / std::max(q, 1e-300));
            }
        }
    }
    return total / static_cast<double>(v);
}

std::size_t TaskStream::task_samples(std::size_t task_index) const {
    return static_cast<std::size_t>(tasks.at(task_index).token_budget / seq_len);
}

std::size_t TaskStream::total_samples() const {
    std::size_t total = 0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        total += task_samples(t);
    }
    return total;
}

void TaskStream::validate() const {
    if (tasks.empty()) {
        throw std::invalid_argument("TaskStream: no tasks");
    }
    if (seq_len < 1) {
        throw std::invalid_argument("TaskStream: seq_len must be >= 1");
    }
    for (const TaskSpec& t : tasks) {
        t.validate();
    }
}

SampleBatch training_sample(const TaskStream& stream, std::size_t task_index,
                            std::size_t sample_index) {
    const std::uint64_t seed = rng::derive_seed(stream.seed, rng::Stream::train_samples,
                                                task_index, sample_index);
    return sample_sequences(stream.tasks.at(task_index), 1, stream.seq_len, seed);
}

std::optional<Incoming> next_incoming(const TaskStream& stream, StreamCursor& cursor) {
    while (cursor.task < stream.tasks.size() &&
           cursor.sample >= stream.task_samples(cursor.task)) {
        cursor.task += 1;
        cursor.sample = 0;
    }
    if (cursor.task >= stream.tasks.size()) {
        return std::nullopt;
    }
    Incoming out;
    out.samples = training_sample(stream, cursor.task, cursor.sample);
    out.task_id = stream.tasks[cursor.task].task_id;
    cursor.sample += 1;
    return out;
}

SampleBatch validation_set(const TaskStream& stream, std::size_t task_index, std::size_t n) {
    const std::uint64_t seed =
        rng::derive_seed(stream.seed, rng::Stream::validation_samples, task_index);
    return sample_sequences(stream.tasks.at(task_index), n, stream.seq_len, seed);
}

std::vector<std::pair<std::size_t, std::size_t>> joint_order(const TaskStream& stream) {
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    slots.reserve(stream.total_samples());
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        for (std::size_t i = 0; i < stream.task_samples(t); ++i) {
            slots.emplace_back(t, i);
        }
    }
    std::mt19937_64 gen(rng::derive_seed(stream.seed, rng::Stream::joint_shuffle));
    for (std::size_t i = slots.size(); i > 1; --i) {
        const std::uint64_t j = rng::uniform_below(gen, i);
        std::swap(slots[i - 1], slots[j]);
    }
    return slots;
}

TaskStream make_stream(std::uint64_t seed, std::size_t vocab_size, double concentration,
                       std::size_t num_tasks, std::uint64_t tokens_per_task,
                       std::size_t seq_len) {
    TaskStream stream;
    stream.seq_len = seq_len;
    stream.seed = seed;
    stream.tasks.reserve(num_tasks);
    for (std::size_t t = 0; t < num_tasks; ++t) {
        TaskSpec task =
            make_task(rng::derive_seed(seed, rng::Stream::task_gen, t), vocab_size, concentration);
        task.task_id = static_cast<int>(t);
        task.token_budget = tokens_per_task;
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

}  // namespace cpt
