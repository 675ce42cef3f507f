#include "cpt/engine.hpp"

#include <cmath>
#include <stdexcept>

#include "cpt/errors.hpp"

namespace cpt {

const char* to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::sequential: return "sequential";
        case TrainMode::replay: return "replay";
        case TrainMode::reptile: return "reptile";
        case TrainMode::mer: return "mer";
        case TrainMode::joint: return "joint";
    }
    return "unknown";
}

TrainMode train_mode_from_string(const std::string& name) {
    if (name == "sequential") return TrainMode::sequential;
    if (name == "replay") return TrainMode::replay;
    if (name == "reptile") return TrainMode::reptile;
    if (name == "mer") return TrainMode::mer;
    if (name == "joint") return TrainMode::joint;
    throw std::invalid_argument("unknown train mode '" + name + "'");
}

std::size_t TrainConfig::replay_rows() const {
    return static_cast<std::size_t>(
        std::floor(replay_ratio * static_cast<double>(batch_size)));
}

std::size_t TrainConfig::incoming_rows() const {
    return batch_size - replay_rows();
}

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    }
    if (replay_ratio < 0.0 || replay_ratio >= 1.0) {
        throw std::invalid_argument("TrainConfig: replay_ratio must be in [0, 1)");
    }
    if (reptile_rate < 0.0 || reptile_rate > 1.0) {
        throw std::invalid_argument("TrainConfig: reptile_rate must be in [0, 1]");
    }
    if (eval_interval < 1) {
        throw std::invalid_argument("TrainConfig: eval_interval must be >= 1");
    }
    const bool uses_reptile = mode == TrainMode::reptile || mode == TrainMode::mer;
    if (uses_reptile && reptile_interval < 1) {
        throw std::invalid_argument("TrainConfig: reptile_interval must be >= 1");
    }
    if ((mode == TrainMode::sequential || mode == TrainMode::reptile ||
         mode == TrainMode::joint) &&
        replay_ratio != 0.0) {
        throw std::invalid_argument(std::string("TrainConfig: mode '") + to_string(mode) +
                                    "' requires replay_ratio == 0");
    }
    schedule.validate();
}

SampleBatch compose_batch(const SampleBatch& incoming, ReplayBuffer& buffer, double alpha,
                          std::size_t batch_size) {
    if (alpha < 0.0 || alpha >= 1.0) {
        throw std::invalid_argument("compose_batch: alpha must be in [0, 1)");
    }
    SampleBatch batch = incoming;
    if (alpha > 0.0) {
        const SampleBatch replay = buffer.get_batch(alpha, batch_size);
        batch.append(replay);
    }
    return batch;
}

void reptile_update(ModelParams& current, const ModelParams& anchor, double eps) {
    if (eps == 1.0) {
        return;
    }
    auto cf = current.fields();
    auto af = anchor.fields();
    for (std::size_t f = 0; f < cf.size(); ++f) {
        if (cf[f]->size() != af[f]->size()) {
            throw std::invalid_argument("reptile_update: shape mismatch");
        }
        double* c = cf[f]->data();
        const double* a = af[f]->data();
        const std::size_t n = cf[f]->size();
        for (std::size_t i = 0; i < n; ++i) {
            c[i] = a[i] + eps * (c[i] - a[i]);
        }
    }
}

namespace {

struct Loop {
    const TrainConfig& config;
    const EvalSuite& eval;
    const std::vector<TaskSpec>& tasks;
    std::size_t seq_len;

    ModelParams params;
    AdamWState opt;
    MetricsLog log;
    TrainCounters counters;
    ReplayBuffer* buffer = nullptr;
    ModelParams anchor;
    std::uint64_t steps_since_anchor = 0;
    std::uint64_t last_eval_step = UINT64_MAX;

    Loop(const TrainConfig& cfg, const EvalSuite& ev, const std::vector<TaskSpec>& ts,
         std::size_t seq_len_, const ModelParams& initial)
        : config(cfg),
          eval(ev),
          tasks(ts),
          seq_len(seq_len_),
          params(initial),
          opt(AdamWState::init(initial.dims)),
          anchor(initial) {
        log.task_boundaries.assign(tasks.size(), 0);
        if (eval.task_validation.size() != tasks.size()) {
            throw std::invalid_argument("train: one validation set per task required");
        }
    }

    bool uses_reptile() const {
        return config.mode == TrainMode::reptile || config.mode == TrainMode::mer;
    }

    void evaluate(std::uint64_t step, int train_task) {
        if (step == last_eval_step) {
            return;
        }
        last_eval_step = step;
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            MetricsRecord rec;
            rec.update_step = step;
            rec.eval_task = tasks[t].task_id;
            rec.val_loss = loss(params, eval.task_validation[t]);
            rec.train_task = train_task;
            log.records.push_back(rec);
            if (eval.on_record) {
                eval.on_record(rec);
            }
        }
    }

    void update(const SampleBatch& incoming) {
        SampleBatch batch = incoming;
        if (buffer && config.replay_ratio > 0.0) {
            batch = compose_batch(incoming, *buffer, config.replay_ratio, config.batch_size);
        }

        const double lr = lr_at(config.schedule, counters.update_steps);
        auto [loss_value, grads] = loss_and_grad(params, batch);
        if (!std::isfinite(loss_value)) {
            if (!config.diagnostic_dir.empty()) {
                std::filesystem::create_directories(config.diagnostic_dir);
                save_params(params, config.diagnostic_dir / "diverged_params.bin");
            }
            throw TrainDivergedError("training loss is not finite at update step " +
                                     std::to_string(counters.update_steps));
        }
        adamw_step(params, grads, opt, lr, config.adamw);

        counters.update_steps += 1;
        counters.incoming_samples += incoming.rows();
        counters.incoming_tokens += incoming.rows() * seq_len;
        counters.processed_tokens += batch.rows() * seq_len;

        if (buffer) {
            buffer->add(incoming);
        }
        if (uses_reptile()) {
            steps_since_anchor += 1;
            if (steps_since_anchor == config.reptile_interval) {
                reptile_update(params, anchor, config.reptile_rate);
                counters.reptile_applications += 1;
                counters.reptile_elementwise_ops += 3 * params.param_count();
                anchor = params;
                steps_since_anchor = 0;
            }
        }
    }
};

}  // namespace

TrainResult train(const TaskStream& stream, const ModelParams& initial, const TrainConfig& config,
                  ReplayBuffer* buffer, const EvalSuite& eval) {
    config.validate();
    stream.validate();
    if (config.mode == TrainMode::joint) {
        return joint_train(stream, initial, config, eval);
    }
    if (stream.total_samples() == 0) {
        throw std::invalid_argument("train: stream has no samples");
    }
    const bool wants_buffer = config.replay_ratio > 0.0 || config.mode == TrainMode::mer;
    if (wants_buffer && buffer == nullptr) {
        throw std::invalid_argument("train: this mode requires an initialized buffer");
    }

    Loop loop(config, eval, stream.tasks, stream.seq_len, initial);
    loop.buffer = buffer;
    if (buffer && config.async_prefetch) {
        buffer->start_prefetch();
    }

    const std::size_t chunk_rows = config.incoming_rows();
    StreamCursor cursor;
    std::optional<Incoming> pending = next_incoming(stream, cursor);

    loop.evaluate(0, pending ? pending->task_id : stream.tasks.front().task_id);

    while (pending) {
        const int chunk_task = pending->task_id;
        SampleBatch chunk(stream.seq_len);
        bool boundary = false;
        while (chunk.rows() < chunk_rows) {
            chunk.append(pending->samples);
            pending = next_incoming(stream, cursor);
            if (!pending) {
                boundary = true;
                break;
            }
            if (pending->task_id != chunk_task) {
                boundary = true;  // hold the sample for the next chunk
                break;
            }
        }

        loop.update(chunk);
        const std::uint64_t step = loop.counters.update_steps;

        bool want_eval = step % config.eval_interval == 0;
        if (boundary) {
            loop.log.task_boundaries.at(static_cast<std::size_t>(chunk_task)) = step;
            want_eval = true;
        }
        if (!pending) {
            want_eval = true;  // end of stream
        }
        if (want_eval) {
            loop.evaluate(step, chunk_task);
        }
    }

    if (buffer && config.async_prefetch) {
        buffer->stop_prefetch();
    }
    return TrainResult{std::move(loop.params), std::move(loop.log), loop.counters,
                       std::move(loop.opt)};
}

TrainResult joint_train(const TaskStream& stream, const ModelParams& initial,
                        const TrainConfig& config, const EvalSuite& eval) {
    config.validate();
    stream.validate();
    if (config.mode != TrainMode::joint) {
        throw std::invalid_argument("joint_train: config.mode must be joint");
    }
    if (stream.total_samples() == 0) {
        throw std::invalid_argument("joint_train: stream has no samples");
    }

    Loop loop(config, eval, stream.tasks, stream.seq_len, initial);
    const auto slots = joint_order(stream);
    const std::size_t chunk_rows = config.incoming_rows();

    loop.evaluate(0, -1);

    std::size_t next_slot = 0;
    while (next_slot < slots.size()) {
        SampleBatch chunk(stream.seq_len);
        while (chunk.rows() < chunk_rows && next_slot < slots.size()) {
            const auto [task_index, sample_index] = slots[next_slot];
            chunk.append(training_sample(stream, task_index, sample_index));
            next_slot += 1;
        }
        loop.update(chunk);
        const std::uint64_t step = loop.counters.update_steps;
        if (step % config.eval_interval == 0 || next_slot == slots.size()) {
            loop.evaluate(step, -1);
        }
    }

    const std::uint64_t final_step = loop.counters.update_steps;
    for (auto& b : loop.log.task_boundaries) {
        b = final_step;
    }
    return TrainResult{std::move(loop.params), std::move(loop.log), loop.counters,
                       std::move(loop.opt)};
}

}  // namespace cpt
