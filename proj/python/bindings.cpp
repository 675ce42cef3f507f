#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <memory>

#include "cpt/engine.hpp"
#include "cpt/experiment.hpp"
#include "cpt/metrics.hpp"
#include "cpt/model.hpp"
#include "cpt/optim.hpp"
#include "cpt/replay_buffer.hpp"
#include "cpt/task_stream.hpp"

namespace py = pybind11;
using namespace cpt;

namespace {

SampleBatch batch_from_numpy(py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast> arr) {
    if (arr.ndim() != 2) {
        throw py::value_error("expected a 2-d array of token ids");
    }
    SampleBatch batch(static_cast<std::size_t>(arr.shape(1)));
    batch.tokens.resize(static_cast<std::size_t>(arr.size()));
    std::memcpy(batch.tokens.data(), arr.data(), sizeof(std::uint32_t) * batch.tokens.size());
    return batch;
}

py::array_t<std::uint32_t> batch_to_numpy(const SampleBatch& batch) {
    py::array_t<std::uint32_t> arr({batch.rows(), batch.seq_len});
    std::memcpy(arr.mutable_data(), batch.tokens.data(),
                sizeof(std::uint32_t) * batch.tokens.size());
    return arr;
}

py::array_t<double> flatten_params(const ModelParams& p) {
    py::array_t<double> arr(static_cast<py::ssize_t>(p.param_count()));
    double* out = arr.mutable_data();
    std::size_t off = 0;
    for (const auto* field : p.fields()) {
        std::memcpy(out + off, field->data(), field->size() * sizeof(double));
        off += field->size();
    }
    return arr;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Continual pre-training engine: replay buffer, synthetic task streams, "
              "n-gram model, AdamW, training loops and metrics.";

    py::class_<SampleBatch>(m, "SampleBatch")
        .def(py::init(&batch_from_numpy), py::arg("tokens"))
        .def_property_readonly("rows", &SampleBatch::rows)
        .def_property_readonly("seq_len", [](const SampleBatch& b) { return b.seq_len; })
        .def("numpy", &batch_to_numpy);

    py::class_<TaskSpec>(m, "TaskSpec")
        .def_readonly("task_id", &TaskSpec::task_id)
        .def_readonly("vocab_size", &TaskSpec::vocab_size)
        .def_readwrite("token_budget", &TaskSpec::token_budget)
        .def_property_readonly("transition",
                               [](const TaskSpec& t) {
                                   py::array_t<double> arr({t.vocab_size, t.vocab_size});
                                   std::memcpy(arr.mutable_data(), t.transition.data(),
                                               t.transition.size() * sizeof(double));
                                   return arr;
                               })
        .def_property_readonly("initial", [](const TaskSpec& t) {
            py::array_t<double> arr(static_cast<py::ssize_t>(t.vocab_size));
            std::memcpy(arr.mutable_data(), t.initial.data(), t.initial.size() * sizeof(double));
            return arr;
        });

    m.def("make_task", &make_task, py::arg("seed"), py::arg("vocab_size"),
          py::arg("concentration"));
    m.def("sample_sequences", &sample_sequences, py::arg("task"), py::arg("n"),
          py::arg("seq_len"), py::arg("seed"));
    m.def("mean_row_kl", &mean_row_kl, py::arg("a"), py::arg("b"));

    py::class_<TaskStream>(m, "TaskStream")
        .def_readonly("tasks", &TaskStream::tasks)
        .def_readonly("seq_len", &TaskStream::seq_len)
        .def_readwrite("seed", &TaskStream::seed)
        .def("task_samples", &TaskStream::task_samples)
        .def("total_samples", &TaskStream::total_samples);

    m.def("make_stream", &make_stream, py::arg("seed"), py::arg("vocab_size"),
          py::arg("concentration"), py::arg("num_tasks"), py::arg("tokens_per_task"),
          py::arg("seq_len"));
    m.def("validation_set", &validation_set, py::arg("stream"), py::arg("task_index"),
          py::arg("n"));

    py::class_<ModelDims>(m, "ModelDims")
        .def(py::init([](std::size_t vocab, std::size_t embed, std::size_t context,
                         std::size_t hidden) {
                 ModelDims d{vocab, embed, context, hidden};
                 d.validate();
                 return d;
             }),
             py::arg("vocab_size"), py::arg("embed_dim"), py::arg("context"),
             py::arg("hidden_dim"))
        .def_readonly("vocab_size", &ModelDims::vocab_size)
        .def_readonly("embed_dim", &ModelDims::embed_dim)
        .def_readonly("context", &ModelDims::context)
        .def_readonly("hidden_dim", &ModelDims::hidden_dim)
        .def("param_count", &ModelDims::param_count);

    py::class_<ModelParams>(m, "ModelParams")
        .def_readonly("dims", &ModelParams::dims)
        .def("param_count", &ModelParams::param_count)
        .def("flatten", &flatten_params)
        .def_static("zeros", &ModelParams::zeros, py::arg("dims"));

    py::class_<Gradients>(m, "Gradients")
        .def("flatten", [](const Gradients& g) {
            std::size_t total = 0;
            for (const auto* f : g.fields()) {
                total += f->size();
            }
            py::array_t<double> arr(static_cast<py::ssize_t>(total));
            double* out = arr.mutable_data();
            std::size_t off = 0;
            for (const auto* f : g.fields()) {
                std::memcpy(out + off, f->data(), f->size() * sizeof(double));
                off += f->size();
            }
            return arr;
        });

    m.def("init_params", &init_params, py::arg("dims"), py::arg("seed"));
    m.def("loss", &loss, py::arg("params"), py::arg("batch"));
    m.def("loss_and_grad", &loss_and_grad, py::arg("params"), py::arg("batch"));
    m.def("save_params", &save_params, py::arg("params"), py::arg("path"));
    m.def("load_params", &load_params, py::arg("path"));

    py::class_<ScheduleConfig>(m, "ScheduleConfig")
        .def(py::init([](double peak, std::uint64_t warmup, std::uint64_t total, double min_lr) {
                 ScheduleConfig s{peak, warmup, total, min_lr};
                 s.validate();
                 return s;
             }),
             py::arg("peak_lr"), py::arg("warmup_steps"), py::arg("total_steps"),
             py::arg("min_lr"))
        .def_readonly("peak_lr", &ScheduleConfig::peak_lr)
        .def_readonly("warmup_steps", &ScheduleConfig::warmup_steps)
        .def_readonly("total_steps", &ScheduleConfig::total_steps)
        .def_readonly("min_lr", &ScheduleConfig::min_lr);

    m.def("lr_at", &lr_at, py::arg("schedule"), py::arg("step"));

    py::class_<BufferConfig>(m, "BufferConfig")
        .def(py::init([](std::uint64_t capacity_tokens, std::size_t file_size,
                         std::size_t seq_len, const std::filesystem::path& data_dir,
                         std::size_t queue_capacity, std::size_t dtype_bytes,
                         std::size_t metadata_write_interval, std::uint64_t seed) {
                 BufferConfig c;
                 c.capacity_tokens = capacity_tokens;
                 c.file_size = file_size;
                 c.seq_len = seq_len;
                 c.data_dir = data_dir;
                 c.queue_capacity = queue_capacity;
                 c.dtype_bytes = dtype_bytes;
                 c.metadata_write_interval = metadata_write_interval;
                 c.seed = seed;
                 c.validate();
                 return c;
             }),
             py::arg("capacity_tokens"), py::arg("file_size"), py::arg("seq_len"),
             py::arg("data_dir"), py::arg("queue_capacity"), py::arg("dtype_bytes") = 4,
             py::arg("metadata_write_interval") = 1, py::arg("seed") = 0)
        .def("file_count", &BufferConfig::file_count);

    py::class_<BufferState>(m, "BufferState")
        .def_readonly("sizes", &BufferState::sizes)
        .def_readonly("total", &BufferState::total)
        .def_readonly("file_count", &BufferState::file_count);

    py::class_<ReplayBuffer>(m, "ReplayBuffer")
        .def(py::init<BufferConfig>(), py::arg("config"))
        .def("add", &ReplayBuffer::add, py::arg("batch"))
        .def("start_prefetch", &ReplayBuffer::start_prefetch,
             py::call_guard<py::gil_scoped_release>())
        .def("stop_prefetch", &ReplayBuffer::stop_prefetch,
             py::call_guard<py::gil_scoped_release>())
        .def("get_batch", &ReplayBuffer::get_batch, py::arg("fraction"),
             py::arg("effective_batch_size"))
        .def("save_metadata", &ReplayBuffer::save_metadata)
        .def("state", &ReplayBuffer::state)
        .def("queue_occupancy", &ReplayBuffer::queue_occupancy)
        .def_static("load_metadata", &ReplayBuffer::load_metadata, py::arg("path"));

    py::enum_<TrainMode>(m, "TrainMode")
        .value("sequential", TrainMode::sequential)
        .value("replay", TrainMode::replay)
        .value("reptile", TrainMode::reptile)
        .value("mer", TrainMode::mer)
        .value("joint", TrainMode::joint);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("replay_ratio", &TrainConfig::replay_ratio)
        .def_readwrite("reptile_interval", &TrainConfig::reptile_interval)
        .def_readwrite("reptile_rate", &TrainConfig::reptile_rate)
        .def_readwrite("schedule", &TrainConfig::schedule)
        .def_readwrite("mode", &TrainConfig::mode)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("eval_interval", &TrainConfig::eval_interval)
        .def_readwrite("async_prefetch", &TrainConfig::async_prefetch);

    py::class_<MetricsRecord>(m, "MetricsRecord")
        .def(py::init([](std::uint64_t step, int eval_task, double val_loss, int train_task) {
                 return MetricsRecord{step, eval_task, val_loss, train_task};
             }),
             py::arg("update_step"), py::arg("eval_task"), py::arg("val_loss"),
             py::arg("train_task"))
        .def_readonly("update_step", &MetricsRecord::update_step)
        .def_readonly("eval_task", &MetricsRecord::eval_task)
        .def_readonly("val_loss", &MetricsRecord::val_loss)
        .def_readonly("train_task", &MetricsRecord::train_task);

    py::class_<MetricsLog>(m, "MetricsLog")
        .def(py::init<>())
        .def_readwrite("records", &MetricsLog::records)
        .def_readwrite("task_boundaries", &MetricsLog::task_boundaries)
        .def("final_step", &MetricsLog::final_step);

    m.def("forgetting_score", &forgetting_score, py::arg("log"), py::arg("task"),
          py::arg("at_step"));
    m.def("retained_loss", &retained_loss, py::arg("log"));
    m.def("learned_loss", &learned_loss, py::arg("log"));
    m.def("mean_end_of_run_forgetting", &mean_end_of_run_forgetting, py::arg("log"));

    py::class_<AlignmentResult>(m, "AlignmentResult")
        .def_readonly("dot", &AlignmentResult::dot)
        .def_readonly("cosine", &AlignmentResult::cosine)
        .def_readonly("degenerate", &AlignmentResult::degenerate);

    m.def("grad_alignment", &grad_alignment, py::arg("params"), py::arg("batch_a"),
          py::arg("batch_b"));

    py::class_<PowerLawFit>(m, "PowerLawFit")
        .def_readonly("a", &PowerLawFit::a)
        .def_readonly("b", &PowerLawFit::b)
        .def_readonly("c", &PowerLawFit::c)
        .def_readonly("residual", &PowerLawFit::residual)
        .def_readonly("wide_b_uncertainty", &PowerLawFit::wide_b_uncertainty);

    m.def("fit_power_law", [](const std::vector<double>& xs, const std::vector<double>& ys) {
        return fit_power_law(xs, ys);
    });

    py::class_<TrainCounters>(m, "TrainCounters")
        .def_readonly("update_steps", &TrainCounters::update_steps)
        .def_readonly("incoming_samples", &TrainCounters::incoming_samples)
        .def_readonly("incoming_tokens", &TrainCounters::incoming_tokens)
        .def_readonly("processed_tokens", &TrainCounters::processed_tokens)
        .def_readonly("reptile_applications", &TrainCounters::reptile_applications)
        .def_readonly("reptile_elementwise_ops", &TrainCounters::reptile_elementwise_ops);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("params", &TrainResult::params)
        .def_readonly("log", &TrainResult::log)
        .def_readonly("counters", &TrainResult::counters);

    m.def(
        "train",
        [](const TaskStream& stream, const ModelParams& initial, const TrainConfig& config,
           ReplayBuffer* buffer, std::size_t validation_rows) {
            EvalSuite eval;
            for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
                eval.task_validation.push_back(validation_set(stream, t, validation_rows));
            }
            return train(stream, initial, config, buffer, eval);
        },
        py::arg("stream"), py::arg("initial"), py::arg("config"), py::arg("buffer") = nullptr,
        py::arg("validation_rows") = 128);

    m.def(
        "joint_train",
        [](const TaskStream& stream, const ModelParams& initial, const TrainConfig& config,
           std::size_t validation_rows) {
            EvalSuite eval;
            for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
                eval.task_validation.push_back(validation_set(stream, t, validation_rows));
            }
            return joint_train(stream, initial, config, eval);
        },
        py::arg("stream"), py::arg("initial"), py::arg("config"), py::arg("validation_rows") = 128);

    m.def("run_experiment", [](const std::filesystem::path& config_path) {
        const RunSummary s = run_experiment(config_path);
        py::dict d;
        d["cells_total"] = s.cells_total;
        d["cells_trained"] = s.cells_trained;
        d["cells_skipped"] = s.cells_skipped;
        return d;
    });
}
