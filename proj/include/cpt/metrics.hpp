#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpt/model.hpp"
#include "cpt/sample_batch.hpp"

namespace cpt {

struct MetricsRecord {
    std::uint64_t update_step = 0;
    int eval_task = 0;
    double val_loss = 0.0;   // nats
    int train_task = 0;      // task being trained when evaluated; -1 for joint
};

/// Time-indexed validation losses plus the step at which each task finished
/// training (task_boundaries[task_id]).
struct MetricsLog {
    std::vector<MetricsRecord> records;
    std::vector<std::uint64_t> task_boundaries;

    std::uint64_t final_step() const;
    /// Loss recorded for (task, step); throws IncompleteLogError if absent.
    double loss_at(int task, std::uint64_t step) const;
    int num_tasks() const { return static_cast<int>(task_boundaries.size()); }
};

/// Validation loss at `at_step` minus the best (minimum) loss recorded for
/// the task at any strictly earlier step. Positive = forgetting, negative =
/// backward transfer. Throws FirstEvaluationError when no earlier record
/// exists.
double forgetting_score(const MetricsLog& log, int task, std::uint64_t at_step);

/// Unweighted mean of the final-step validation losses across tasks.
double retained_loss(const MetricsLog& log);

/// Mean over tasks of the loss recorded at each task's own boundary; later
/// records never affect it.
double learned_loss(const MetricsLog& log);

/// Final loss minus the loss at the task's own boundary. Averaged over tasks
/// this satisfies retained = learned + mean exactly, which is the forgetting
/// number reported in run summaries.
double end_of_run_forgetting(const MetricsLog& log, int task);
double mean_end_of_run_forgetting(const MetricsLog& log);

struct AlignmentResult {
    double dot = 0.0;
    double cosine = 0.0;
    bool degenerate = false;  // a zero gradient on either side
};

/// Inner product and cosine of the flattened loss gradients on two batches.
AlignmentResult grad_alignment(const ModelParams& params, const SampleBatch& batch_a,
                               const SampleBatch& batch_b);

struct PowerLawFit {
    double a = 0.0;        // amplitude
    double b = 0.0;        // exponent, > 0
    double c = 0.0;        // asymptote
    double residual = 0.0; // root-mean-square error
    bool wide_b_uncertainty = false;
};

/// Least-squares fit of y = a*x^(-b) + c: coarse grid over (b, c) with the
/// closed-form a per candidate, then local grid refinement.
PowerLawFit fit_power_law(std::span<const double> xs, std::span<const double> ys);

/// Norm of the third-order Taylor residual of the Reptile displacement for
/// two plain gradient-descent steps of size beta from `origin`:
///   || eps*(theta2 - theta0) - eps*(-beta*g1 - beta*g2 + beta^2*H2*g1) ||
/// where g1, g2 are gradients at the origin and H2*g1 is estimated by central
/// finite differences of the batch-2 gradient along g1. Shrinks as O(beta^3).
double reptile_taylor_residual(const ModelParams& origin, const SampleBatch& batch1,
                               const SampleBatch& batch2, double beta, double eps,
                               double fd_step = 1e-5);

}  // namespace cpt
