#pragma once

#include <cstdint>
#include <filesystem>

#include "cpt/model.hpp"

namespace cpt {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// First/second moment estimates plus the step count.
struct AdamWState {
    Gradients m;
    Gradients v;
    std::uint64_t step = 0;

    static AdamWState init(const ModelDims& dims) {
        return {Gradients::zeros(dims), Gradients::zeros(dims), 0};
    }
};

/// One decoupled-weight-decay Adam update, in place:
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2,  bias-corrected,
///   theta <- theta - lr*(m_hat/(sqrt(v_hat)+eps) + wd*theta).
/// Throws NonFiniteGradientError naming the field on a NaN/inf gradient.
void adamw_step(ModelParams& params, const Gradients& grads, AdamWState& state, double lr,
                const AdamWOptions& opt = {});

/// Cosine decay with linear warmup. Step 0 already gets peak/warmup.
struct ScheduleConfig {
    double peak_lr = 1e-3;
    std::uint64_t warmup_steps = 0;
    std::uint64_t total_steps = 0;
    double min_lr = 0.0;

    void validate() const;
};

/// Learning rate at an update step; steps past total_steps clamp to min_lr.
double lr_at(const ScheduleConfig& schedule, std::uint64_t step);

/// Optimizer checkpoint: u64 step, then m and v as raw doubles in field order.
void save_adamw_state(const AdamWState& state, const std::filesystem::path& path);
AdamWState load_adamw_state(const std::filesystem::path& path, const ModelDims& dims);

}  // namespace cpt
