#include "cpt/optim.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "cpt/errors.hpp"

namespace cpt {

void adamw_step(ModelParams& params, const Gradients& grads, AdamWState& state, double lr,
                const AdamWOptions& opt) {
    if (lr < 0.0) {
        throw std::invalid_argument("adamw_step: negative learning rate");
    }
    auto pf = params.fields();
    auto gf = grads.fields();
    auto mf = state.m.fields();
    auto vf = state.v.fields();

    for (std::size_t f = 0; f < pf.size(); ++f) {
        if (gf[f]->size() != pf[f]->size()) {
            throw std::invalid_argument("adamw_step: gradient shape mismatch in field '" +
                                        std::string(kParamFieldNames[f]) + "'");
        }
        for (double g : *gf[f]) {
            if (!std::isfinite(g)) {
                throw NonFiniteGradientError(kParamFieldNames[f]);
            }
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));

    for (std::size_t f = 0; f < pf.size(); ++f) {
        double* p = pf[f]->data();
        const double* g = gf[f]->data();
        double* m = mf[f]->data();
        double* v = vf[f]->data();
        const std::size_t n = pf[f]->size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (std::sqrt(v_hat) + opt.eps) + opt.weight_decay * p[i]);
        }
    }
}

void ScheduleConfig::validate() const {
    if (min_lr < 0.0 || min_lr > peak_lr) {
        throw std::invalid_argument("ScheduleConfig: need 0 <= min_lr <= peak_lr");
    }
    if (warmup_steps > total_steps) {
        throw std::invalid_argument("ScheduleConfig: warmup_steps exceeds total_steps");
    }
}

double lr_at(const ScheduleConfig& s, std::uint64_t step) {
    if (step < s.warmup_steps) {
        return s.peak_lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
    }
    if (step >= s.total_steps) {
        return s.min_lr;
    }
    const double t = static_cast<double>(step - s.warmup_steps) /
                     static_cast<double>(s.total_steps - s.warmup_steps);
    return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

void save_adamw_state(const AdamWState& state, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("save_adamw_state: cannot open " + path.string());
    }
    const std::uint64_t step = state.step;
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<unsigned char>((step >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf), 8);
    for (const auto* moments : {&state.m, &state.v}) {
        for (const auto* field : moments->fields()) {
            out.write(reinterpret_cast<const char*>(field->data()),
                      static_cast<std::streamsize>(field->size() * sizeof(double)));
        }
    }
    if (!out) {
        throw std::runtime_error("save_adamw_state: write failed for " + path.string());
    }
}

AdamWState load_adamw_state(const std::filesystem::path& path, const ModelDims& dims) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("load_adamw_state: cannot open " + path.string());
    }
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t step = 0;
    for (int i = 0; i < 8; ++i) {
        step |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    AdamWState state = AdamWState::init(dims);
    state.step = step;
    for (auto* moments : {&state.m, &state.v}) {
        for (auto* field : moments->fields()) {
            in.read(reinterpret_cast<char*>(field->data()),
                    static_cast<std::streamsize>(field->size() * sizeof(double)));
        }
    }
    if (!in) {
        throw ParseError("moments", "optimizer checkpoint truncated");
    }
    return state;
}

}  // namespace cpt
