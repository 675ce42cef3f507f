#include "cpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "cpt/errors.hpp"

namespace cpt {

std::uint64_t MetricsLog::final_step() const {
    std::uint64_t last = 0;
    for (const MetricsRecord& r : records) {
        last = std::max(last, r.update_step);
    }
    return last;
}

double MetricsLog::loss_at(int task, std::uint64_t step) const {
    for (const MetricsRecord& r : records) {
        if (r.eval_task == task && r.update_step == step) {
            return r.val_loss;
        }
    }
    throw IncompleteLogError("no record for task " + std::to_string(task) + " at step " +
                             std::to_string(step));
}

double forgetting_score(const MetricsLog& log, int task, std::uint64_t at_step) {
    const double current = log.loss_at(task, at_step);
    double best_past = std::numeric_limits<double>::infinity();
    bool found = false;
    for (const MetricsRecord& r : log.records) {
        if (r.eval_task == task && r.update_step < at_step) {
            best_past = std::min(best_past, r.val_loss);
            found = true;
        }
    }
    if (!found) {
        throw FirstEvaluationError("forgetting undefined for task " + std::to_string(task) +
                                   ": no evaluation before step " + std::to_string(at_step));
    }
    return current - best_past;
}

double retained_loss(const MetricsLog& log) {
    if (log.task_boundaries.empty()) {
        throw IncompleteLogError("log has no tasks");
    }
    const std::uint64_t last = log.final_step();
    double sum = 0.0;
    for (int t = 0; t < log.num_tasks(); ++t) {
        sum += log.loss_at(t, last);
    }
    return sum / static_cast<double>(log.num_tasks());
}

double learned_loss(const MetricsLog& log) {
    if (log.task_boundaries.empty()) {
        throw IncompleteLogError("log has no tasks");
    }
    double sum = 0.0;
    for (int t = 0; t < log.num_tasks(); ++t) {
        sum += log.loss_at(t, log.task_boundaries[static_cast<std::size_t>(t)]);
    }
    return sum / static_cast<double>(log.num_tasks());
}

double end_of_run_forgetting(const MetricsLog& log, int task) {
    const std::uint64_t boundary = log.task_boundaries.at(static_cast<std::size_t>(task));
    return log.loss_at(task, log.final_step()) - log.loss_at(task, boundary);
}

double mean_end_of_run_forgetting(const MetricsLog& log) {
    if (log.task_boundaries.empty()) {
        throw IncompleteLogError("log has no tasks");
    }
    double sum = 0.0;
    for (int t = 0; t < log.num_tasks(); ++t) {
        sum += end_of_run_forgetting(log, t);
    }
    return sum / static_cast<double>(log.num_tasks());
}

namespace {

double dot_fields(const Gradients& a, const Gradients& b) {
    double acc = 0.0;
    auto af = a.fields();
    auto bf = b.fields();
    for (std::size_t f = 0; f < af.size(); ++f) {
        const double* x = af[f]->data();
        const double* y = bf[f]->data();
        const std::size_t n = af[f]->size();
        for (std::size_t i = 0; i < n; ++i) {
            acc += x[i] * y[i];
        }
    }
    return acc;
}

}  // namespace

AlignmentResult grad_alignment(const ModelParams& params, const SampleBatch& batch_a,
                               const SampleBatch& batch_b) {
    const Gradients ga = loss_and_grad(params, batch_a).second;
    const Gradients gb = loss_and_grad(params, batch_b).second;
    AlignmentResult out;
    out.dot = dot_fields(ga, gb);
    const double na = std::sqrt(dot_fields(ga, ga));
    const double nb = std::sqrt(dot_fields(gb, gb));
    if (na == 0.0 || nb == 0.0) {
        out.cosine = 0.0;
        out.degenerate = true;
        return out;
    }
    out.cosine = std::clamp(out.dot / (na * nb), -1.0, 1.0);
    return out;
}

namespace {

struct FitCandidate {
    double a = 0.0;
    double b = 1.0;
    double c = 0.0;
    double rss = std::numeric_limits<double>::infinity();
};

// Closed-form amplitude and residual sum of squares for fixed (b, c).
FitCandidate solve_amplitude(std::span<const double> xs, std::span<const double> ys, double b,
                             double c) {
    FitCandidate cand;
    cand.b = b;
    cand.c = c;
    double num = 0.0;
    double den = 0.0;
    const std::size_t n = xs.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::pow(xs[i], -b);
        num += (ys[i] - c) * w;
        den += w * w;
    }
    cand.a = den > 0.0 ? num / den : 0.0;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ys[i] - (cand.a * std::pow(xs[i], -b) + c);
        rss += r * r;
    }
    cand.rss = rss;
    return cand;
}

}  // namespace

PowerLawFit fit_power_law(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw std::invalid_argument("fit_power_law: xs and ys differ in length");
    }
    if (xs.size() < 4) {
        throw InsufficientDataError("fit_power_law: need at least 4 points, got " +
                                    std::to_string(xs.size()));
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0)) {
            throw std::invalid_argument("fit_power_law: xs must be strictly positive");
        }
        if (!(ys[i] > 0.0)) {
            throw std::invalid_argument("fit_power_law: ys must be strictly positive");
        }
        for (std::size_t j = i + 1; j < xs.size(); ++j) {
            if (xs[i] == xs[j]) {
                throw std::invalid_argument("fit_power_law: xs must be distinct");
            }
        }
    }

    const double y_min = *std::min_element(ys.begin(), ys.end());
    const double y_max = *std::max_element(ys.begin(), ys.end());
    const double range = y_max - y_min;

    // Coarse log grid over the exponent.
    constexpr std::size_t kBGrid = 80;
    constexpr double kBLo = 0.02;
    constexpr double kBHi = 5.0;
    std::vector<double> b_grid(kBGrid);
    for (std::size_t i = 0; i < kBGrid; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(kBGrid - 1);
        b_grid[i] = kBLo * std::pow(kBHi / kBLo, t);
    }

    // Asymptote grid anchored on the data so fits are shift-equivariant.
    std::vector<double> c_grid;
    if (range > 0.0) {
        constexpr std::size_t kCGrid = 121;
        const double c_lo = y_min - 2.0 * range;
        const double c_hi = y_min + 0.5 * range;
        for (std::size_t i = 0; i < kCGrid; ++i) {
            c_grid.push_back(c_lo + (c_hi - c_lo) * static_cast<double>(i) /
                                        static_cast<double>(kCGrid - 1));
        }
    } else {
        c_grid.push_back(y_min);
    }

    FitCandidate best;
    std::vector<double> best_rss_per_b(kBGrid, std::numeric_limits<double>::infinity());
    for (std::size_t bi = 0; bi < kBGrid; ++bi) {
        for (double c : c_grid) {
            const FitCandidate cand = solve_amplitude(xs, ys, b_grid[bi], c);
            best_rss_per_b[bi] = std::min(best_rss_per_b[bi], cand.rss);
            if (cand.rss < best.rss) {
                best = cand;
            }
        }
    }

    // Exponent identifiability: if a wide span of b values fits essentially
    // as well as the best, the data do not constrain b.
    const double rss_spread =
        *std::max_element(best_rss_per_b.begin(), best_rss_per_b.end()) - best.rss;
    const double accept = best.rss + 1e-12 + 0.01 * rss_spread;
    double b_good_lo = best.b;
    double b_good_hi = best.b;
    for (std::size_t bi = 0; bi < kBGrid; ++bi) {
        if (best_rss_per_b[bi] <= accept) {
            b_good_lo = std::min(b_good_lo, b_grid[bi]);
            b_good_hi = std::max(b_good_hi, b_grid[bi]);
        }
    }
    const bool wide_b = b_good_hi > 4.0 * b_good_lo;

    // Local refinement around the coarse optimum.
    double b_span = best.b * 0.2;
    double c_span = range > 0.0 ? range * 0.05 : 0.0;
    for (int round = 0; round < 9; ++round) {
        const FitCandidate center = best;
        constexpr int kRef = 12;
        for (int i = -kRef; i <= kRef; ++i) {
            const double b = center.b + b_span * static_cast<double>(i) / kRef;
            if (b <= 0.0) {
                continue;
            }
            for (int j = -kRef; j <= kRef; ++j) {
                const double c = center.c + c_span * static_cast<double>(j) / kRef;
                const FitCandidate cand = solve_amplitude(xs, ys, b, c);
                if (cand.rss < best.rss) {
                    best = cand;
                }
            }
        }
        b_span /= 6.0;
        c_span /= 6.0;
    }

    PowerLawFit fit;
    fit.a = best.a;
    fit.b = best.b;
    fit.c = best.c;
    fit.residual = std::sqrt(best.rss / static_cast<double>(xs.size()));
    fit.wide_b_uncertainty = wide_b;
    return fit;
}

namespace {

void axpy(ModelParams& dst, const Gradients& g, double scale) {
    auto df = dst.fields();
    auto gf = g.fields();
    for (std::size_t f = 0; f < df.size(); ++f) {
        double* d = df[f]->data();
        const double* s = gf[f]->data();
        const std::size_t n = df[f]->size();
        for (std::size_t i = 0; i < n; ++i) {
            d[i] += scale * s[i];
        }
    }
}

}  // namespace

double reptile_taylor_residual(const ModelParams& origin, const SampleBatch& batch1,
                               const SampleBatch& batch2, double beta, double eps,
                               double fd_step) {
    const Gradients g1 = loss_and_grad(origin, batch1).second;
    const Gradients g2 = loss_and_grad(origin, batch2).second;

    // Two inner steps of plain gradient descent.
    ModelParams theta = origin;
    axpy(theta, g1, -beta);
    const Gradients g2_inner = loss_and_grad(theta, batch2).second;
    axpy(theta, g2_inner, -beta);

    // H2*g1 by central differences of the batch-2 gradient along g1.
    ModelParams plus = origin;
    axpy(plus, g1, fd_step);
    ModelParams minus = origin;
    axpy(minus, g1, -fd_step);
    const Gradients gp = loss_and_grad(plus, batch2).second;
    const Gradients gm = loss_and_grad(minus, batch2).second;

    double norm_sq = 0.0;
    auto tf = theta.fields();
    auto of = origin.fields();
    auto g1f = g1.fields();
    auto g2f = g2.fields();
    auto gpf = gp.fields();
    auto gmf = gm.fields();
    for (std::size_t f = 0; f < tf.size(); ++f) {
        const std::size_t n = tf[f]->size();
        const double* th = tf[f]->data();
        const double* o = of[f]->data();
        const double* a1 = g1f[f]->data();
        const double* a2 = g2f[f]->data();
        const double* p = gpf[f]->data();
        const double* m = gmf[f]->data();
        for (std::size_t i = 0; i < n; ++i) {
            const double h2g1 = (p[i] - m[i]) / (2.0 * fd_step);
            const double predicted = eps * (-beta * a1[i] - beta * a2[i] + beta * beta * h2g1);
            const double actual = eps * (th[i] - o[i]);
            const double r = actual - predicted;
            norm_sq += r * r;
        }
    }
    return std::sqrt(norm_sq);
}

}  // namespace cpt
