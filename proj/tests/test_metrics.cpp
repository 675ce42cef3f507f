#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cpt/errors.hpp"
#include "cpt/metrics.hpp"
#include "cpt/task_stream.hpp"
#include "oracles.hpp"

using namespace cpt;

namespace {

MetricsLog three_task_log() {
    // Tasks 0..2 trained in order, boundaries at steps 10/20/30, final at 30.
    MetricsLog log;
    log.task_boundaries = {10, 20, 30};
    auto rec = [&](std::uint64_t step, int task, double loss_value, int train_task) {
        log.records.push_back({step, task, loss_value, train_task});
    };
    rec(0, 0, 3.5, 0);  rec(0, 1, 3.5, 0);  rec(0, 2, 3.5, 0);
    rec(10, 0, 2.0, 0); rec(10, 1, 3.4, 0); rec(10, 2, 3.4, 0);
    rec(20, 0, 2.5, 1); rec(20, 1, 2.1, 1); rec(20, 2, 3.3, 1);
    rec(30, 0, 2.8, 2); rec(30, 1, 2.4, 2); rec(30, 2, 2.2, 2);
    return log;
}

}  // namespace

TEST_CASE("forgetting is current loss minus the best past loss") {
    const MetricsLog log = three_task_log();
    // Task 0: best past at step 10 is 2.0; at step 20 the loss is 2.5.
    CHECK(forgetting_score(log, 0, 20) == doctest::Approx(0.5).epsilon(1e-12));
    // Equal to the best past: zero.
    MetricsLog flat = log;
    flat.records.push_back({40, 0, 2.0, 2});
    CHECK(forgetting_score(flat, 0, 40) == doctest::Approx(0.0).epsilon(1e-12));
    // Backward transfer shows up negative.
    MetricsLog better = log;
    better.records.push_back({40, 0, 1.8, 2});
    CHECK(forgetting_score(better, 0, 40) == doctest::Approx(-0.2).epsilon(1e-12));
}

TEST_CASE("forgetting is undefined before the first evaluation") {
    const MetricsLog log = three_task_log();
    CHECK_THROWS_AS(forgetting_score(log, 0, 0), FirstEvaluationError);
}

TEST_CASE("retained loss reproduces published table arithmetic") {
    MetricsLog log;
    log.task_boundaries = {1, 2, 3};
    log.records = {
        {1, 0, 4.10, 0}, {1, 1, 3.00, 0}, {1, 2, 3.00, 0},
        {2, 0, 4.05, 1}, {2, 1, 2.30, 1}, {2, 2, 2.90, 1},
        {3, 0, 4.03, 2}, {3, 1, 2.28, 2}, {3, 2, 2.27, 2},
    };
    CHECK(retained_loss(log) == doctest::Approx((4.03 + 2.28 + 2.27) / 3.0).epsilon(1e-15));
    CHECK(std::abs(retained_loss(log) - 2.86) < 1e-12);
}

TEST_CASE("learned loss uses each task's boundary and ignores later drift") {
    MetricsLog log;
    log.task_boundaries = {1, 2, 3};
    log.records = {
        {1, 0, 3.20, 0}, {1, 1, 3.40, 0}, {1, 2, 3.40, 0},
        {2, 0, 3.60, 1}, {2, 1, 2.10, 1}, {2, 2, 3.30, 1},
        {3, 0, 4.00, 2}, {3, 1, 2.50, 2}, {3, 2, 2.27, 2},
    };
    CHECK(learned_loss(log) == doctest::Approx((3.20 + 2.10 + 2.27) / 3.0).epsilon(1e-15));
    CHECK(std::abs(learned_loss(log) - 2.52333333333333333) < 1e-12);

    // Appending post-boundary records does not change it.
    MetricsLog extended = log;
    extended.records.push_back({4, 0, 9.0, 2});
    extended.records.push_back({4, 1, 9.0, 2});
    extended.records.push_back({4, 2, 9.0, 2});
    CHECK(learned_loss(extended) == learned_loss(log));

    // Single task: learned equals that task's boundary loss.
    MetricsLog single;
    single.task_boundaries = {5};
    single.records = {{5, 0, 1.25, 0}};
    CHECK(learned_loss(single) == 1.25);
    CHECK(retained_loss(single) == 1.25);
}

TEST_CASE("missing final or boundary records raise incomplete-log errors") {
    MetricsLog log;
    log.task_boundaries = {1, 2};
    log.records = {{1, 0, 3.0, 0}, {2, 0, 3.1, 1}};  // task 1 never evaluated
    CHECK_THROWS_AS(retained_loss(log), IncompleteLogError);
    CHECK_THROWS_AS(learned_loss(log), IncompleteLogError);
}

TEST_CASE("retained equals learned plus mean end-of-run forgetting") {
    const MetricsLog log = three_task_log();
    const double retained = retained_loss(log);
    const double learned = learned_loss(log);
    const double forgetting = mean_end_of_run_forgetting(log);
    CHECK(std::abs(retained - (learned + forgetting)) < 1e-9);
    // The last task just finished, so its end-of-run forgetting is zero.
    CHECK(end_of_run_forgetting(log, 2) == 0.0);
}

TEST_CASE("gradient alignment of a batch with itself is cosine one") {
    const ModelDims dims{16, 8, 2, 12};
    const ModelParams params = init_params(dims, 2);
    const TaskSpec task = make_task(3, 16, 0.5);
    const SampleBatch batch = sample_sequences(task, 6, 12, 4);
    const AlignmentResult r = grad_alignment(params, batch, batch);
    CHECK(r.cosine == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.dot > 0.0);
    CHECK(!r.degenerate);

    // dot(a, a) equals the squared gradient norm.
    const auto flat = oracles::flatten(loss_and_grad(params, batch).second);
    double norm_sq = 0.0;
    for (double v : flat) {
        norm_sq += v * v;
    }
    CHECK(r.dot == doctest::Approx(norm_sq).epsilon(1e-12));
}

TEST_CASE("opposite targets under a shared context give cosine minus one") {
    // vocab 2, context 1: the two single-position batches have gradients that
    // are exact negative multiples of each other.
    const ModelDims dims{2, 4, 1, 6};
    const ModelParams params = init_params(dims, 8);
    SampleBatch to_zero(2);
    to_zero.tokens = {1, 0};
    SampleBatch to_one(2);
    to_one.tokens = {1, 1};
    const AlignmentResult r = grad_alignment(params, to_zero, to_one);
    CHECK(r.cosine == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(r.dot < 0.0);
}

TEST_CASE("a zero gradient is flagged degenerate with cosine zero") {
    // At all-zero params with balanced targets the mean gradient vanishes.
    const ModelDims dims{2, 4, 1, 6};
    const ModelParams params = ModelParams::zeros(dims);
    SampleBatch balanced(2);
    balanced.tokens = {0, 0, 0, 1};  // two rows, same context, opposite targets
    SampleBatch other(2);
    other.tokens = {1, 0};
    const AlignmentResult r = grad_alignment(params, balanced, other);
    CHECK(r.degenerate);
    CHECK(r.cosine == 0.0);
}

TEST_CASE("the alignment dot is bilinear in gradient scale") {
    std::vector<double> g = {1.0, -2.0, 0.5};
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    const double base = dot(g, g);
    std::vector<double> scaled = g;
    for (double& v : scaled) v *= 3.0;
    CHECK(dot(scaled, scaled) == doctest::Approx(9.0 * base).epsilon(1e-12));
}

TEST_CASE("power-law fit recovers noiseless parameters within 5 percent") {
    const std::vector<double> xs = {1, 2, 4, 8, 16, 32};
    std::vector<double> ys;
    for (double x : xs) {
        ys.push_back(2.0 * std::pow(x, -0.5) + 1.0);
    }
    const PowerLawFit fit = fit_power_law(xs, ys);
    CHECK(std::abs(fit.a - 2.0) / 2.0 < 0.05);
    CHECK(std::abs(fit.b - 0.5) / 0.5 < 0.05);
    CHECK(std::abs(fit.c - 1.0) / 1.0 < 0.05);
    CHECK(fit.residual < 1e-6);
    CHECK(!fit.wide_b_uncertainty);

    // The reported residual is self-consistent with the returned parameters.
    double rss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (fit.a * std::pow(xs[i], -fit.b) + fit.c);
        rss += r * r;
    }
    CHECK(std::sqrt(rss / xs.size()) == doctest::Approx(fit.residual).epsilon(1e-9));
}

TEST_CASE("constant data leaves the exponent unconstrained and is flagged") {
    const std::vector<double> xs = {1, 2, 4, 8, 16};
    const std::vector<double> ys = {3.0, 3.0, 3.0, 3.0, 3.0};
    const PowerLawFit fit = fit_power_law(xs, ys);
    CHECK(fit.wide_b_uncertainty);
    CHECK(std::abs(fit.c - 3.0) < 1e-6);
    CHECK(fit.residual < 1e-9);
}

TEST_CASE("shifting all ys shifts only the asymptote") {
    const std::vector<double> xs = {1, 2, 4, 8, 16, 32};
    std::vector<double> ys;
    for (double x : xs) {
        ys.push_back(2.0 * std::pow(x, -0.5) + 1.0);
    }
    std::vector<double> shifted = ys;
    for (double& y : shifted) {
        y += 5.0;
    }
    const PowerLawFit base = fit_power_law(xs, ys);
    const PowerLawFit moved = fit_power_law(xs, shifted);
    CHECK(std::abs(moved.c - (base.c + 5.0)) < 0.01);
    CHECK(std::abs(moved.a - base.a) / base.a < 0.01);
    CHECK(std::abs(moved.b - base.b) / base.b < 0.01);
}

TEST_CASE("fit rejects undersized or degenerate inputs") {
    CHECK_THROWS_AS(fit_power_law(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}),
                    InsufficientDataError);
    CHECK_THROWS_AS(
        fit_power_law(std::vector<double>{1, 2, 2, 8}, std::vector<double>{1, 2, 3, 4}),
        std::invalid_argument);
    CHECK_THROWS_AS(
        fit_power_law(std::vector<double>{0, 2, 4, 8}, std::vector<double>{1, 2, 3, 4}),
        std::invalid_argument);
}

TEST_CASE("the Reptile Taylor residual shrinks roughly cubically in beta") {
    const ModelDims dims{8, 4, 2, 8};
    const ModelParams params = init_params(dims, 31);
    const TaskSpec task = make_task(17, 8, 0.5);
    const SampleBatch b1 = sample_sequences(task, 4, 8, 71);
    const SampleBatch b2 = sample_sequences(task, 4, 8, 72);
    const double beta = 1e-3;
    const double r1 = reptile_taylor_residual(params, b1, b2, beta, 0.1);
    const double r2 = reptile_taylor_residual(params, b1, b2, beta / 2.0, 0.1);
    CHECK(r1 > 0.0);
    const double ratio = r1 / r2;
    CHECK(ratio > 5.0);
    CHECK(ratio < 12.0);
}
