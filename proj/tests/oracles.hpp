#pragma once

// Test-side oracles, independent of the implementation paths they check.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cpt/model.hpp"
#include "cpt/sample_batch.hpp"

namespace oracles {

// Central-difference derivative of the loss w.r.t. one parameter coordinate.
inline double fd_loss_derivative(const cpt::ModelParams& params, const cpt::SampleBatch& batch,
                                 std::size_t field, std::size_t index, double h) {
    cpt::ModelParams plus = params;
    cpt::ModelParams minus = params;
    (*plus.fields()[field])[index] += h;
    (*minus.fields()[field])[index] -= h;
    return (cpt::loss(plus, batch) - cpt::loss(minus, batch)) / (2.0 * h);
}

// Conditional bigram frequencies from rollouts: counts[a][b] / counts[a][.].
inline std::vector<double> bigram_conditional(const cpt::SampleBatch& batch,
                                              std::size_t vocab) {
    std::vector<double> counts(vocab * vocab, 0.0);
    std::vector<double> row_totals(vocab, 0.0);
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        auto row = batch.row(r);
        for (std::size_t t = 0; t + 1 < batch.seq_len; ++t) {
            counts[row[t] * vocab + row[t + 1]] += 1.0;
            row_totals[row[t]] += 1.0;
        }
    }
    for (std::size_t a = 0; a < vocab; ++a) {
        for (std::size_t b = 0; b < vocab; ++b) {
            if (row_totals[a] > 0.0) {
                counts[a * vocab + b] /= row_totals[a];
            }
        }
    }
    return counts;
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return v.size() < 2 ? 0.0 : std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline std::vector<double> flatten(const cpt::Gradients& g) {
    std::vector<double> out;
    for (const auto* f : g.fields()) {
        out.insert(out.end(), f->begin(), f->end());
    }
    return out;
}

inline std::vector<double> flatten(const cpt::ModelParams& p) {
    std::vector<double> out;
    for (const auto* f : p.fields()) {
        out.insert(out.end(), f->begin(), f->end());
    }
    return out;
}

}  // namespace oracles
