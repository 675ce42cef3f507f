#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "cpt/sample_batch.hpp"

namespace cpt {

/// Shape of the fixed-context feed-forward language model:
/// embed each of `context` previous tokens, concatenate, one tanh hidden
/// layer, softmax over the vocabulary.
struct ModelDims {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::size_t context = 0;
    std::size_t hidden_dim = 0;

    std::size_t param_count() const noexcept {
        return vocab_size * embed_dim + context * embed_dim * hidden_dim + hidden_dim +
               hidden_dim * vocab_size + vocab_size;
    }
    void validate() const;
    bool operator==(const ModelDims&) const = default;
};

constexpr std::array<const char*, 5> kParamFieldNames = {"embeddings", "w1", "b1", "w2", "b2"};

/// Model parameters. Layouts, all row-major doubles:
///   embeddings: vocab_size x embed_dim
///   w1:         (context*embed_dim) x hidden_dim
///   b1:         hidden_dim
///   w2:         hidden_dim x vocab_size
///   b2:         vocab_size
struct ModelParams {
    ModelDims dims;
    std::vector<double> embeddings;
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    std::vector<double> b2;

    static ModelParams zeros(const ModelDims& dims);
    std::size_t param_count() const noexcept { return dims.param_count(); }

    std::array<std::vector<double>*, 5> fields() {
        return {&embeddings, &w1, &b1, &w2, &b2};
    }
    std::array<const std::vector<double>*, 5> fields() const {
        return {&embeddings, &w1, &b1, &w2, &b2};
    }
};

/// Derivatives of the mean loss, shape-congruent with ModelParams.
struct Gradients {
    std::vector<double> embeddings;
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    std::vector<double> b2;

    static Gradients zeros(const ModelDims& dims);

    std::array<std::vector<double>*, 5> fields() {
        return {&embeddings, &w1, &b1, &w2, &b2};
    }
    std::array<const std::vector<double>*, 5> fields() const {
        return {&embeddings, &w1, &b1, &w2, &b2};
    }
};

/// Deterministic init: weights ~ N(0, 1/fan_in), biases zero.
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

/// Mean cross-entropy in nats over all rows and all positions in
/// [context, seq_len), double precision, log-sum-exp stabilized.
double loss(const ModelParams& params, const SampleBatch& batch);

/// Same loss value as loss(), plus exact analytic gradients of it.
std::pair<double, Gradients> loss_and_grad(const ModelParams& params, const SampleBatch& batch);

/// Checkpoint I/O: little-endian header of five u64 (vocab_size, embed_dim,
/// context, hidden_dim, param_count), then raw doubles in field order.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace cpt
