#include "cpt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "cpt/errors.hpp"

namespace cpt {

namespace {

// C = A (rows x inner) * B (inner x cols), row-major, C preinitialized.
void matmul_acc(const double* a, const double* b, double* c, std::size_t rows,
                std::size_t inner, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double* arow = a + i * inner;
        double* crow = c + i * cols;
        for (std::size_t k = 0; k < inner; ++k) {
            const double av = arow[k];
            const double* brow = b + k * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C (inner x cols) += A^T (rows x inner) * B (rows x cols).
void matmul_at_b_acc(const double* a, const double* b, double* c, std::size_t rows,
                     std::size_t inner, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double* arow = a + i * inner;
        const double* brow = b + i * cols;
        for (std::size_t k = 0; k < inner; ++k) {
            const double av = arow[k];
            double* crow = c + k * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C (rows x k) = A (rows x cols) * B^T (k x cols).
void matmul_b_t(const double* a, const double* b, double* c, std::size_t rows,
                std::size_t cols, std::size_t k) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double* arow = a + i * cols;
        double* crow = c + i * k;
        for (std::size_t q = 0; q < k; ++q) {
            const double* brow = b + q * cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                acc += arow[j] * brow[j];
            }
            crow[q] = acc;
        }
    }
}

struct Forward {
    std::size_t examples = 0;     // rows * (seq_len - context)
    std::vector<double> x;        // examples x (context*embed_dim)
    std::vector<double> a1;       // examples x hidden, post-tanh
    std::vector<double> probs;    // examples x vocab, softmax
    std::vector<std::uint32_t> targets;
    double mean_loss = 0.0;
};

void check_batch(const ModelParams& params, const SampleBatch& batch) {
    const ModelDims& d = params.dims;
    if (batch.rows() == 0) {
        throw std::invalid_argument("loss: empty batch");
    }
    if (batch.seq_len < d.context + 1) {
        throw std::invalid_argument("loss: rows shorter than context+1 tokens");
    }
    for (std::uint32_t t : batch.tokens) {
        if (t >= d.vocab_size) {
            throw std::invalid_argument("loss: token id " + std::to_string(t) +
                                        " out of range for vocab " + std::to_string(d.vocab_size));
        }
    }
}

Forward run_forward(const ModelParams& params, const SampleBatch& batch) {
    const ModelDims& d = params.dims;
    const std::size_t rows = batch.rows();
    const std::size_t positions = batch.seq_len - d.context;
    const std::size_t in_dim = d.context * d.embed_dim;

    Forward f;
    f.examples = rows * positions;
    f.x.assign(f.examples * in_dim, 0.0);
    f.targets.resize(f.examples);

    // Gather context embeddings.
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = batch.row(r);
        for (std::size_t p = 0; p < positions; ++p) {
            const std::size_t e = r * positions + p;
            double* xrow = f.x.data() + e * in_dim;
            for (std::size_t c = 0; c < d.context; ++c) {
                const std::uint32_t tok = row[p + c];
                std::memcpy(xrow + c * d.embed_dim, params.embeddings.data() + tok * d.embed_dim,
                            d.embed_dim * sizeof(double));
            }
            f.targets[e] = row[p + d.context];
        }
    }

    // Hidden layer.
    f.a1.assign(f.examples * d.hidden_dim, 0.0);
    for (std::size_t e = 0; e < f.examples; ++e) {
        double* a1row = f.a1.data() + e * d.hidden_dim;
        std::memcpy(a1row, params.b1.data(), d.hidden_dim * sizeof(double));
    }
    matmul_acc(f.x.data(), params.w1.data(), f.a1.data(), f.examples, in_dim, d.hidden_dim);
    for (double& v : f.a1) {
        v = std::tanh(v);
    }

    // Logits, softmax, loss.
    f.probs.assign(f.examples * d.vocab_size, 0.0);
    for (std::size_t e = 0; e < f.examples; ++e) {
        std::memcpy(f.probs.data() + e * d.vocab_size, params.b2.data(),
                    d.vocab_size * sizeof(double));
    }
    matmul_acc(f.a1.data(), params.w2.data(), f.probs.data(), f.examples, d.hidden_dim,
               d.vocab_size);

    double total = 0.0;
    for (std::size_t e = 0; e < f.examples; ++e) {
        double* z = f.probs.data() + e * d.vocab_size;
        double zmax = z[0];
        for (std::size_t u = 1; u < d.vocab_size; ++u) {
            zmax = std::max(zmax, z[u]);
        }
        double sum = 0.0;
        for (std::size_t u = 0; u < d.vocab_size; ++u) {
            z[u] = std::exp(z[u] - zmax);
            sum += z[u];
        }
        const double inv = 1.0 / sum;
        for (std::size_t u = 0; u < d.vocab_size; ++u) {
            z[u] *= inv;
        }
        total += -std::log(z[f.targets[e]]);
    }
    f.mean_loss = total / static_cast<double>(f.examples);
    return f;
}

}  // namespace

void ModelDims::validate() const {
    if (vocab_size < 1 || embed_dim < 1 || context < 1 || hidden_dim < 1) {
        throw std::invalid_argument("ModelDims: all dimensions must be >= 1");
    }
}

ModelParams ModelParams::zeros(const ModelDims& dims) {
    dims.validate();
    ModelParams p;
    p.dims = dims;
    p.embeddings.assign(dims.vocab_size * dims.embed_dim, 0.0);
    p.w1.assign(dims.context * dims.embed_dim * dims.hidden_dim, 0.0);
    p.b1.assign(dims.hidden_dim, 0.0);
    p.w2.assign(dims.hidden_dim * dims.vocab_size, 0.0);
    p.b2.assign(dims.vocab_size, 0.0);
    return p;
}

Gradients Gradients::zeros(const ModelDims& dims) {
    Gradients g;
    g.embeddings.assign(dims.vocab_size * dims.embed_dim, 0.0);
    g.w1.assign(dims.context * dims.embed_dim * dims.hidden_dim, 0.0);
    g.b1.assign(dims.hidden_dim, 0.0);
    g.w2.assign(dims.hidden_dim * dims.vocab_size, 0.0);
    g.b2.assign(dims.vocab_size, 0.0);
    return g;
}

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
    ModelParams p = ModelParams::zeros(dims);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    auto fill = [&](std::vector<double>& w, std::size_t fan_in) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : w) {
            v = normal(gen) * scale;
        }
    };
    fill(p.embeddings, dims.embed_dim);
    fill(p.w1, dims.context * dims.embed_dim);
    fill(p.w2, dims.hidden_dim);
    // b1, b2 stay zero.
    return p;
}

double loss(const ModelParams& params, const SampleBatch& batch) {
    check_batch(params, batch);
    return run_forward(params, batch).mean_loss;
}

std::pair<double, Gradients> loss_and_grad(const ModelParams& params, const SampleBatch& batch) {
    check_batch(params, batch);
    const ModelDims& d = params.dims;
    Forward f = run_forward(params, batch);

    const std::size_t in_dim = d.context * d.embed_dim;
    const std::size_t positions = batch.seq_len - d.context;
    const double inv_examples = 1.0 / static_cast<double>(f.examples);

    Gradients g = Gradients::zeros(d);

    // dL/dz2 = (softmax - one_hot(target)) / examples; reuse probs in place.
    std::vector<double>& dz2 = f.probs;
    for (std::size_t e = 0; e < f.examples; ++e) {
        double* row = dz2.data() + e * d.vocab_size;
        for (std::size_t u = 0; u < d.vocab_size; ++u) {
            row[u] *= inv_examples;
        }
        row[f.targets[e]] -= inv_examples;
    }

    // Output layer.
    matmul_at_b_acc(f.a1.data(), dz2.data(), g.w2.data(), f.examples, d.hidden_dim, d.vocab_size);
    for (std::size_t e = 0; e < f.examples; ++e) {
        const double* row = dz2.data() + e * d.vocab_size;
        for (std::size_t u = 0; u < d.vocab_size; ++u) {
            g.b2[u] += row[u];
        }
    }

    // Hidden layer: dz1 = (dz2 * w2^T) .* (1 - a1^2).
    std::vector<double> dz1(f.examples * d.hidden_dim);
    matmul_b_t(dz2.data(), params.w2.data(), dz1.data(), f.examples, d.vocab_size, d.hidden_dim);
    for (std::size_t i = 0; i < dz1.size(); ++i) {
        const double a = f.a1[i];
        dz1[i] *= 1.0 - a * a;
    }

    matmul_at_b_acc(f.x.data(), dz1.data(), g.w1.data(), f.examples, in_dim, d.hidden_dim);
    for (std::size_t e = 0; e < f.examples; ++e) {
        const double* row = dz1.data() + e * d.hidden_dim;
        for (std::size_t q = 0; q < d.hidden_dim; ++q) {
            g.b1[q] += row[q];
        }
    }

    // Input layer: dx = dz1 * w1^T, scattered back into the context embeddings.
    std::vector<double> dx(f.examples * in_dim);
    matmul_b_t(dz1.data(), params.w1.data(), dx.data(), f.examples, d.hidden_dim, in_dim);
    const std::size_t rows = batch.rows();
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = batch.row(r);
        for (std::size_t p = 0; p < positions; ++p) {
            const double* dxrow = dx.data() + (r * positions + p) * in_dim;
            for (std::size_t c = 0; c < d.context; ++c) {
                double* target = g.embeddings.data() + row[p + c] * d.embed_dim;
                const double* src = dxrow + c * d.embed_dim;
                for (std::size_t j = 0; j < d.embed_dim; ++j) {
                    target[j] += src[j];
                }
            }
        }
    }

    return {f.mean_loss, std::move(g)};
}

namespace {

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return v;
}

}  // namespace

void save_params(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("save_params: cannot open " + path.string());
    }
    write_u64(out, params.dims.vocab_size);
    write_u64(out, params.dims.embed_dim);
    write_u64(out, params.dims.context);
    write_u64(out, params.dims.hidden_dim);
    write_u64(out, params.param_count());
    for (const auto* field : params.fields()) {
        out.write(reinterpret_cast<const char*>(field->data()),
                  static_cast<std::streamsize>(field->size() * sizeof(double)));
    }
    if (!out) {
        throw std::runtime_error("save_params: write failed for " + path.string());
    }
}

ModelParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("load_params: cannot open " + path.string());
    }
    ModelDims dims;
    dims.vocab_size = read_u64(in);
    dims.embed_dim = read_u64(in);
    dims.context = read_u64(in);
    dims.hidden_dim = read_u64(in);
    const std::uint64_t declared = read_u64(in);
    if (!in) {
        throw ParseError("header", "checkpoint shorter than its header");
    }
    dims.validate();
    if (declared != dims.param_count()) {
        throw ParseError("param_count", "header count does not match dimensions");
    }
    ModelParams p = ModelParams::zeros(dims);
    for (auto* field : p.fields()) {
        in.read(reinterpret_cast<char*>(field->data()),
                static_cast<std::streamsize>(field->size() * sizeof(double)));
    }
    if (!in) {
        throw ParseError("parameters", "checkpoint truncated");
    }
    return p;
}

}  // namespace cpt
