#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace cpt {

/// A dense matrix of token ids, row-major, every row exactly seq_len tokens.
/// The empty batch (rows() == 0) doubles as the "nothing available" result.
struct SampleBatch {
    std::size_t seq_len = 0;
    std::vector<std::uint32_t> tokens;

    SampleBatch() = default;
    explicit SampleBatch(std::size_t seq_len_) : seq_len(seq_len_) {}
    SampleBatch(std::size_t seq_len_, std::vector<std::uint32_t> tokens_)
        : seq_len(seq_len_), tokens(std::move(tokens_)) {
        if (seq_len == 0 || tokens.size() % seq_len != 0) {
            throw std::invalid_argument("SampleBatch: token count is not a multiple of seq_len");
        }
    }

    std::size_t rows() const noexcept { return seq_len == 0 ? 0 : tokens.size() / seq_len; }
    bool empty() const noexcept { return tokens.empty(); }

    std::span<const std::uint32_t> row(std::size_t r) const {
        return {tokens.data() + r * seq_len, seq_len};
    }
    std::span<std::uint32_t> row(std::size_t r) {
        return {tokens.data() + r * seq_len, seq_len};
    }

    void append_row(std::span<const std::uint32_t> row_tokens) {
        if (row_tokens.size() != seq_len) {
            throw std::invalid_argument("SampleBatch: row width mismatch");
        }
        tokens.insert(tokens.end(), row_tokens.begin(), row_tokens.end());
    }

    void append(const SampleBatch& other) {
        if (other.empty()) {
            return;
        }
        if (other.seq_len != seq_len) {
            throw std::invalid_argument("SampleBatch: cannot append batch of different width");
        }
        tokens.insert(tokens.end(), other.tokens.begin(), other.tokens.end());
    }

    std::uint32_t max_token() const noexcept {
        std::uint32_t m = 0;
        for (std::uint32_t t : tokens) {
            if (t > m) {
                m = t;
            }
        }
        return m;
    }
};

}  // namespace cpt
