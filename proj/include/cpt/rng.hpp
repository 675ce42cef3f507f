#pragma once

#include <cstdint>
#include <random>

namespace cpt::rng {

// splitmix64 finalizer; good avalanche, used only for seed derivation.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Named sub-streams so the same root seed never feeds two purposes.
enum class Stream : std::uint64_t {
    task_gen = 1,
    train_samples = 2,
    validation_samples = 3,
    buffer = 4,
    engine = 5,
    joint_shuffle = 6,
};

// Derive a child seed from (root, stream, a, b). Distinct inputs give
// statistically independent generator states.
constexpr std::uint64_t derive_seed(std::uint64_t root, Stream stream,
                                    std::uint64_t a = 0, std::uint64_t b = 0) noexcept {
    std::uint64_t h = splitmix64(root ^ 0x6a09e667f3bcc908ULL);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

// Uniform double in [0, 1) from the top 53 bits of one generator draw.
// Keeps sequence generation identical across standard libraries.
inline double uniform01(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) without modulo bias.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t n) {
    if (n <= 1) {
        return 0;
    }
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x = gen();
    while (x >= limit) {
        x = gen();
    }
    return x % n;
}

}  // namespace cpt::rng
