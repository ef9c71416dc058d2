#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace vpetabc {

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Sub-seed for a pipeline stage: splitmix64(seed ^ fnv1a64(stage)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) noexcept;

/// Counter-based generator: the k-th output of stream (key, stream) is a pure
/// function of (key, stream, k). Satisfies UniformRandomBitGenerator so the
/// standard distributions can consume it.
class counter_engine {
public:
    using result_type = std::uint64_t;

    counter_engine(std::uint64_t key, std::uint64_t stream) noexcept
        : base_(splitmix64_mix(key ^ splitmix64_mix(stream + 0x632BE59BD9B4E019ULL))) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        ++counter_;
        return splitmix64_mix(base_ + counter_ * 0x9E3779B97F4A7C15ULL);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    std::uint64_t position() const noexcept { return counter_; }

private:
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

} // namespace vpetabc
