#pragma once

#include <array>
#include <cstdint>

namespace lpe {

// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
// Pure function of (counter, key); the random value for an entry depends only on its index,
// so work can be split across threads in any order.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

// SplitMix64 finalizer; a bijection on 64-bit integers.
std::uint64_t mix64(std::uint64_t x);

// Seed of member `index` under `base_seed`. Injective in `index` for a fixed base.
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index);

// A keyed stream addressed by (stream id, entry index).
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint32_t stream) : seed_(seed), stream_(stream) {}

    std::uint64_t seed() const { return seed_; }
    std::uint32_t stream() const { return stream_; }

    std::array<std::uint32_t, 4> block(std::uint64_t index, std::uint32_t lane = 0) const;

    // Uniform on [0, 1) with 53 random bits.
    double uniform(std::uint64_t index, std::uint32_t lane = 0) const;

    // Standard normal via Box-Muller on one block.
    double normal(std::uint64_t index, std::uint32_t lane = 0) const;

private:
    std::uint64_t seed_;
    std::uint32_t stream_;
};

}  // namespace lpe
