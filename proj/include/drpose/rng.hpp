#pragma once

#include <array>
#include <cstdint>

#include "drpose/tensor.hpp"

namespace drpose {

// Philox4x32-10 keyed by the seed; the 128-bit counter holds (block, stream-id).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

// Counter-based random stream. The full state is (seed, stream-id, counter), so
// any position in any stream can be replayed without touching other streams.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
        : seed_(seed), stream_(stream_id), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }

    // One Philox block; advances the counter by one.
    std::array<std::uint32_t, 4> next_block();
    std::uint64_t next_u64();
    // Uniform in the open interval (0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    // Standard normal via Box-Muller; each call consumes one block.
    double normal();
    // Fills `out` with standard normals, two per block.
    void fill_normal(std::span<double> out);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_;
};

Tensor gaussian(RngStream& stream, const Shape& shape);

// SplitMix64 finalizer, used to derive stream ids from structured keys.
std::uint64_t mix64(std::uint64_t x);

}  // namespace drpose
