#include "drpose/rng.hpp"

#include <cmath>
#include <numbers>

namespace drpose {

namespace {

constexpr std::uint32_t kMulA = 0xD2511F53u;
constexpr std::uint32_t kMulB = 0xCD9E8D57u;
constexpr std::uint32_t kWeylA = 0x9E3779B9u;
constexpr std::uint32_t kWeylB = 0xBB67AE85u;

double to_open_unit(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

void box_muller(std::uint64_t a, std::uint64_t b, double& z0, double& z1) {
    const double u1 = to_open_unit(a);
    const double u2 = to_open_unit(b);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    z0 = r * std::cos(theta);
    z1 = r * std::sin(theta);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMulA) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMulB) * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
        key[0] += kWeylA;
        key[1] += kWeylB;
    }
    return ctr;
}

std::array<std::uint32_t, 4> RngStream::next_block() {
    const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                                           static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    ++counter_;
    return philox4x32(ctr, {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
}

std::uint64_t RngStream::next_u64() {
    const auto b = next_block();
    return (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
}

double RngStream::uniform() { return to_open_unit(next_u64()); }

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto range = static_cast<unsigned __int128>(static_cast<std::uint64_t>(hi - lo) + 1);
    const auto scaled = (static_cast<unsigned __int128>(next_u64()) * range) >> 64;
    return lo + static_cast<std::int64_t>(scaled);
}

double RngStream::normal() {
    const auto b = next_block();
    double z0 = 0.0, z1 = 0.0;
    box_muller((static_cast<std::uint64_t>(b[1]) << 32) | b[0], (static_cast<std::uint64_t>(b[3]) << 32) | b[2], z0, z1);
    return z0;
}

void RngStream::fill_normal(std::span<double> out) {
    std::size_t i = 0;
    while (i < out.size()) {
        const auto b = next_block();
        double z0 = 0.0, z1 = 0.0;
        box_muller((static_cast<std::uint64_t>(b[1]) << 32) | b[0], (static_cast<std::uint64_t>(b[3]) << 32) | b[2], z0,
                   z1);
        out[i++] = z0;
        if (i < out.size()) out[i++] = z1;
    }
}

Tensor gaussian(RngStream& stream, const Shape& shape) {
    Tensor t(shape);
    stream.fill_normal(t.data());
    return t;
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace drpose
