#include "ltlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace ltlab {

namespace {

constexpr std::uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ull;

std::uint64_t splitmix64_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) {
        sm += kSplitMixGamma;
        word = splitmix64_mix(sm);
    }
}

std::uint64_t RngStream::next_u64() {
    auto& s = state_;
    const std::uint64_t result = rotl(s[0] + s[3], 23) + s[0];
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    ++position_;
    return result;
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t RngStream::uniform_index(std::size_t n) {
    if (n == 0) throw DimensionError("uniform_index: n must be > 0");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

double RngStream::normal() {
    if (cached_normal_) {
        const double v = *cached_normal_;
        cached_normal_.reset();
        return v;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    return r * std::cos(theta);
}

RngStream RngStream::substream(std::uint64_t key) const {
    RngStream child;
    // Child seed mixes the parent seed and the key so that nested splits
    // with different paths land on distinct seeds.
    child.seed_ = splitmix64_mix(seed_ + kSplitMixGamma * (key + 1));
    std::uint64_t sm = child.seed_;
    for (auto& word : child.state_) {
        sm += kSplitMixGamma;
        word = splitmix64_mix(sm);
    }
    return child;
}

Matrix sample_gaussian(RngStream& rng, std::size_t rows, std::size_t cols,
                       double mean, double std) {
    if (std < 0.0) throw DimensionError("sample_gaussian: std must be >= 0");
    Matrix m(rows, cols);
    for (double& v : m.raw()) v = mean + std * rng.normal();
    return m;
}

}  // namespace ltlab
