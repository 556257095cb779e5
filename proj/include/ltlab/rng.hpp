#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <optional>
#include <vector>

#include "ltlab/matrix.hpp"

namespace ltlab {

/// Deterministic random stream: xoshiro256++ seeded through SplitMix64.
///
/// The algorithm is fixed; the same seed yields the same sequence on every
/// platform (no libstdc++ distributions are used anywhere). Substreams are
/// derived by key-splitting: `substream(key)` reseeds a fresh generator from
/// SplitMix64 applied to the parent's seed path combined with `key`, so
/// distinct (seed, key...) paths give statistically independent streams and
/// the parent's own sequence is unaffected.
///
/// Normal deviates come from the Box-Muller transform (trigonometric form);
/// the second deviate of each pair is cached, making normal draws part of
/// the reproducible stream state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    /// Number of raw 64-bit words drawn so far.
    std::uint64_t position() const { return position_; }

    std::uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n). Uses rejection so every value is exactly
    /// equally likely; n must be > 0.
    std::size_t uniform_index(std::size_t n);

    /// Standard normal deviate via Box-Muller.
    double normal();

    /// Independent child stream for the given key; does not disturb this
    /// stream's state.
    RngStream substream(std::uint64_t key) const;

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    RngStream() = default;

    std::uint64_t seed_ = 0;
    std::uint64_t position_ = 0;
    std::array<std::uint64_t, 4> state_{};
    std::optional<double> cached_normal_;
};

/// Matrix with i.i.d. N(mean, std^2) entries drawn row-major from `rng`.
/// std = 0 yields a constant matrix.
Matrix sample_gaussian(RngStream& rng, std::size_t rows, std::size_t cols,
                       double mean, double std);

}  // namespace ltlab
