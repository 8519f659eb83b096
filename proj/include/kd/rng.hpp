#pragma once

#include <cstdint>
#include <vector>

namespace kd {

/// Deterministic pseudo-random generator: xoshiro256++ seeded through
/// splitmix64. The algorithm is fixed here rather than delegated to the
/// standard library so that a seed reproduces the identical draw sequence
/// on every build. All distribution transforms (uniform, bounded integer,
/// normal, shuffle) are implemented in this class for the same reason.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    /// Next raw 64-bit draw.
    std::uint64_t next_u64();

    /// Uniform double in [0, 1), 53 mantissa bits.
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Unbiased uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal draw via the Box-Muller transform; consumes two
    /// uniforms per call, no cached spare.
    double normal();

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
};

/// splitmix64 finalizer; used wherever a single value must be mixed into
/// a well-distributed 64-bit word.
std::uint64_t mix64(std::uint64_t x);

/// Deterministic sub-seed for a named stream (e.g. per-epoch shuffles).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

} // namespace kd
