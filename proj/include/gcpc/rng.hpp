#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace gcpc {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace detail

// Counter-based pseudorandom stream (splitmix64 core): the i-th output is a
// pure function of (seed, i), so identical seeds give identical sequences on
// every platform. Independent substreams are derived by hashing the parent
// seed with a label, never by sharing counter state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed), counter_(0) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    /// Child stream id = hash(parent seed, label, index).
    RngStream split(std::string_view label, std::uint64_t index = 0) const {
        std::uint64_t h = detail::mix64(seed_ ^ detail::fnv1a(label));
        h = detail::mix64(h ^ (index * detail::kGolden));
        return RngStream(h);
    }

    std::uint64_t next_u64() {
        ++counter_;
        return detail::mix64(seed_ + counter_ * detail::kGolden);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Bitmask rejection keeps the draw unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t mask = ~0ULL >> std::countl_zero(n - 1);
        std::uint64_t r = next_u64() & mask;
        while (r >= n) r = next_u64() & mask;
        return r;
    }

    /// Standard normal via Box-Muller on two uniforms; the paired draw is
    /// cached so consecutive calls consume uniforms in a fixed pattern.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// In-place Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Random permutation of {0, ..., n-1}.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gcpc
