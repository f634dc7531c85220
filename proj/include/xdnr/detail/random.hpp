#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace xdnr::detail {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Uniform draw from [0, n) by rejection; identical on every standard library,
/// unlike std::uniform_int_distribution.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    // 2^64 mod n; draws below it would bias the low residues.
    const std::uint64_t threshold = (std::uint64_t{0} - n) % n;
    for (;;) {
        const std::uint64_t r = rng();
        if (r >= threshold) return r % n;
    }
}

/// Uniform real in [0, 1) from the top 53 bits.
inline double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates shuffle driven by uniform_index.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(rng, i));
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

/// First `k` slots of `items` become a uniform k-subset (partial Fisher-Yates, front to back).
template <typename T>
void partial_shuffle(std::span<T> items, std::size_t k, Rng& rng) {
    const std::size_t n = items.size();
    for (std::size_t i = 0; i < k && i < n; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
        using std::swap;
        swap(items[i], items[j]);
    }
}

}  // namespace xdnr::detail
