#pragma once

#include <cmath>
#include <cstdint>

namespace stagecache {

// Counter-based deterministic generator: the SplitMix64 output function
// evaluated at (seed, counter). Stateless per draw, so any element of a
// stream can be produced independently and repeated runs are bit-identical.
inline uint64_t splitmix64_at(uint64_t seed, uint64_t counter) {
    uint64_t z = seed + (counter + 1) * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Uniform double in (0, 1]; never returns 0 so log() is always finite.
inline double uniform_unit(uint64_t seed, uint64_t counter) {
    return static_cast<double>((splitmix64_at(seed, counter) >> 11) + 1) * 0x1.0p-53;
}

/// Derive an independent stream seed, e.g. per-step noise seeds.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    return splitmix64_at(seed, 0x5ca1ab1e00000000ull ^ stream);
}

/// Counter-based standard normal stream: SplitMix64 + Box-Muller.
/// Draw i consumes counters 2*pair and 2*pair+1 where pair = i/2.
class NormalStream {
public:
    explicit NormalStream(uint64_t seed) : seed_(seed) {}

    float at(uint64_t i) const {
        const uint64_t pair = i / 2;
        const double u1 = uniform_unit(seed_, 2 * pair);
        const double u2 = uniform_unit(seed_, 2 * pair + 1);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        return static_cast<float>(i % 2 == 0 ? r * std::cos(a) : r * std::sin(a));
    }

private:
    uint64_t seed_;
};

}  // namespace stagecache
