#pragma once

#include <cstdint>
#include <vector>

#include "forgelab/common.hpp"

// Seeded PRNG used everywhere randomness matters: splitmix64 expands a
// 64-bit seed into the 256-bit state of xoshiro256**. Deterministic across
// runs of the same build; we do not promise cross-language bit equality.
namespace forgelab {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Xoshiro256 {
public:
    using result_type = uint64_t;

    explicit Xoshiro256(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    static constexpr uint64_t min() { return 0; }
    static constexpr uint64_t max() { return ~0ULL; }

    uint64_t operator()() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1). 53 bits of the output word.
    double uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased uniform integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw InvalidArgument("Xoshiro256::below(0)");
        const uint64_t limit = max() - max() % n;
        uint64_t v;
        do {
            v = (*this)();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller (no cached spare; call cost is fine here).
    double gaussian() {
        double u1 = uniform();
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
};

// Derives an independent stream for (seed, index), e.g. per forged step.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
    uint64_t s = seed ^ (0x6a09e667f3bcc909ULL + index * 0x9e3779b97f4a7c15ULL);
    return splitmix64(s);
}

// k distinct values from [0, n), in draw order. Floyd's algorithm.
inline std::vector<uint32_t> sample_without_replacement(Xoshiro256& rng,
                                                        uint32_t n, uint32_t k) {
    if (k > n) throw InvalidArgument("sample_without_replacement: k > n");
    std::vector<uint32_t> out;
    out.reserve(k);
    for (uint32_t j = n - k; j < n; ++j) {
        const uint32_t t = static_cast<uint32_t>(rng.below(j + 1));
        bool seen = false;
        for (uint32_t v : out)
            if (v == t) { seen = true; break; }
        out.push_back(seen ? j : t);
    }
    return out;
}

}  // namespace forgelab
