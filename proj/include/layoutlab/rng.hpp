#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace layoutlab {

// splitmix64, used only to expand seeds into xoshiro state.
inline uint64_t splitmix64_next(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ with named substreams. Every stochastic choice in the
// project draws from one of these so runs are reproducible from a single
// root seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : root_(seed) {
        uint64_t sm = seed;
        for (auto& s : state_) s = splitmix64_next(sm);
    }

    // Child generator whose stream is decorrelated from the parent by
    // hashing the substream name (+ index) into the seed.
    Rng substream(std::string_view name, uint64_t index = 0) const {
        uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        h ^= index + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        return Rng(root_ ^ h);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    // Box-Muller; one value per call, cache discarded for simplicity.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4] = {};
    uint64_t root_ = 0;
};

}  // namespace layoutlab
