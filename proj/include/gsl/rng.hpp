#pragma once

#include <cmath>
#include <cstdint>

namespace gsl {

// Counter-based 64-bit generator so that state is three integers and any
// position in the stream can be replayed exactly.
//
// Algorithm (SplitMix64 in counter form, Stafford mix13 finalizer):
//   base    = mix(seed ^ mix(stream))
//   out(i)  = mix(base + (i + 1) * 0x9E3779B97F4A7C15)
//   mix(z)  = { z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//               z ^= z >> 27; z *= 0x94D049BB133111EB;
//               z ^= z >> 31; return z; }
//
// (seed, stream, counter) fully describe the generator and are what the
// checkpoint format stores.
class Rng {
  public:
    Rng(uint64_t seed, uint64_t stream)
        : seed_(seed), stream_(stream), base_(mix(seed ^ mix(stream))) {}

    uint64_t next_u64() {
        ++counter_;
        return mix(base_ + counter_ * 0x9E3779B97F4A7C15ULL);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; always consumes exactly two words.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [0, n) without modulo bias (Lemire reduction).
    uint64_t index(uint64_t n) {
        const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<uint64_t>(wide >> 64);
    }

    bool bernoulli() { return (next_u64() & 1ULL) != 0; }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

  private:
    static uint64_t mix(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }

    uint64_t seed_;
    uint64_t stream_;
    uint64_t base_;
    uint64_t counter_ = 0;
};

// Fixed stream ids; one run owns one family of streams under its seed.
namespace stream {
constexpr uint64_t init = 0;
constexpr uint64_t data = 1;
constexpr uint64_t latent = 2;
constexpr uint64_t classes = 3;
constexpr uint64_t dropout = 4;
constexpr uint64_t eval = 5;
constexpr uint64_t standing = 6;
constexpr uint64_t spectral = 7;
}  // namespace stream

}  // namespace gsl
