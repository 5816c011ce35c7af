#pragma once

// Counter-style seeded random streams. Every stochastic quantity in the library
// draws from a stream keyed by (master seed, purpose tag, indices...), so results
// do not depend on evaluation order or on the number of worker threads.

#include "bner/model.hpp"

#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace bner {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Hashes a master seed and a key path into a substream seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t state = seed;
    std::uint64_t h = splitmix64(state);
    for (std::uint64_t k : keys) {
        state = h ^ (k + 0x632BE59BD9B4E019ULL);
        h = splitmix64(state);
    }
    return h;
}

/// Purpose tags for derive_seed.
enum class StreamTag : std::uint64_t {
    ebp = 0x45425031,
    bootstrap = 0x424F4F54,
    population = 0x504F5055,
    covariates = 0x434F5641,
    sim1 = 0x53494D31,
    sim2 = 0x53494D32,
};

inline std::uint64_t tag(StreamTag t) { return static_cast<std::uint64_t>(t); }

/// xoshiro256++ (Blackman & Vigna), seeded through splitmix64.
class Xoshiro256pp {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256pp(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
};

/// A seeded stream of standard normal variates.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

    double operator()() { return normal_(engine_); }

    Vec2 pair() {
        const double a = normal_(engine_);
        const double b = normal_(engine_);
        return {a, b};
    }

    /// Draw from N2(mean, L L'); `negate` flips the underlying normals (antithetic copy).
    Vec2 bivariate(const Vec2& mean, const Mat2& chol_lower, bool negate = false) {
        Vec2 z = pair();
        if (negate) z = -z;
        return {mean[0] + chol_lower(0, 0) * z[0],
                mean[1] + chol_lower(1, 0) * z[0] + chol_lower(1, 1) * z[1]};
    }

    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    Xoshiro256pp& engine() { return engine_; }

private:
    Xoshiro256pp engine_;
    boost::random::normal_distribution<double> normal_;
};

}  // namespace bner
