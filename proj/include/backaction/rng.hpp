#pragma once

// Counter-free random streams for trajectory ensembles. Each (seed, streamIndex)
// pair owns an independent xoshiro256** generator so trajectories can be computed
// in any order, on any thread, and still reproduce bit-identically.

#include <cstdint>
#include <cmath>
#include <vector>
#include <stdexcept>

namespace backaction {

namespace detail {

// splitmix64: used only to expand a 64-bit key into xoshiro state.
inline std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
}

} // namespace detail

// How Wiener increments are sampled. Gaussian is the default and is required for
// pathwise (strong) comparisons. TwoPoint draws dW = +-sqrt(dt) with equal
// probability: a weak order-1 scheme whose squared increment equals dt exactly,
// which removes the spurious O(sqrt(dt)) purity diffusion of the Gaussian scheme
// when verifying drift laws on single trajectories.
enum class IncrementMode { Gaussian, TwoPoint };

class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, std::uint64_t streamIndex,
                IncrementMode mode = IncrementMode::Gaussian)
        : mode_(mode) {
        std::uint64_t key = seed ^ (0x9e3779b97f4a7c15ULL * (streamIndex + 1));
        for (auto& w : s_) w = detail::splitmix64(key);
    }

    std::uint64_t nextU64() {
        const std::uint64_t result = detail::rotl64(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl64(s_[3], 45);
        return result;
    }

    // uniform on (0,1); never returns 0 or 1
    double uniform() {
        // 53-bit mantissa; offset by half an ulp to stay in the open interval
        return (static_cast<double>(nextU64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // standard normal via polar Box-Muller with one cached deviate
    double normal() {
        if (haveCached_) {
            haveCached_ = false;
            return cached_;
        }
        double u, v, r2;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            r2 = u * u + v * v;
        } while (r2 >= 1.0 || r2 == 0.0);
        const double f = std::sqrt(-2.0 * std::log(r2) / r2);
        cached_ = v * f;
        haveCached_ = true;
        return u * f;
    }

    // one Wiener increment over dt, honoring the increment mode
    double wiener(double dt) {
        const double root = std::sqrt(dt);
        if (mode_ == IncrementMode::TwoPoint)
            return (nextU64() >> 63) ? root : -root;
        return root * normal();
    }

    IncrementMode mode() const { return mode_; }

private:
    std::uint64_t s_[4];
    IncrementMode mode_;
    double cached_ = 0.0;
    bool haveCached_ = false;
};

// Batch of Wiener increments. Takes the stream by value: two calls constructed
// from the same (seed, streamIndex) produce identical arrays.
inline std::vector<double> wiener_increments(NoiseStream stream, double dt,
                                             std::size_t count) {
    if (!(dt > 0.0)) throw std::invalid_argument("wiener_increments: dt must be positive");
    std::vector<double> out(count);
    for (auto& w : out) w = stream.wiener(dt);
    return out;
}

} // namespace backaction
