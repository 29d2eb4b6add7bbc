#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>

#include "backaction/rng.hpp"

using namespace backaction;

TEST_CASE("identical seed and stream reproduce identical increments") {
    auto a = wiener_increments(NoiseStream(42, 0), 1e-3, 1000);
    auto b = wiener_increments(NoiseStream(42, 0), 1e-3, 1000);
    REQUIRE(a == b);
}

TEST_CASE("different streams differ") {
    auto a = wiener_increments(NoiseStream(42, 0), 1e-3, 64);
    auto b = wiener_increments(NoiseStream(42, 1), 1e-3, 64);
    REQUIRE(a != b);
}

TEST_CASE("xoshiro reference sequence") {
    // oracle: the first outputs for all-ones state, computed by hand from the
    // scrambler: rotl(1*5,7)*9 = 5760 twice, then state mixing kicks in
    NoiseStream dummy(0, 0);
    // reproduce the state expansion instead: splitmix64 of key 0 gives the
    // published first value 0xE220A8397B1DCDAF
    std::uint64_t x = 0;
    REQUIRE(detail::splitmix64(x) == 0xE220A8397B1DCDAFULL);
    REQUIRE(detail::splitmix64(x) == 0x6E789E6AA1B965F4ULL);
}

TEST_CASE("uniform stays inside the open interval") {
    NoiseStream ns(7, 3);
    for (int i = 0; i < 100000; ++i) {
        const double u = ns.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("normal moments") {
    NoiseStream ns(123, 0);
    const int n = 400000;
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = ns.normal();
        s1 += z; s2 += z * z; s3 += z * z * z; s4 += z * z * z * z;
    }
    s1 /= n; s2 /= n; s3 /= n; s4 /= n;
    // 5 sigma bands for the sample moments of N(0,1)
    REQUIRE(std::abs(s1) < 5.0 / std::sqrt(double(n)));
    REQUIRE(std::abs(s2 - 1.0) < 5.0 * std::sqrt(2.0 / n));
    REQUIRE(std::abs(s3) < 5.0 * std::sqrt(15.0 / n));
    REQUIRE(std::abs(s4 - 3.0) < 5.0 * std::sqrt(96.0 / n));
}

TEST_CASE("wiener increments have variance dt") {
    const double dt = 2.5e-4;
    auto w = wiener_increments(NoiseStream(99, 5), dt, 200000);
    double s1 = 0, s2 = 0;
    for (double v : w) { s1 += v; s2 += v * v; }
    s1 /= double(w.size()); s2 /= double(w.size());
    REQUIRE(std::abs(s1) < 5.0 * std::sqrt(dt / double(w.size())));
    REQUIRE(std::abs(s2 - dt) < 5.0 * dt * std::sqrt(2.0 / double(w.size())));
}

TEST_CASE("two-point mode emits +-sqrt(dt) with balanced signs") {
    const double dt = 1e-4;
    NoiseStream ns(5, 0, IncrementMode::TwoPoint);
    const double r = std::sqrt(dt);
    int plus = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double w = ns.wiener(dt);
        REQUIRE((w == r || w == -r));
        if (w > 0) ++plus;
    }
    REQUIRE(std::abs(plus - n / 2) < 5 * std::sqrt(n / 4.0));
}

TEST_CASE("streams are effectively uncorrelated") {
    const int n = 20000;
    NoiseStream a(2024, 0), b(2024, 1);
    double dot = 0;
    for (int i = 0; i < n; ++i) dot += a.normal() * b.normal();
    REQUIRE(std::abs(dot / n) < 5.0 / std::sqrt(double(n)));
}
