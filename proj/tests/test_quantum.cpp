#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "backaction/quantum.hpp"

using namespace backaction;
using Catch::Approx;

TEST_CASE("bloch/density round trip") {
    const BlochVector cases[] = {
        {0, 0, 1}, {0, 0, -1}, {1, 0, 0}, {0, 1, 0},
        {0.3, -0.4, 0.5}, {0.1, 0.2, -0.9}, {0, 0, 0},
    };
    for (const auto& b : cases) {
        const BlochVector r = density_to_bloch(bloch_to_density(b));
        REQUIRE(r.x == Approx(b.x).margin(1e-14));
        REQUIRE(r.y == Approx(b.y).margin(1e-14));
        REQUIRE(r.z == Approx(b.z).margin(1e-14));
        const Matrix2c rho = bloch_to_density(b);
        REQUIRE(hermiticity_defect(rho) == Approx(0.0).margin(1e-15));
        REQUIRE(trace_defect(rho) == Approx(0.0).margin(1e-15));
    }
}

TEST_CASE("density eigenvalues follow the Bloch length") {
    const BlochVector b{0.6, 0.0, 0.8};   // |b| = 1: pure
    REQUIRE(min_eigenvalue(bloch_to_density(b)) == Approx(0.0).margin(1e-12));
    const BlochVector m{0.3, 0.1, 0.2};
    REQUIRE(min_eigenvalue(bloch_to_density(m))
            == Approx(0.5 * (1.0 - m.norm())).epsilon(1e-12));
}

TEST_CASE("measured axis is perpendicular to an in-plane state") {
    for (double delta : {0.0, 0.3, -0.7, 1.5, 2.9, -3.1}) {
        const BlochVector n = measured_spin_axis(delta);
        const BlochVector a = bloch_from_reduced(delta, 1.0);
        REQUIRE(n.x * a.x + n.y * a.y + n.z * a.z == Approx(0.0).margin(1e-14));
        REQUIRE(n.norm() == Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("error probability equals the excited population") {
    for (double delta : {0.0, 0.4, -1.2, 3.0}) {
        for (double a : {1.0, 0.7, 0.2}) {
            const Matrix2c rho = bloch_to_density(bloch_from_reduced(delta, a));
            // oracle: direct projector expectation <1|rho|1>
            REQUIRE(error_probability_reduced(delta, a)
                    == Approx(rho(1, 1).real()).margin(1e-14));
            REQUIRE(error_probability(rho)
                    == Approx(0.5 * (1.0 - a * std::cos(delta))).margin(1e-14));
        }
    }
}

TEST_CASE("reduced coordinates invert the embedding") {
    for (double delta : {0.0, 0.5, -2.2, 3.1}) {
        for (double a : {1.0, 0.4}) {
            const ReducedCoords rc = reduced_coords(bloch_from_reduced(delta, a));
            REQUIRE(rc.delta == Approx(delta).margin(1e-12));
            REQUIRE(rc.a == Approx(a).epsilon(1e-12));
        }
    }
}

TEST_CASE("degenerate angle extraction keeps the previous angle") {
    const BlochVector tiny{1e-12, 0.0, 1e-12};
    REQUIRE(reduced_coords(tiny, 0.77).delta == Approx(0.77));
    // out-of-plane but in-plane-degenerate: same fallback
    const BlochVector yOnly{0.0, 0.5, 0.0};
    REQUIRE(reduced_coords(yOnly, -1.1).delta == Approx(-1.1));
    REQUIRE(reduced_coords(yOnly, -1.1).a == Approx(0.5));
}

TEST_CASE("pauli algebra sanity") {
    REQUIRE((pauli_x() * pauli_x() - Matrix2c::Identity()).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE((pauli_y() * pauli_y() - Matrix2c::Identity()).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE((pauli_z() * pauli_z() - Matrix2c::Identity()).cwiseAbs().maxCoeff() < 1e-15);
    // [sx, sy] = 2 i sz
    const Matrix2c comm = pauli_x() * pauli_y() - pauli_y() * pauli_x();
    REQUIRE((comm - complexd(0, 2) * pauli_z()).cwiseAbs().maxCoeff() < 1e-15);
}
