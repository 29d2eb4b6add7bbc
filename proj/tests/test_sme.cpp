#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "backaction/sme.hpp"

using namespace backaction;
using Catch::Approx;

namespace {
MatrixXc density(double bx, double by, double bz) {
    return MatrixXc(bloch_to_density({bx, by, bz}));
}
} // namespace

TEST_CASE("single measurement step matches the hand-expanded Bloch update") {
    // for S = n.sigma on a qubit, expanding the measurement superoperators in
    // Bloch form gives
    //   drift:  db = -4k (b - (n.b) n) dt
    //   noise:  db = sqrt(8k) (n - (n.b) b) dW
    const BlochVector n{std::cos(0.3), 0.0, -std::sin(0.3)};
    const BlochVector b0{0.4, 0.1, 0.7};
    const double k = 0.8, dt = 1e-4, dw = 0.005;

    MatrixXc rho = density(b0.x, b0.y, b0.z);
    SmeOptions raw;
    raw.rehermitize = false;
    raw.renormalize = false;
    sme_step(rho, nullptr, {{spin_axis_operator(n), k}}, {}, dt, &dw, raw);
    const BlochVector b1 = density_to_bloch(Matrix2c(rho));

    const double nb = n.x * b0.x + n.y * b0.y + n.z * b0.z;
    const double g = std::sqrt(8.0 * k);
    REQUIRE(b1.x == Approx(b0.x - 4 * k * (b0.x - nb * n.x) * dt + g * (n.x - nb * b0.x) * dw).margin(1e-14));
    REQUIRE(b1.y == Approx(b0.y - 4 * k * (b0.y - nb * n.y) * dt + g * (n.y - nb * b0.y) * dw).margin(1e-14));
    REQUIRE(b1.z == Approx(b0.z - 4 * k * (b0.z - nb * n.z) * dt + g * (n.z - nb * b0.z) * dw).margin(1e-14));
    REQUIRE(std::abs(rho.trace() - complexd(1.0, 0.0)) < 1e-14);
}

TEST_CASE("relaxation channel empties the target population at rate 2 gamma") {
    NoiseParams np;
    np.gamma = 0.25;
    auto ch = qubit_noise_channels(np);
    REQUIRE(ch.size() == 1);

    MatrixXc rho = density(0.0, 0.0, 1.0);
    const double dt = 1e-5;
    double t = 0.0;
    for (int i = 0; i < 20000; ++i) {
        sme_step(rho, nullptr, {}, ch, dt, nullptr);
        t += dt;
    }
    // ground population rho00 decays as exp(-2 gamma t)
    REQUIRE(rho(0, 0).real() == Approx(std::exp(-2.0 * np.gamma * t)).epsilon(1e-3));
}

TEST_CASE("dephasing channels damp the transverse components at rate 4 beta") {
    NoiseParams np;
    np.betaZ = 0.1;
    auto ch = qubit_noise_channels(np);
    MatrixXc rho = density(0.8, 0.0, 0.2);
    const double dt = 1e-5;
    for (int i = 0; i < 10000; ++i) sme_step(rho, nullptr, {}, ch, dt, nullptr);
    const BlochVector b = density_to_bloch(Matrix2c(rho));
    REQUIRE(b.x == Approx(0.8 * std::exp(-4.0 * 0.1 * 0.1)).epsilon(1e-3));
    REQUIRE(b.z == Approx(0.2).margin(1e-9));   // z commutes with sigma_z noise
}

TEST_CASE("measurement terms preserve the trace to rounding even unstabilized") {
    NoiseStream ns(17, 0);
    MatrixXc rho = density(0.3, 0.0, 0.6);
    SmeOptions raw;
    raw.rehermitize = false;
    raw.renormalize = false;
    const auto S = spin_axis_operator({1.0, 0.0, 0.0});
    double worst = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const double dw = ns.wiener(1e-3);
        sme_step(rho, nullptr, {{S, 1.0}}, {}, 1e-3, &dw, raw);
        worst = std::max(worst, std::abs(rho.trace().real() - 1.0));
    }
    REQUIRE(worst < 1e-12);
}

TEST_CASE("positivity monitor exposes the fault that projection suppresses") {
    // Gaussian increments inject purity noise 8k (dW^2 - dt) per step; without
    // projection the state wanders above purity one, which the monitors catch.
    // Two-point increments with projection keep every step physical.
    const auto S = spin_axis_operator({1.0, 0.0, 0.0});

    NoiseStream gs(17, 1);
    MatrixXc rho = density(0.0, 0.0, 1.0);
    double maxExcess = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const double dw = gs.wiener(1e-4);
        sme_step(rho, nullptr, {{S, 1.0}}, {}, 1e-4, &dw);
        maxExcess = std::max(maxExcess, (rho * rho).trace().real() - 1.0);
    }
    REQUIRE(maxExcess > 1e-3);   // the injected fault is visible

    NoiseStream tp(17, 1, IncrementMode::TwoPoint);
    rho = density(0.0, 0.0, 1.0);
    SmeOptions safe;
    safe.projectPositive = true;
    maxExcess = 0.0;
    double minEig = 1.0;
    for (int i = 0; i < 2000; ++i) {
        const double dw = tp.wiener(1e-4);
        SmeStepStats st;
        sme_step(rho, nullptr, {{S, 1.0}}, {}, 1e-4, &dw, safe, &st);
        maxExcess = std::max(maxExcess, (rho * rho).trace().real() - 1.0);
        minEig = std::min(minEig, st.minEigenvalue);
    }
    REQUIRE(maxExcess < 1e-12);
    REQUIRE(minEig > -1e-5);   // only second-order residuals, clamped each step
}

TEST_CASE("positivity projection clamps small dips and rejects deep ones") {
    SmeOptions opt;
    opt.projectPositive = true;

    // slightly negative eigenvalue: diag(1.0003, -0.0003) -> bz just above 1
    MatrixXc rho = density(0.0, 0.0, 1.0006);
    SmeStepStats st;
    sme_step(rho, nullptr, {}, {}, 1e-6, nullptr, opt, &st);
    REQUIRE(st.projected);
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(rho);
    REQUIRE(es.eigenvalues().minCoeff() >= -1e-15);
    REQUIRE(rho.trace().real() == Approx(1.0));

    // below the floor: error out instead of silently repairing
    MatrixXc bad = density(0.0, 0.0, 1.1);   // eigenvalue -0.05
    REQUIRE_THROWS_AS(sme_step(bad, nullptr, {}, {}, 1e-6, nullptr, opt), SimulationError);
}

TEST_CASE("rotation operator moves the Bloch vector by the stated angle") {
    // rotating +z about -y by phi lands at (sin(-phi)? ...): check against the
    // axis-angle formula b' = b cos(phi) + (n x b) sin(phi) + n (n.b)(1-cos(phi))
    const BlochVector n{0.0, -1.0, 0.0};
    const double phi = 0.7;
    const BlochVector b{std::sin(0.5), 0.0, std::cos(0.5)};

    const Matrix2c u = rotation_about(n, phi);
    MatrixXc rho = MatrixXc(u) * density(b.x, b.y, b.z) * MatrixXc(u).adjoint();
    const BlochVector r = density_to_bloch(Matrix2c(rho));

    const double nb = n.x * b.x + n.y * b.y + n.z * b.z;
    const BlochVector cross{n.y * b.z - n.z * b.y, n.z * b.x - n.x * b.z,
                            n.x * b.y - n.y * b.x};
    const double c = std::cos(phi), s = std::sin(phi);
    REQUIRE(r.x == Approx(b.x * c + cross.x * s + n.x * nb * (1 - c)).margin(1e-14));
    REQUIRE(r.y == Approx(b.y * c + cross.y * s + n.y * nb * (1 - c)).margin(1e-14));
    REQUIRE(r.z == Approx(b.z * c + cross.z * s + n.z * nb * (1 - c)).margin(1e-14));

    // and the unitary is special: det = 1, u u^dag = 1
    REQUIRE(std::abs(u.determinant() - complexd(1.0, 0.0)) < 1e-14);
    REQUIRE((u * u.adjoint() - Matrix2c::Identity()).cwiseAbs().maxCoeff() < 1e-14);

    // for a state at angle d from +z, the feedback rotation shortens the angle
    const Matrix2c v = rotation_about(control_hamiltonian_axis(b, {0, 0, 1}), 0.2);
    MatrixXc rho2 = MatrixXc(v) * density(b.x, b.y, b.z) * MatrixXc(v).adjoint();
    const BlochVector r2 = density_to_bloch(Matrix2c(rho2));
    REQUIRE(std::atan2(r2.x, r2.z) == Approx(0.3).margin(1e-12));
}

TEST_CASE("controlled run keeps the state physical and near the reduced chart") {
    ControlParams cp;
    NoiseParams np;
    np.gamma = 0.01;
    NoiseStream ns(7, 11, IncrementMode::TwoPoint);
    auto run = run_controlled_sme(cp, np, bloch_from_reduced(0.8, 1.0),
                                  1e-4, 5000, 100, ns);
    REQUIRE(run.times.size() == 51);
    for (std::size_t i = 0; i < run.times.size(); ++i) {
        REQUIRE(run.purity[i] <= 1.0 + 1e-4);
        REQUIRE(run.pe[i] >= -1e-9);
        REQUIRE(run.pe[i] <= 1.0 + 1e-9);
        REQUIRE(std::abs(run.bloch[i].y) < 1e-9);   // dynamics stay in-plane
    }
    REQUIRE(std::abs(run.finalRho.trace().real() - 1.0) < 1e-12);

    // the reduced chart follows the same noise realization closely at this dt
    const double gap = reduced_vs_sme_max_gap(cp, np, 0.8, 1.0, 1e-4, 5000, 100, 7, 11);
    REQUIRE(gap < 0.05);
}

TEST_CASE("pathwise gap between representations shrinks with the step") {
    ControlParams cp;
    NoiseParams np;
    np.gamma = 0.02;
    np.betaX = 0.01;
    const double g1 = reduced_vs_sme_max_gap(cp, np, 0.6, 0.98, 1e-3, 2000, 40, 3, 0);
    const double g2 = reduced_vs_sme_max_gap(cp, np, 0.6, 0.98, 1e-4, 20000, 400, 3, 0);
    REQUIRE(g2 < g1);
    REQUIRE(g2 < 0.05);
}

TEST_CASE("bang-bang protocol drives the angle to zero without noise sources") {
    ControlParams cp;
    cp.kind = ProtocolKind::HamiltonianPerp;
    cp.fixedK = 0.0;        // rotation only
    cp.alphaMax = 3.0;
    NoiseStream ns(2, 0);
    auto run = run_controlled_sme(cp, NoiseParams{}, bloch_from_reduced(1.0, 1.0),
                                  1e-3, 1000, 50, ns);
    REQUIRE(std::abs(run.delta.back()) < 1e-9);
    REQUIRE(run.pe.back() < 1e-12);
    // angle decreases linearly at alphaMax until it hits zero
    REQUIRE(run.delta[2] == Approx(1.0 - 3.0 * run.times[2]).margin(1e-9));
}
