#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "backaction/protocols.hpp"

using namespace backaction;
using Catch::Approx;

TEST_CASE("measurement selection per protocol") {
    ControlParams dg;
    dg.kappa = 2.0;
    dg.mu = 0.3;
    auto mc = select_measurement(dg, 0.5);
    REQUIRE(mc.kPerp == Approx(2.0 * 0.25));
    REQUIRE(mc.muPar == Approx(0.3));
    REQUIRE_FALSE(mc.hamiltonian);

    dg.fixedK = 0.7;
    REQUIRE(select_measurement(dg, 0.5).kPerp == Approx(0.7));

    ControlParams hp;
    hp.kind = ProtocolKind::HamiltonianPerp;
    hp.kappa = 1.5;
    mc = select_measurement(hp, 0.5);
    REQUIRE(mc.kPerp == Approx(1.5));
    REQUIRE(mc.muPar == 0.0);
    REQUIRE(mc.hamiltonian);
    hp.fixedK = 0.2;
    REQUIRE(select_measurement(hp, 0.5).kPerp == Approx(0.2));

    ControlParams hl;
    hl.kind = ProtocolKind::HamiltonianParallel;
    hl.mu = 0.9;
    mc = select_measurement(hl, 0.5);
    REQUIRE(mc.kPerp == 0.0);
    REQUIRE(mc.muPar == Approx(0.9));
    REQUIRE(mc.hamiltonian);
}

TEST_CASE("channel usage is fixed per protocol") {
    ControlParams dg;
    REQUIRE(uses_perp_channel(dg));
    REQUIRE_FALSE(uses_parallel_channel(dg));
    dg.mu = 0.1;
    REQUIRE(uses_parallel_channel(dg));

    ControlParams hp;
    hp.kind = ProtocolKind::HamiltonianPerp;
    REQUIRE(uses_perp_channel(hp));
    REQUIRE_FALSE(uses_parallel_channel(hp));

    ControlParams hl;
    hl.kind = ProtocolKind::HamiltonianParallel;
    hl.mu = 0.5;
    REQUIRE_FALSE(uses_perp_channel(hl));
    REQUIRE(uses_parallel_channel(hl));
}

TEST_CASE("control axis is perpendicular and shortens the angle") {
    const BlochVector target{0, 0, 1};
    for (double d : {0.3, 1.2, -0.4, -2.0}) {
        BlochVector b{std::sin(d), 0.0, std::cos(d)};
        auto n = control_hamiltonian_axis(b, target);
        REQUIRE(n.norm() == Approx(1.0));
        REQUIRE(n.x == Approx(0.0).margin(1e-15));
        REQUIRE(n.z == Approx(0.0).margin(1e-15));
        // rotating b by +phi about n must reduce |delta|: check the sign
        REQUIRE(n.y == Approx(d > 0 ? -1.0 : 1.0));
    }
    auto n0 = control_hamiltonian_axis({0, 0, 1}, target);
    REQUIRE(n0.y == Approx(-1.0));
}

// Independent oracle for the reduced-chart environment drift: apply the
// dissipators directly to the density matrix and push the Bloch velocity
// through the chart by the chain rule. No shared algebra with the header.
namespace {
struct ChartDrift {
    double ddelta, da;
};

ChartDrift chart_drift_oracle(double delta, double a, const NoiseParams& np) {
    using M = Eigen::Matrix2cd;
    const std::complex<double> I(0, 1);
    M sx, sy, sz, lower;
    sx << 0, 1, 1, 0;
    sy << 0, -I, I, 0;
    sz << 1, 0, 0, -1;
    lower << 0, 0, 1, 0;

    const double bx = a * std::sin(delta), bz = a * std::cos(delta);
    M rho = 0.5 * (M::Identity() + bx * sx + bz * sz);

    M drho = M::Zero();
    auto add = [&](const M& L, double rate) {
        drho += rate * (2.0 * L * rho * L.adjoint()
                        - L.adjoint() * L * rho - rho * L.adjoint() * L);
    };
    add(sx, np.betaX);
    add(sy, np.betaY);
    add(sz, np.betaZ);
    add(lower, np.gamma);

    const double vx = (drho * sx).trace().real();
    const double vz = (drho * sz).trace().real();
    ChartDrift out;
    out.ddelta = (bz * vx - bx * vz) / (bx * bx + bz * bz);
    out.da = (bx * vx + bz * vz) / a;
    return out;
}
} // namespace

TEST_CASE("reduced-chart environment drift matches the dissipator oracle") {
    NoiseParams np;
    np.gamma = 0.07;
    np.betaX = 0.02;
    np.betaY = 0.013;
    np.betaZ = 0.031;
    for (double delta : {-2.5, -1.2, -0.3, 0.4, 1.0, 2.8}) {
        for (double a : {0.2, 0.55, 0.9, 1.0}) {
            const auto oracle = chart_drift_oracle(delta, a, np);
            REQUIRE(reduced_delta_noise_drift(delta, a, np)
                    == Approx(oracle.ddelta).margin(1e-12));
            REQUIRE(reduced_a_noise_drift(delta, a, np)
                    == Approx(oracle.da).margin(1e-12));
        }
    }
    // each channel alone as well, to catch compensating sign errors
    for (int ch = 0; ch < 4; ++ch) {
        NoiseParams one;
        (ch == 0 ? one.gamma : ch == 1 ? one.betaX : ch == 2 ? one.betaY : one.betaZ) = 0.11;
        const auto oracle = chart_drift_oracle(0.8, 0.6, one);
        REQUIRE(reduced_delta_noise_drift(0.8, 0.6, one)
                == Approx(oracle.ddelta).margin(1e-12));
        REQUIRE(reduced_a_noise_drift(0.8, 0.6, one)
                == Approx(oracle.da).margin(1e-12));
    }
}

TEST_CASE("frozen-strength purification follows its closed form") {
    // with k frozen the Bloch length obeys da = 4k(1-a^2)/a dt deterministically:
    // 1 - a(t)^2 = (1 - a0^2) exp(-8 k t)
    ControlParams cp;
    cp.fixedK = 0.25;
    const NoiseParams clean;
    ReducedStepper st(cp, clean);
    NoiseStream ns(5, 0);
    double delta = 0.4, a = 0.3;
    const double dt = 1e-5, T = 1.0;
    for (std::size_t n = 0; n < std::size_t(T / dt); ++n) st.step(delta, a, dt, ns);
    const double exact = std::sqrt(1.0 - (1.0 - 0.09) * std::exp(-8.0 * 0.25 * T));
    REQUIRE(a == Approx(exact).margin(1e-9));   // the stepper map is exact here
}

TEST_CASE("angle-only fast path agrees with the full stepper") {
    ControlParams cp;
    cp.kappa = 1.3;
    const NoiseParams clean;
    ReducedStepper st(cp, clean);
    const double dt = 1e-4;
    const double g = std::sqrt(8.0 * cp.kappa);

    NoiseStream nsA(77, 4), nsB(77, 4);
    double delta = 0.9, a = 1.0, s = 0.9;
    for (int n = 0; n < 2000; ++n) {
        st.step(delta, a, dt, nsA);
        s += g * std::abs(s) * nsB.wiener(dt);
        s = wrap_circle(s);
        REQUIRE(delta == Approx(s).margin(1e-11));
        REQUIRE(a == 1.0);
    }

    // and the ensemble front-end produces the same mean as driving the stepper
    // by hand with the same seeds
    EnsembleOptions opt;
    opt.nTraj = 64;
    opt.seed = 9;
    opt.recordEvery = 50;
    auto fast = mean_error_ensemble(cp, clean, 0.9, 1.0, dt, 200, opt);
    auto slow = run_ensemble(opt.nTraj, fast.times, 1,
        [&](std::size_t j, std::vector<double>& out) {
            NoiseStream ns(opt.seed, j);
            double d = 0.9, aa = 1.0;
            out[0] = error_probability_reduced(d, aa);
            std::size_t idx = 1;
            for (int n = 0; n < 200; ++n) {
                st.step(d, aa, dt, ns);
                if ((n + 1) % 50 == 0) out[idx++] = error_probability_reduced(d, aa);
            }
        });
    for (std::size_t i = 0; i < fast.times.size(); ++i)
        REQUIRE(fast.mean[i] == Approx(slow.mean[i]).margin(1e-10));
}

TEST_CASE("linearized error dynamics have the stated coefficients") {
    NoiseParams np;
    np.gamma = 0.01;
    np.betaX = 0.005;
    REQUIRE(linearized_steady_state(1.0, np) == Approx(0.0075));

    // the stated fixed point kills the drift; the pump and the noise amplitude
    // carry the exact stated coefficients
    auto model = linearized_model(1.0, np);
    double s = 0.0075, f = 0.0, g = 0.0;
    model.drift(&s, &f);
    REQUIRE(f == Approx(0.0).margin(1e-15));
    model.diffusion(&s, &g);
    REQUIRE(g == Approx(2.0 * std::sqrt(8.0) * 0.0075));
    s = 0.0;
    model.drift(&s, &f);
    REQUIRE(f == Approx(4.0 * 0.015));
    s = 0.02;
    model.drift(&s, &f);
    REQUIRE(f < 0.0);
    s = -1e-3;
    model.constrain(&s);
    REQUIRE(s == 0.0);
}

TEST_CASE("bang-bang rotation never overshoots zero") {
    ControlParams cp;
    cp.kind = ProtocolKind::HamiltonianPerp;
    cp.fixedK = 0.0;    // disable measurement noise to isolate the rotation
    cp.alphaMax = 2.0;
    const NoiseParams clean;
    ReducedStepper st(cp, clean);
    NoiseStream ns(1, 0);

    double delta = 0.5, a = 1.0;
    st.step(delta, a, 0.1, ns);      // rot = 0.2 < 0.5
    REQUIRE(delta == Approx(0.3));
    st.step(delta, a, 0.2, ns);      // rot = 0.4 > 0.3: clamp to zero
    REQUIRE(delta == 0.0);
    st.step(delta, a, 0.1, ns);
    REQUIRE(delta == 0.0);

    delta = -0.25;
    st.step(delta, a, 0.1, ns);
    REQUIRE(delta == Approx(-0.05));
}

TEST_CASE("interval-periodic boundary keeps delta in [0, pi)") {
    ControlParams cp;
    cp.boundary = BoundaryMode::IntervalPeriodic;
    const NoiseParams clean;
    ReducedStepper st(cp, clean);
    NoiseStream ns(8, 3);
    double delta = 3.0, a = 1.0;
    for (int n = 0; n < 5000; ++n) {
        st.step(delta, a, 1e-3, ns);
        REQUIRE(delta >= 0.0);
        REQUIRE(delta < pi);
    }
}

TEST_CASE("bloch length clamp and overshoot guard") {
    auto m = noisy_model(ControlParams{}, NoiseParams{});
    std::vector<double> s{0.1, 1.02};
    m.constrain(s.data());
    REQUIRE(s[1] == 1.0);
    s = {0.1, 1e-300};
    m.constrain(s.data());
    REQUIRE(s[1] == eps_num);
    s = {0.1, 1.06};
    REQUIRE_THROWS_AS(m.constrain(s.data()), SimulationError);

    // the stepper carries the same guard: drive a parallel measurement hard
    // enough that one positive increment overshoots past the window
    ControlParams hl;
    hl.kind = ProtocolKind::HamiltonianParallel;
    hl.mu = 200.0;
    ReducedStepper st(hl, NoiseParams{});
    bool thrown = false;
    for (std::uint64_t seed = 1; seed <= 16 && !thrown; ++seed) {
        NoiseStream probe(seed, 0, IncrementMode::TwoPoint);
        if (probe.wiener(1.0) < 0.0) continue;   // need the positive branch
        NoiseStream ns(seed, 0, IncrementMode::TwoPoint);
        double delta = 0.0, a = 0.5;
        try {
            st.step(delta, a, 0.02, ns);
        } catch (const SimulationError&) {
            thrown = true;
        }
    }
    REQUIRE(thrown);
}

TEST_CASE("first passage times are ordered and censored consistently") {
    ControlParams cp;
    const NoiseParams clean;
    EnsembleOptions opt;
    opt.nTraj = 256;
    opt.seed = 21;
    auto r = first_passage_ensemble(cp, clean, pi / 2, 1.0, 1e-3, 12000,
                                    {0.4, 0.2, 0.1}, opt);
    REQUIRE(r.times.size() == 3);
    for (std::size_t j = 0; j < opt.nTraj; ++j) {
        double prev = -1.0;
        for (std::size_t l = 0; l < 3; ++l) {
            const double t = r.times[l][j];
            if (std::isnan(t)) {
                // once censored, every deeper level is censored too
                for (std::size_t l2 = l; l2 < 3; ++l2)
                    REQUIRE(std::isnan(r.times[l2][j]));
                break;
            }
            REQUIRE(t >= prev);
            prev = t;
        }
    }
    auto m0 = censored_mean(r.times[0]);
    auto m2 = censored_mean(r.times[2]);
    REQUIRE(m0.observed > 200);          // most trajectories purify
    REQUIRE(m2.mean > m0.mean);          // deeper levels take longer

    REQUIRE_THROWS_AS(first_passage_ensemble(cp, clean, 0.5, 1.0, 1e-3, 10,
                                             {0.1, 0.2}, opt),
                      std::invalid_argument);
}

TEST_CASE("steady state under relaxation lands near the linearized value") {
    // the parallel measurement keeps the state pure; without it the Bloch
    // length just decays and no steady error exists
    ControlParams cp;
    cp.mu = 1.0;
    NoiseParams np;
    np.gamma = 0.02;
    EnsembleOptions opt;
    opt.nTraj = 256;
    opt.seed = 33;
    auto r = steady_state_ensemble(cp, np, 0.05, 1.0, 1e-3, 8000, 3000, opt);
    const double lin = linearized_steady_state(1.0, np);   // 0.01
    REQUIRE(r.value > 0.5 * lin);
    REQUIRE(r.value < 4.0 * lin);
    REQUIRE(std::abs(r.relativeDrift) < 0.5);
    REQUIRE_THROWS_AS(steady_state_ensemble(cp, np, 0.05, 1.0, 1e-3, 100, 100, opt),
                      std::invalid_argument);
}
