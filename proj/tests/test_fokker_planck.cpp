#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "backaction/fokker_planck.hpp"

using namespace backaction;
using Catch::Approx;

TEST_CASE("grid geometry and cell lookup") {
    Grid1D g;
    g.lo = -pi;
    g.hi = pi;
    g.n = 8;
    g.periodic = true;
    REQUIRE(g.h() == Approx(pi / 4));
    REQUIRE(g.x(0) == Approx(-pi + pi / 8));
    REQUIRE(g.locate(g.x(3)) == 3);
    REQUIRE(g.locate(-pi + 0.01) == 0);
    REQUIRE(g.locate(pi + 0.01) == 0);      // wraps
    REQUIRE(g.locate(-pi - 0.01) == 7);

    g.periodic = false;
    g.lo = 0.0;
    g.hi = 1.0;
    REQUIRE(g.locate(-5.0) == 0);           // clamps
    REQUIRE(g.locate(5.0) == 7);
}

TEST_CASE("delta density carries unit mass") {
    Grid1D g;
    g.n = 100;
    auto f = delta_density(g, 0.7);
    REQUIRE(f.mass() == Approx(1.0).margin(1e-15));
}

TEST_CASE("mass is conserved to rounding on both grid types") {
    // periodic angle diffusion
    auto m = make_angle_diffusion_model(1.0, 128);
    auto f = delta_density(m.grid, pi / 2);
    fp_evolve(m, f, 1e-5, 20000);
    REQUIRE(std::abs(f.mass() - 1.0) < 1e-12);

    // reflecting log chart
    auto lg = make_log_chart_model(1.0, -10.0, 256);
    auto g = delta_density(lg.grid, std::log(pi / 2));
    fp_evolve(lg, g, 1e-4, 20000);
    REQUIRE(std::abs(g.mass() - 1.0) < 1e-12);
}

TEST_CASE("discrete stationary density is a fixed point of the update") {
    auto m = make_angle_diffusion_model(0.7, 64);
    auto f = stationary_density(m);
    const std::vector<double> before = f.p;
    fp_evolve(m, f, 1e-5, 5000);
    for (std::size_t i = 0; i < f.p.size(); ++i)
        REQUIRE(f.p[i] == Approx(before[i]).margin(1e-12));

    // the stationary current vanishes on every face
    DensityField s;
    s.grid = m.grid;
    s.p = before;
    for (double J : probability_current(m, s))
        REQUIRE(std::abs(J) < 1e-12);

    Fp1DModel bad = m;
    bad.drift[3] = 0.1;
    REQUIRE_THROWS_AS(stationary_density(bad), std::invalid_argument);
}

TEST_CASE("boundary faces carry no flux on reflecting grids") {
    auto m = make_log_chart_model(1.0, -5.0, 64);
    auto f = delta_density(m.grid, -1.0);
    fp_evolve(m, f, 1e-4, 500);
    auto J = probability_current(m, f);
    REQUIRE(J.front() == 0.0);
    REQUIRE(J.back() == 0.0);
    // interior currents are nonzero while the packet drifts
    double maxJ = 0.0;
    for (double v : J) maxJ = std::max(maxJ, std::abs(v));
    REQUIRE(maxJ > 1e-3);
}

TEST_CASE("stability guard rejects an explicit step that is too large") {
    auto m = make_angle_diffusion_model(1.0, 256);
    REQUIRE_THROWS_AS(fp_check_stability(m, 1.0), SimulationError);
    REQUIRE_NOTHROW(fp_check_stability(m, 1e-6));

    auto f = delta_density(m.grid, 1.0);
    REQUIRE_THROWS_AS(fp_evolve(m, f, 1.0, 10), SimulationError);
}

TEST_CASE("cell peclet number of the log chart is h/2") {
    auto m = make_log_chart_model(1.0, -32.0, 1536);
    REQUIRE(fp_peclet(m) == Approx(m.grid.h() / 2.0));
}

TEST_CASE("eigensolver reproduces the closed-form Laplacian spectrum") {
    // constant diffusion: the slowest decay of the discrete operator is
    // D (1 - cos(2 pi / n)) / h^2 on a ring and D (1 - cos(pi / n)) / h^2
    // between reflecting walls
    const double D = 0.5;
    Fp1DModel ring;
    ring.grid.lo = -1.0;
    ring.grid.hi = 1.0;
    ring.grid.n = 64;
    ring.grid.periodic = true;
    ring.drift.assign(64, 0.0);
    ring.diff.assign(64, D);
    const double h = ring.grid.h();
    REQUIRE(fp_decay_eigenvalue(ring)
            == Approx(D * (1.0 - std::cos(2.0 * pi / 64)) / (h * h)).epsilon(1e-9));

    Fp1DModel slab = ring;
    slab.grid.periodic = false;
    REQUIRE(fp_decay_eigenvalue(slab)
            == Approx(D * (1.0 - std::cos(pi / 64)) / (h * h)).epsilon(1e-9));
}

TEST_CASE("angle-diffusion decay eigenvalue: grid characterization") {
    // the continuum limit of the slowest rate is approached from above at
    // roughly two percent per octave; the coarse-grid values are frozen here
    const double l256 = fp_decay_eigenvalue(make_angle_diffusion_model(1.0, 256));
    const double l512 = fp_decay_eigenvalue(make_angle_diffusion_model(1.0, 512));
    const double l1024 = fp_decay_eigenvalue(make_angle_diffusion_model(1.0, 1024));
    REQUIRE(l256 == Approx(1.3850).epsilon(5e-3));
    REQUIRE(l512 == Approx(1.3330).epsilon(5e-3));
    REQUIRE(l1024 == Approx(1.2915).epsilon(5e-3));
    REQUIRE(l512 < l256);
    REQUIRE(l1024 < l512);
}

TEST_CASE("observable relaxation rate sits above the spectral gap") {
    // the error probability relaxes toward the discrete stationary expectation
    // as a clean exponential; its rate is bounded below by the spectral gap
    // and exceeds it here because the slowest modes pool probability in the
    // small-angle cells where the observable has no weight
    auto m = make_angle_diffusion_model(1.0, 128);
    auto f = delta_density(m.grid, pi / 2);
    const double h = m.grid.h();
    double maxD = 0.0;
    for (double d : m.diff) maxD = std::max(maxD, d);
    const double dt = 0.45 * h * h / maxD;
    const auto steps = static_cast<std::size_t>(6.0 / dt);
    auto r = decay_rate_from_fp(m, f, dt, steps, steps / 600,
                                [](double x) { return 0.5 * (1.0 - std::cos(x)); });
    REQUIRE(r.timeDomainFit.valid);
    REQUIRE(r.timeDomainRate > 0.97 * r.eigenRate);
    REQUIRE(r.timeDomainRate == Approx(2.20).epsilon(0.02));   // frozen at M=128
    REQUIRE(r.gapRatio == Approx(r.timeDomainRate / r.eigenRate));
}

TEST_CASE("log-chart packet drifts and spreads at the stated rates") {
    const double kappa = 1.0, y0 = std::log(pi / 2), t = 0.004;
    auto m = make_log_chart_model(kappa, -32.0, 1536);
    auto f = delta_density(m.grid, y0);
    const double h = m.grid.h();
    const double dt = 0.45 * h * h / (8.0 * kappa);
    fp_evolve(m, f, dt, static_cast<std::size_t>(t / dt) + 1);
    const double T = (static_cast<std::size_t>(t / dt) + 1) * dt;

    const double mean = fp_expectation(f, [](double y) { return y; });
    const double x0 = m.grid.x(m.grid.locate(y0));   // packet starts at a cell center
    REQUIRE(mean == Approx(x0 - 4.0 * kappa * T).margin(2e-3));
    const double var = fp_expectation(f, [&](double y) { return (y - mean) * (y - mean); });
    REQUIRE(var == Approx(8.0 * kappa * T + h * h / 12.0).margin(2e-3));
}

TEST_CASE("sample histogram masses match the density convention") {
    Grid1D g;
    g.lo = 0.0;
    g.hi = 1.0;
    g.n = 4;
    g.periodic = false;
    auto mass = cell_masses(g, {0.1, 0.2, 0.6, 0.9});
    REQUIRE(mass[0] == Approx(0.5));
    REQUIRE(mass[1] == Approx(0.0));
    REQUIRE(mass[2] == Approx(0.25));
    REQUIRE(mass[3] == Approx(0.25));

    DensityField f;
    f.grid = g;
    f.p = {1.0, 1.0, 1.0, 1.0};
    auto dm = cell_masses(f);
    for (double v : dm) REQUIRE(v == Approx(0.25));
}

TEST_CASE("observable series defaults to unit-weight fitting") {
    auto m = make_log_chart_model(1.0, -20.0, 128);
    auto f = delta_density(m.grid, 0.0);
    auto s = fp_observable_series(m, f, 1e-4, 100, 10, [](double) { return 1.0; });
    REQUIRE(s.count == 0);
    REQUIRE(s.times.size() == 11);
    for (std::size_t i = 0; i < s.times.size(); ++i) {
        REQUIRE(s.mean[i] == Approx(1.0).margin(1e-12));   // total mass
        REQUIRE(s.sem(i) == 0.0);
    }
}
