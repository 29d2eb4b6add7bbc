#pragma once

// Finite-volume Fokker-Planck solver on a 1-D grid, conservative by
// construction. For dX = v dt + b dW (Ito) the density obeys
//   dp/dt = -d(v p)/dx + (1/2) d^2(D p)/dx^2,   D = b^2,
// discretized with face fluxes
//   J_{i+1/2} = vbar (p_i + p_{i+1})/2 - [D_{i+1} p_{i+1} - D_i p_i]/(2h),
// which matches the current J = (v - D'/2) p - (D/2) p'. Periodic grids close
// the flux around the seam; non-periodic grids impose zero flux at both ends.

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "analysis.hpp"
#include "sde.hpp"

namespace backaction {

struct Grid1D {
    double lo = -pi, hi = pi;
    std::size_t n = 256;
    bool periodic = true;

    double h() const { return (hi - lo) / static_cast<double>(n); }
    double x(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * h(); }

    std::size_t locate(double v) const {
        const double L = hi - lo;
        if (periodic) {
            double y = std::fmod(v - lo, L);
            if (y < 0.0) y += L;
            auto i = static_cast<std::size_t>(y / h());
            return i >= n ? n - 1 : i;
        }
        if (v <= lo) return 0;
        if (v >= hi) return n - 1;
        auto i = static_cast<std::size_t>((v - lo) / h());
        return i >= n ? n - 1 : i;
    }
};

struct Fp1DModel {
    Grid1D grid;
    std::vector<double> drift;   // v at cell centers
    std::vector<double> diff;    // D at cell centers
};

struct DensityField {
    Grid1D grid;
    std::vector<double> p;       // cell-average density

    double mass() const {
        return grid.h() * pairwise_sum(p);
    }
};

// delta distribution at x0, as a single filled cell
inline DensityField delta_density(const Grid1D& grid, double x0) {
    DensityField f;
    f.grid = grid;
    f.p.assign(grid.n, 0.0);
    f.p[grid.locate(x0)] = 1.0 / grid.h();
    return f;
}

// Angle-diffusion model of the noiseless adaptive measurement: v = 0,
// D(x) = 8 kappa x^2 on the signed circle, or on [0, pi) with endpoints
// identified in the literal interval mode.
inline Fp1DModel make_angle_diffusion_model(double kappa, std::size_t cells,
                                            BoundaryMode boundary = BoundaryMode::SignedCircle) {
    Fp1DModel m;
    m.grid.periodic = true;
    m.grid.n = cells;
    if (boundary == BoundaryMode::SignedCircle) { m.grid.lo = -pi; m.grid.hi = pi; }
    else { m.grid.lo = 0.0; m.grid.hi = pi; }
    m.drift.assign(cells, 0.0);
    m.diff.resize(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        const double x = m.grid.x(i);
        m.diff[i] = 8.0 * kappa * x * x;
    }
    return m;
}

// Same dynamics in the log chart y = ln|delta|: constant drift -4 kappa and
// constant diffusion 8 kappa, reflecting walls at ln(pi) and at a deep cutoff.
inline Fp1DModel make_log_chart_model(double kappa, double wall, std::size_t cells) {
    if (!(wall < std::log(pi)))
        throw std::invalid_argument("make_log_chart_model: wall must sit below ln(pi)");
    Fp1DModel m;
    m.grid.lo = wall;
    m.grid.hi = std::log(pi);
    m.grid.n = cells;
    m.grid.periodic = false;
    m.drift.assign(cells, -4.0 * kappa);
    m.diff.assign(cells, 8.0 * kappa);
    return m;
}

// Face currents, indexed 0..n: face f sits at lo + f*h. Non-periodic boundary
// faces carry zero flux; periodic grids wrap (face 0 equals face n).
inline std::vector<double> probability_current(const Fp1DModel& m,
                                               const DensityField& f) {
    const std::size_t n = m.grid.n;
    const double h = m.grid.h();
    std::vector<double> J(n + 1, 0.0);
    auto face = [&](std::size_t a, std::size_t b) {
        const double vbar = 0.5 * (m.drift[a] + m.drift[b]);
        return vbar * 0.5 * (f.p[a] + f.p[b])
               - (m.diff[b] * f.p[b] - m.diff[a] * f.p[a]) / (2.0 * h);
    };
    for (std::size_t i = 1; i < n; ++i) J[i] = face(i - 1, i);
    if (m.grid.periodic) {
        J[n] = face(n - 1, 0);
        J[0] = J[n];
    }
    return J;
}

// Guard against an unstable explicit step: the diffusion number D dt / h^2 must
// stay below 1/2 and the advection must not flip the sign of the updated cell.
inline void fp_check_stability(const Fp1DModel& m, double dt) {
    const double h = m.grid.h();
    double maxD = 0.0, maxV = 0.0;
    for (std::size_t i = 0; i < m.grid.n; ++i) {
        maxD = std::max(maxD, m.diff[i]);
        maxV = std::max(maxV, std::abs(m.drift[i]));
    }
    if (dt * (maxD / (h * h) + maxV / h) > 1.0)
        throw SimulationError("explicit Fokker-Planck step violates the stability bound");
}

// Cell Peclet number |v| h / D; above ~2 the central advection stencil can
// produce negative cells.
inline double fp_peclet(const Fp1DModel& m) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m.grid.n; ++i)
        if (m.diff[i] > 0.0)
            worst = std::max(worst, std::abs(m.drift[i]) * m.grid.h() / m.diff[i]);
    return worst;
}

template <class Recorder>
void fp_evolve(const Fp1DModel& m, DensityField& f, double dt, std::size_t nSteps,
               std::size_t recordEvery, Recorder&& rec) {
    fp_check_stability(m, dt);
    const std::size_t n = m.grid.n;
    const double h = m.grid.h();
    if (f.p.size() != n) throw std::invalid_argument("fp_evolve: field/grid mismatch");
    std::vector<double> J(n + 1);
    if (recordEvery == 0) recordEvery = nSteps + 1;
    rec(0.0, f);
    for (std::size_t s = 0; s < nSteps; ++s) {
        // inline flux computation (probability_current allocates)
        for (std::size_t i = 1; i < n; ++i) {
            const double vbar = 0.5 * (m.drift[i - 1] + m.drift[i]);
            J[i] = vbar * 0.5 * (f.p[i - 1] + f.p[i])
                   - (m.diff[i] * f.p[i] - m.diff[i - 1] * f.p[i - 1]) / (2.0 * h);
        }
        if (m.grid.periodic) {
            const double vbar = 0.5 * (m.drift[n - 1] + m.drift[0]);
            J[n] = vbar * 0.5 * (f.p[n - 1] + f.p[0])
                   - (m.diff[0] * f.p[0] - m.diff[n - 1] * f.p[n - 1]) / (2.0 * h);
            J[0] = J[n];
        } else {
            J[0] = J[n] = 0.0;
        }
        const double r = dt / h;
        for (std::size_t i = 0; i < n; ++i) f.p[i] -= r * (J[i + 1] - J[i]);
        if ((s + 1) % recordEvery == 0 || s + 1 == nSteps)
            rec(static_cast<double>(s + 1) * dt, f);
    }
}

inline void fp_evolve(const Fp1DModel& m, DensityField& f, double dt,
                      std::size_t nSteps) {
    fp_evolve(m, f, dt, nSteps, 0, [](double, const DensityField&) {});
}

// expectation of w(x) under the density
inline double fp_expectation(const DensityField& f,
                             const std::function<double(double)>& w) {
    std::vector<double> tmp(f.grid.n);
    for (std::size_t i = 0; i < f.grid.n; ++i) tmp[i] = f.p[i] * w(f.grid.x(i));
    return f.grid.h() * pairwise_sum(tmp);
}

// Time series of an observable under the evolving density, as a deterministic
// EnsembleSeries (count 0) so the same rate fits apply.
inline EnsembleSeries fp_observable_series(const Fp1DModel& m, DensityField f,
                                           double dt, std::size_t nSteps,
                                           std::size_t recordEvery,
                                           const std::function<double(double)>& w) {
    std::vector<double> wi(m.grid.n);
    for (std::size_t i = 0; i < m.grid.n; ++i) wi[i] = w(m.grid.x(i));
    EnsembleSeries s;
    s.count = 0;
    std::vector<double> tmp(m.grid.n);
    fp_evolve(m, f, dt, nSteps, recordEvery, [&](double t, const DensityField& g) {
        for (std::size_t i = 0; i < m.grid.n; ++i) tmp[i] = g.p[i] * wi[i];
        s.times.push_back(t);
        s.mean.push_back(g.grid.h() * pairwise_sum(tmp));
        s.var.push_back(0.0);
    });
    return s;
}

// Exact stationary state of the discrete zero-drift operator: p proportional
// to 1/D (the flux D_i p_i - D_{i-1} p_{i-1} vanishes identically).
inline DensityField stationary_density(const Fp1DModel& m) {
    for (double v : m.drift)
        if (v != 0.0)
            throw std::invalid_argument("stationary_density: requires zero drift");
    DensityField f;
    f.grid = m.grid;
    f.p.resize(m.grid.n);
    for (std::size_t i = 0; i < m.grid.n; ++i) {
        if (!(m.diff[i] > 0.0))
            throw std::invalid_argument("stationary_density: requires positive diffusion");
        f.p[i] = 1.0 / m.diff[i];
    }
    const double z = f.mass();
    for (auto& v : f.p) v /= z;
    return f;
}

namespace detail {

// SPD tridiagonal solve (Thomas); diag/off are not modified
inline void solve_tridiag(const std::vector<double>& diag,
                          const std::vector<double>& off,
                          std::vector<double> rhs, std::vector<double>& x,
                          std::vector<double>& cp) {
    const std::size_t n = diag.size();
    cp.resize(n);
    x.resize(n);
    cp[0] = off[0] / diag[0];
    rhs[0] /= diag[0];
    for (std::size_t i = 1; i < n; ++i) {
        const double m = diag[i] - off[i - 1] * cp[i - 1];
        if (i < n - 1) cp[i] = off[i] / m;
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / m;
    }
    x[n - 1] = rhs[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) x[i] = rhs[i] - cp[i] * x[i + 1];
}

} // namespace detail

// Slowest decay rate lambda_1 of the zero-drift finite-volume operator: the
// operator on q = D p is similar to the symmetric B = D^{1/2} Delta D^{1/2} /
// (2 h^2), whose null vector is D^{-1/2}. Deflated inverse power iteration on
// the SPD matrix (shift I - B); periodic corners are folded in with the
// Sherman-Morrison correction.
inline double fp_decay_eigenvalue(const Fp1DModel& m, std::size_t maxIter = 400,
                                  double tol = 1e-12) {
    const std::size_t n = m.grid.n;
    if (n < 8) throw std::invalid_argument("fp_decay_eigenvalue: grid too small");
    for (double v : m.drift)
        if (v != 0.0)
            throw std::invalid_argument("fp_decay_eigenvalue: requires zero drift");
    const double h = m.grid.h();
    const double c = 1.0 / (2.0 * h * h);

    std::vector<double> rd(n);   // sqrt of D
    double maxD = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(m.diff[i] > 0.0))
            throw std::invalid_argument("fp_decay_eigenvalue: requires positive diffusion");
        rd[i] = std::sqrt(m.diff[i]);
        maxD = std::max(maxD, m.diff[i]);
    }
    const double L = m.grid.hi - m.grid.lo;
    const double shift = 2.0 * maxD / (L * L);

    // A = shift I - B: SPD; tridiagonal part plus periodic corner -corner
    std::vector<double> diag(n), off(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 2.0;
        if (!m.grid.periodic && (i == 0 || i == n - 1)) deg = 1.0;
        diag[i] = shift + c * deg * m.diff[i];
    }
    for (std::size_t i = 0; i + 1 < n; ++i) off[i] = -c * rd[i] * rd[i + 1];
    const double corner = m.grid.periodic ? -c * rd[n - 1] * rd[0] : 0.0;

    auto applyB = [&](const std::vector<double>& v, std::vector<double>& out) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = (shift - diag[i]) * v[i];   // B diagonal
            if (i > 0) acc -= off[i - 1] * v[i - 1];
            if (i + 1 < n) acc -= off[i] * v[i + 1];
            out[i] = acc;
        }
        if (m.grid.periodic) {
            out[0] -= corner * v[n - 1];
            out[n - 1] -= corner * v[0];
        }
    };

    // Sherman-Morrison setup for the periodic corner: A = T + gamma u u^T with
    // u = e_0 + (corner/gamma) e_{n-1}
    std::vector<double> diagT = diag;
    double gamma = 0.0;
    std::vector<double> q1, work, cp;
    if (m.grid.periodic) {
        gamma = -diag[0] * 0.5;
        diagT[0] -= gamma;
        diagT[n - 1] -= corner * corner / gamma;
        std::vector<double> u(n, 0.0);
        u[0] = gamma;
        u[n - 1] = corner;
        detail::solve_tridiag(diagT, off, u, q1, cp);
    }
    auto solveA = [&](const std::vector<double>& rhs, std::vector<double>& x) {
        detail::solve_tridiag(diagT, off, rhs, x, cp);
        if (m.grid.periodic) {
            const double vx = x[0] + (corner / gamma) * x[n - 1];
            const double vq = q1[0] + (corner / gamma) * q1[n - 1];
            const double f = vx / (1.0 + vq);
            for (std::size_t i = 0; i < n; ++i) x[i] -= f * q1[i];
        }
    };

    std::vector<double> w(n);   // null vector of B
    double wn = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 1.0 / rd[i];
        wn += w[i] * w[i];
    }
    wn = std::sqrt(wn);
    for (auto& v : w) v /= wn;

    auto deflate = [&](std::vector<double>& v) {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += w[i] * v[i];
        for (std::size_t i = 0; i < n; ++i) v[i] -= d * w[i];
    };

    std::vector<double> z(n), y(n), bz(n);
    for (std::size_t i = 0; i < n; ++i)
        z[i] = std::sin(2.0 * pi * (m.grid.x(i) - m.grid.lo) / L) + 0.3 * w[i];
    deflate(z);

    double lambda = 0.0, prev = -1.0;
    for (std::size_t it = 0; it < maxIter; ++it) {
        double zn = 0.0;
        for (double v : z) zn += v * v;
        zn = std::sqrt(zn);
        if (!(zn > 0.0)) throw SimulationError("eigenvalue iteration collapsed");
        for (auto& v : z) v /= zn;
        applyB(z, bz);
        double r = 0.0;
        for (std::size_t i = 0; i < n; ++i) r += z[i] * bz[i];
        lambda = -r;
        if (it > 3 && std::abs(lambda - prev) <= tol * std::abs(lambda)) break;
        prev = lambda;
        solveA(z, y);
        deflate(y);
        z.swap(y);
    }
    return lambda;
}

struct FpRateResult {
    double eigenRate = 0.0;       // spectral gap of the grid operator
    double timeDomainRate = 0.0;  // relaxation rate of the observable
    double gapRatio = 0.0;        // timeDomainRate / eigenRate, >= 1 up to fit error
    RateFit timeDomainFit;
};

// Decay rate both ways on the same grid. The observable relaxes toward its
// discrete stationary expectation, so the plateau is subtracted before the
// fit; the tail below relativeFloor of the initial gap is discarded (there the
// subtraction leaves only rounding noise and remnants of modes with negligible
// observable weight). The spectral gap bounds the observable rate from below;
// equality holds only when the slowest mode actually carries observable
// weight, which the small-angle-pooled modes of the adaptive measurement do
// not, so gapRatio well above one is the expected geometry here.
inline FpRateResult decay_rate_from_fp(const Fp1DModel& m, const DensityField& p0,
                                       double dt, std::size_t nSteps,
                                       std::size_t recordEvery,
                                       const std::function<double(double)>& w,
                                       double tailFraction = 0.5,
                                       double relativeFloor = 1e-5) {
    FpRateResult r;
    r.eigenRate = fp_decay_eigenvalue(m);
    EnsembleSeries s = fp_observable_series(m, p0, dt, nSteps, recordEvery, w);

    const double winf = fp_expectation(stationary_density(m), w);
    for (auto& v : s.mean) v -= winf;
    const double floorAbs = relativeFloor * std::abs(s.mean.front());
    std::size_t keep = s.times.size();
    while (keep > 0 && s.mean[keep - 1] < floorAbs) --keep;
    s.times.resize(keep);
    s.mean.resize(keep);
    s.var.resize(keep);

    r.timeDomainFit = fit_asymptotic_rate(s, tailFraction);
    r.timeDomainRate = r.timeDomainFit.rate;
    if (r.eigenRate != 0.0) r.gapRatio = r.timeDomainRate / r.eigenRate;
    return r;
}

// Cell masses of a sample set on a grid (for comparisons against densities).
inline std::vector<double> cell_masses(const Grid1D& grid,
                                       const std::vector<double>& samples) {
    std::vector<double> mass(grid.n, 0.0);
    if (samples.empty()) return mass;
    const double inc = 1.0 / static_cast<double>(samples.size());
    for (double v : samples) mass[grid.locate(v)] += inc;
    return mass;
}

inline std::vector<double> cell_masses(const DensityField& f) {
    std::vector<double> mass(f.p.size());
    for (std::size_t i = 0; i < mass.size(); ++i) mass[i] = f.p[i] * f.grid.h();
    return mass;
}

} // namespace backaction
