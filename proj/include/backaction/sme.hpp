#pragma once

// Stochastic master equation integrator and the feedback loops built on it.
// A measurement of observable S at strength k contributes
//
//   d rho = -k [S,[S,rho]] dt + sqrt(2k) (S rho + rho S - 2 <S> rho) dW
//
// and each environment channel L at rate r contributes
//   r (2 L rho L^ - L^L rho - rho L^L) dt.
// Stabilization (re-Hermitization, trace renormalization, projection onto the
// physical simplex) is explicit and can be switched off to observe the drift it
// suppresses; the verification command uses that as a fault-injection probe.

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "protocols.hpp"
#include "quantum.hpp"
#include "rng.hpp"
#include "sde.hpp"

namespace backaction {

using MatrixXc = Eigen::MatrixXcd;
using VectorXc = Eigen::VectorXcd;

struct SmeMeasurement {
    MatrixXc observable;   // Hermitian
    double strength = 0.0;
};

struct LindbladChannel {
    MatrixXc op;
    double rate = 0.0;
};

// Dephasing at rates betaX/Y/Z and relaxation out of the target basis state
// (|1><0| at rate gamma, so the target population decays at 2 gamma).
inline std::vector<LindbladChannel> qubit_noise_channels(const NoiseParams& np) {
    std::vector<LindbladChannel> ch;
    auto add = [&ch](const Matrix2c& op, double rate) {
        if (rate != 0.0) ch.push_back({MatrixXc(op), rate});
    };
    add(pauli_x(), np.betaX);
    add(pauli_y(), np.betaY);
    add(pauli_z(), np.betaZ);
    Matrix2c lower = Matrix2c::Zero();
    lower(1, 0) = 1.0;
    add(lower, np.gamma);
    return ch;
}

struct SmeOptions {
    bool rehermitize = true;
    bool renormalize = true;
    bool projectPositive = false;   // clamp negative eigenvalues after the step
    double positivityFloor = -1e-3; // error out below this when projecting
};

struct SmeStepStats {
    double hermDefect = 0.0;    // before stabilization
    double traceDefect = 0.0;
    double minEigenvalue = 0.0; // only filled when projecting
    bool projected = false;
};

inline void sme_step(MatrixXc& rho, const MatrixXc* hamiltonian,
                     const std::vector<SmeMeasurement>& measurements,
                     const std::vector<LindbladChannel>& noise,
                     double dt, const double* dW,
                     const SmeOptions& opt = {}, SmeStepStats* stats = nullptr) {
    const auto n = rho.rows();
    MatrixXc d = MatrixXc::Zero(n, n);
    if (hamiltonian)
        d -= complexd(0, 1) * ((*hamiltonian) * rho - rho * (*hamiltonian));
    for (std::size_t m = 0; m < measurements.size(); ++m) {
        const auto& S = measurements[m].observable;
        const double k = measurements[m].strength;
        const MatrixXc Sr = S * rho;
        const MatrixXc rS = rho * S;
        d += (k * dt) * (2.0 * S * rS - S * Sr - rS * S);
        const double ev = Sr.trace().real();
        d += (std::sqrt(2.0 * k) * dW[m]) * (Sr + rS - 2.0 * ev * rho);
    }
    for (const auto& c : noise) {
        const MatrixXc Ld = c.op.adjoint();
        const MatrixXc LdL = Ld * c.op;
        d += (c.rate * dt) * (2.0 * c.op * rho * Ld - LdL * rho - rho * LdL);
    }
    rho += d;

    if (stats) {
        stats->hermDefect = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
        stats->traceDefect = std::abs(rho.trace() - complexd(1.0, 0.0));
        stats->projected = false;
    }
    if (opt.rehermitize) rho = 0.5 * (rho + rho.adjoint()).eval();
    if (opt.renormalize) rho /= rho.trace().real();
    if (opt.projectPositive) {
        Eigen::SelfAdjointEigenSolver<MatrixXc> es(rho);
        const double lo = es.eigenvalues().minCoeff();
        if (stats) stats->minEigenvalue = lo;
        if (lo < opt.positivityFloor)
            throw SimulationError("density matrix eigenvalue below positivity floor");
        if (lo < 0.0) {
            Eigen::VectorXd w = es.eigenvalues().cwiseMax(0.0);
            rho = es.eigenvectors() * w.asDiagonal() * es.eigenvectors().adjoint();
            rho /= rho.trace().real();
            if (stats) stats->projected = true;
        }
    }
}

inline MatrixXc spin_axis_operator(const BlochVector& n) {
    Matrix2c s = n.x * pauli_x() + n.y * pauli_y() + n.z * pauli_z();
    return MatrixXc(s);
}

// exp(-i angle/2 n.sigma): rotates the Bloch vector by +angle about n
inline Matrix2c rotation_about(const BlochVector& n, double angle) {
    const double c = std::cos(0.5 * angle), s = std::sin(0.5 * angle);
    Matrix2c m;
    m << complexd(c, -s * n.z), complexd(-s * n.y, -s * n.x),
         complexd(s * n.y, -s * n.x), complexd(c, s * n.z);
    return m;
}

struct SmeRunResult {
    std::vector<double> times;
    std::vector<BlochVector> bloch;
    std::vector<double> delta;
    std::vector<double> pe;
    std::vector<double> purity;
    MatrixXc finalRho;
};

// Full feedback loop at the density-matrix level. The Wiener draw order matches
// ReducedStepper exactly (perpendicular channel first, then parallel), so a run
// from the same (seed, streamIndex) consumes identical increments and can be
// compared pathwise against the reduced chart.
inline SmeRunResult run_controlled_sme(const ControlParams& cp, const NoiseParams& np,
                                       const BlochVector& b0, double dt,
                                       std::size_t nSteps, std::size_t recordEvery,
                                       NoiseStream& ns, const SmeOptions& opt = {}) {
    if (recordEvery == 0) recordEvery = 1;
    MatrixXc rho = MatrixXc(bloch_to_density(b0));
    const auto noise = qubit_noise_channels(np);
    const bool drawPerp = uses_perp_channel(cp);
    const bool drawPar = uses_parallel_channel(cp);
    const BlochVector target{0.0, 0.0, 1.0};

    SmeRunResult out;
    double prevDelta = 0.0;
    auto record = [&](double t) {
        const BlochVector b = density_to_bloch(Matrix2c(rho));
        const ReducedCoords rc = reduced_coords(b, prevDelta);
        out.times.push_back(t);
        out.bloch.push_back(b);
        out.delta.push_back(rc.delta);
        out.pe.push_back(error_probability(Matrix2c(rho)));
        out.purity.push_back((rho * rho).trace().real());
    };
    record(0.0);

    std::vector<SmeMeasurement> meas;
    double dW[2];
    for (std::size_t n = 0; n < nSteps; ++n) {
        const BlochVector b = density_to_bloch(Matrix2c(rho));
        const ReducedCoords rc = reduced_coords(b, prevDelta);
        prevDelta = rc.delta;
        const MeasurementChoice mc = select_measurement(cp, rc.delta);

        meas.clear();
        int nw = 0;
        if (drawPerp) {
            meas.push_back({spin_axis_operator(measured_spin_axis(rc.delta)), mc.kPerp});
            dW[nw++] = ns.wiener(dt);
        }
        if (drawPar) {
            BlochVector ahat = rc.a > eps_num
                ? BlochVector{b.x / rc.a, b.y / rc.a, b.z / rc.a} : target;
            meas.push_back({spin_axis_operator(ahat), mc.muPar});
            dW[nw++] = ns.wiener(dt);
        }
        sme_step(rho, nullptr, meas, noise, dt, dW, opt);

        if (mc.hamiltonian && cp.alphaMax > 0.0) {
            const BlochVector b2 = density_to_bloch(Matrix2c(rho));
            const ReducedCoords rc2 = reduced_coords(b2, prevDelta);
            const double angle = std::min(cp.alphaMax * dt, std::abs(rc2.delta));
            if (angle > 0.0) {
                const Matrix2c u = rotation_about(control_hamiltonian_axis(b2, target), angle);
                rho = MatrixXc(u) * rho * MatrixXc(u).adjoint();
            }
        }
        if ((n + 1) % recordEvery == 0 || n + 1 == nSteps)
            if (out.times.back() != (n + 1) * dt) record((n + 1) * dt);
    }
    out.finalRho = rho;
    return out;
}

// ---- control of an N-level system toward a pure target ----

// Largest-eigenvalue eigenvector with a deterministic phase: the component of
// largest magnitude (smallest index among ties within eps_num) is made real
// positive.
inline VectorXc dominant_eigenvector(const MatrixXc& rho) {
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(rho);
    VectorXc v = es.eigenvectors().col(rho.rows() - 1);
    Eigen::Index best = 0;
    double bestAbs = std::abs(v(0));
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        const double a = std::abs(v(i));
        if (a > bestAbs + eps_num) { bestAbs = a; best = i; }
    }
    const complexd c = v(best);
    if (std::abs(c) > 0.0) v *= std::conj(c) / std::abs(c);
    return v;
}

// parallel-type observable for an N-level target: eigenvalue +1 on the target,
// -1 on its complement
inline MatrixXc purity_observable(const VectorXc& chi) {
    const auto n = chi.size();
    return 2.0 * (chi * chi.adjoint()) - MatrixXc::Identity(n, n);
}

struct NLevelObservable {
    MatrixXc sigma;
    double delta = 0.0;   // 2 arccos |<chi|psi>|
};

// Observable measured on an N-level system whose dominant eigenvector is psi:
// the analogue of the perpendicular spin component, acting in the plane spanned
// by the target chi and the in-plane complement of psi. For N=2 this is exactly
// cos(delta) sigma_x - sin(delta) sigma_z in the {chi, chi_perp} frame.
inline NLevelObservable nlevel_control_observable(const VectorXc& chi,
                                                  const VectorXc& psi) {
    const auto n = chi.size();
    const complexd c = chi.dot(psi);
    const double ct = std::min(std::abs(c), 1.0);
    const double theta = std::acos(ct);
    const double delta = 2.0 * theta;

    VectorXc psin = psi;
    if (std::abs(c) > eps_num) psin *= std::conj(c) / std::abs(c);

    VectorXc perp(n);
    if (std::sin(theta) < eps_num) {
        // coincident with the target: deterministic Gram-Schmidt tie-break from
        // the standard basis, seeded by the smallest-|component| direction
        Eigen::Index j = 0;
        double lo = std::abs(chi(0));
        for (Eigen::Index i = 1; i < n; ++i)
            if (std::abs(chi(i)) < lo - eps_num) { lo = std::abs(chi(i)); j = i; }
        perp.setZero();
        perp(j) = 1.0;
        perp -= chi.dot(perp) * chi;
        perp.normalize();
    } else {
        perp = (psin - ct * chi) / std::sin(theta);
    }

    NLevelObservable obs;
    obs.delta = delta;
    const MatrixXc sx = chi * perp.adjoint() + perp * chi.adjoint();
    const MatrixXc sz = chi * chi.adjoint() - perp * perp.adjoint();
    obs.sigma = std::cos(delta) * sx - std::sin(delta) * sz;
    return obs;
}

struct NLevelRunResult {
    std::vector<double> times;
    std::vector<double> pe;      // 1 - <chi| rho |chi>
    std::vector<double> purity;
    MatrixXc finalRho;
};

inline NLevelRunResult run_nlevel_control(const VectorXc& chi, const MatrixXc& rho0,
                                          double kappa, double mu, double dt,
                                          std::size_t nSteps, std::size_t recordEvery,
                                          NoiseStream& ns, const SmeOptions& opt = {}) {
    if (recordEvery == 0) recordEvery = 1;
    MatrixXc rho = rho0;
    NLevelRunResult out;
    auto record = [&](double t) {
        out.times.push_back(t);
        out.pe.push_back(1.0 - (chi.adjoint() * rho * chi)(0, 0).real());
        out.purity.push_back((rho * rho).trace().real());
    };
    record(0.0);

    std::vector<SmeMeasurement> meas;
    double dW[2];
    for (std::size_t n = 0; n < nSteps; ++n) {
        const VectorXc psi = dominant_eigenvector(rho);
        const NLevelObservable obs = nlevel_control_observable(chi, psi);

        meas.clear();
        int nw = 0;
        meas.push_back({obs.sigma, measurement_strength(kappa, obs.delta)});
        dW[nw++] = ns.wiener(dt);
        if (mu > 0.0) {
            meas.push_back({purity_observable(chi), mu});
            dW[nw++] = ns.wiener(dt);
        }
        sme_step(rho, nullptr, meas, {}, dt, dW, opt);
        if ((n + 1) % recordEvery == 0 || n + 1 == nSteps)
            if (out.times.back() != (n + 1) * dt) record((n + 1) * dt);
    }
    out.finalRho = rho;
    return out;
}

// Pathwise gap between the reduced chart and the density-matrix integration of
// the same protocol and noise realization: both sides consume streams built
// from identical (seed, streamIndex), so the increments match step for step.
inline double reduced_vs_sme_max_gap(const ControlParams& cp, const NoiseParams& np,
                                     double delta0, double a0, double dt,
                                     std::size_t nSteps, std::size_t recordEvery,
                                     std::uint64_t seed, std::uint64_t streamIndex) {
    NoiseStream nsA(seed, streamIndex), nsB(seed, streamIndex);
    const ReducedStepper stepper(cp, np);
    double delta = delta0, a = a0;

    SmeRunResult full = run_controlled_sme(cp, np, bloch_from_reduced(delta0, a0),
                                           dt, nSteps, recordEvery, nsB);
    double gap = 0.0;
    std::size_t idx = 1;
    for (std::size_t n = 0; n < nSteps; ++n) {
        stepper.step(delta, a, dt, nsA);
        if ((n + 1) % recordEvery == 0 || n + 1 == nSteps) {
            if (idx < full.delta.size() && full.times[idx] == (n + 1) * dt) {
                gap = std::max(gap, std::abs(wrap_circle(delta - full.delta[idx])));
                ++idx;
            }
        }
    }
    return gap;
}

} // namespace backaction
