#pragma once

// Feedback protocols in the reduced chart. For states confined to the plane
// containing the target, the density matrix reduces to the polar pair
// (delta, a): angle from the target and Bloch length. In this chart the
// perpendicular measurement of strength k contributes
//
//   d delta = sqrt(8 k)/a dW,        da = 4 k (1 - a^2)/a dt,
//
// the parallel (purifying) measurement of strength mu contributes
//
//   da = sqrt(8 mu) (1 - a^2) dV,
//
// and the environment (dephasing rates betaX/Y/Z, relaxation gamma out of the
// target) contributes the deterministic drift
//
//   d delta = sin d [2 g/a + cos d (g + 4 bx - 4 bz)] dt
//   da      = [-2 g cos d - a (g + 4 by + 4 bz) - a cos^2 d (g + 4 bx - 4 bz)] dt.
//
// See docs/reduced_model_derivation.md for the derivation from the Bloch form.

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "analysis.hpp"
#include "quantum.hpp"
#include "rng.hpp"
#include "sde.hpp"

namespace backaction {

struct NoiseParams {
    double gamma = 0.0;    // relaxation out of the target state
    double betaX = 0.0, betaY = 0.0, betaZ = 0.0;   // dephasing rates

    bool any() const { return gamma != 0.0 || betaX != 0.0 || betaY != 0.0 || betaZ != 0.0; }
};

enum class ProtocolKind {
    DiffusionGradient,      // adaptive perpendicular strength k = kappa delta^2, optional parallel mu
    HamiltonianPerp,        // bang-bang rotation plus perpendicular measurement at constant k
    HamiltonianParallel,    // bang-bang rotation plus parallel measurement at strength mu
};

struct ControlParams {
    double kappa = 1.0;          // overall feedback resource scale
    ProtocolKind kind = ProtocolKind::DiffusionGradient;
    double mu = 0.0;             // parallel measurement strength
    double fixedK = -1.0;        // >= 0 freezes the perpendicular strength
    double alphaMax = 0.0;       // bang-bang rotation rate for Hamiltonian protocols
    BoundaryMode boundary = BoundaryMode::SignedCircle;
};

// adaptive perpendicular strength of the diffusion-gradient scheme
inline double measurement_strength(double kappa, double delta) {
    return kappa * delta * delta;
}

struct MeasurementChoice {
    double kPerp = 0.0;
    double muPar = 0.0;
    bool hamiltonian = false;
};

inline MeasurementChoice select_measurement(const ControlParams& cp, double delta) {
    MeasurementChoice mc;
    switch (cp.kind) {
        case ProtocolKind::DiffusionGradient:
            mc.kPerp = cp.fixedK >= 0.0 ? cp.fixedK : measurement_strength(cp.kappa, delta);
            mc.muPar = cp.mu;
            break;
        case ProtocolKind::HamiltonianPerp:
            mc.kPerp = cp.fixedK >= 0.0 ? cp.fixedK : cp.kappa;
            mc.hamiltonian = true;
            break;
        case ProtocolKind::HamiltonianParallel:
            mc.muPar = cp.mu;
            mc.hamiltonian = true;
            break;
    }
    return mc;
}

// which Wiener channels a protocol consumes; fixed per protocol so streams align
// across representations of the same run
inline bool uses_perp_channel(const ControlParams& cp) {
    return cp.kind != ProtocolKind::HamiltonianParallel;
}
inline bool uses_parallel_channel(const ControlParams& cp) {
    return cp.kind == ProtocolKind::HamiltonianParallel ||
           (cp.kind == ProtocolKind::DiffusionGradient && cp.mu > 0.0);
}

// Rotation axis of the feedback Hamiltonian: perpendicular to the plane of the
// current state and the target, oriented so the rotation shortens the angle.
// Degenerate (aligned or antipodal) configurations fall back to -y, the
// generator that rotates +x toward +z.
inline BlochVector control_hamiltonian_axis(const BlochVector& a,
                                            const BlochVector& target) {
    BlochVector c{a.y * target.z - a.z * target.y,
                  a.z * target.x - a.x * target.z,
                  a.x * target.y - a.y * target.x};
    const double n = c.norm();
    if (n < eps_num) return {0.0, -1.0, 0.0};
    return {c.x / n, c.y / n, c.z / n};
}

inline double reduced_delta_noise_drift(double delta, double a, const NoiseParams& np) {
    const double C = std::cos(delta), S = std::sin(delta);
    return S * (2.0 * np.gamma / a + C * (np.gamma + 4.0 * (np.betaX - np.betaZ)));
}

inline double reduced_a_noise_drift(double delta, double a, const NoiseParams& np) {
    const double C = std::cos(delta);
    return -2.0 * np.gamma * C - a * (np.gamma + 4.0 * (np.betaY + np.betaZ))
           - a * C * C * (np.gamma + 4.0 * (np.betaX - np.betaZ));
}

// Angle-only model for a pure state under the diffusion-gradient protocol with
// no environment: d delta = sqrt(8 kappa) |delta| dW.
inline SdeModel noiseless_model(double kappa,
                                BoundaryMode boundary = BoundaryMode::SignedCircle) {
    SdeModel m;
    m.dim = 1;
    m.channels = 1;
    m.drift = [](const double*, double* out) { out[0] = 0.0; };
    m.diffusion = [kappa](const double* s, double* out) {
        out[0] = std::sqrt(8.0 * measurement_strength(kappa, s[0]));
    };
    m.constrain = [boundary](double* s) { s[0] = wrap_angle(s[0], boundary); };
    return m;
}

// Full reduced model (delta, a) with environment and protocol terms. Channel 0
// is the perpendicular measurement, channel 1 the parallel one; unused channels
// carry zero diffusion so paired runs stay aligned. This form is the literal
// Euler representation: the bang-bang rotation enters as the drift
// -alphaMax sign(delta) and the purification term as 4 k (1 - a^2)/a. The
// dedicated stepper below replaces both with their exact per-step maps.
inline SdeModel noisy_model(const ControlParams& cp, const NoiseParams& np) {
    SdeModel m;
    m.dim = 2;
    m.channels = 2;
    m.drift = [cp, np](const double* s, double* out) {
        const double delta = s[0], a = s[1];
        const MeasurementChoice mc = select_measurement(cp, delta);
        double dd = reduced_delta_noise_drift(delta, a, np);
        double da = reduced_a_noise_drift(delta, a, np);
        da += 4.0 * mc.kPerp * (1.0 - a * a) / a;
        if (mc.hamiltonian) dd -= cp.alphaMax * (delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0));
        out[0] = dd;
        out[1] = da;
    };
    m.diffusion = [cp](const double* s, double* out) {
        const double delta = s[0], a = s[1];
        const MeasurementChoice mc = select_measurement(cp, delta);
        out[0] = std::sqrt(8.0 * mc.kPerp) / a;          // delta <- dW
        out[1] = 0.0;                                    // a     <- dW
        out[2] = 0.0;                                    // delta <- dV
        out[3] = std::sqrt(8.0 * mc.muPar) * (1.0 - a * a);  // a <- dV
    };
    m.constrain = [boundary = cp.boundary](double* s) {
        s[0] = wrap_angle(s[0], boundary);
        if (s[1] > 1.0) {
            if (s[1] > 1.05) throw SimulationError("Bloch length overshoot beyond clamp window");
            s[1] = 1.0;
        }
        if (s[1] < eps_num) s[1] = eps_num;
    };
    return m;
}

// Linearized error dynamics near the target for the diffusion-gradient scheme:
// d Delta = [4 (gamma + betaX + betaY) - 8 kappa Delta] dt + 2 sqrt(8 kappa) Delta dW,
// giving the steady-state mean Delta_ss = (gamma + betaX + betaY) / (2 kappa).
inline SdeModel linearized_model(double kappa, const NoiseParams& np) {
    SdeModel m;
    m.dim = 1;
    m.channels = 1;
    const double pump = 4.0 * (np.gamma + np.betaX + np.betaY);
    m.drift = [pump, kappa](const double* s, double* out) {
        out[0] = pump - 8.0 * kappa * s[0];
    };
    m.diffusion = [kappa](const double* s, double* out) {
        out[0] = 2.0 * std::sqrt(8.0 * kappa) * s[0];
    };
    m.constrain = [](double* s) {
        if (s[0] < 0.0) s[0] = 0.0;
    };
    return m;
}

inline double linearized_steady_state(double kappa, const NoiseParams& np) {
    return (np.gamma + np.betaX + np.betaY) / (2.0 * kappa);
}

// Production stepper for the reduced chart. Identical dynamics to noisy_model
// except for two substitutions that remove the Euler pathologies without
// changing the order of accuracy: the bang-bang rotation uses its exact
// no-overshoot form, and the perpendicular-measurement purification term is
// applied as its exact per-step map 1 - a'^2 = (1 - a^2) exp(-8 k dt). The
// Euler form 4 k (1 - a^2)/a dt is stiff as a -> 0 and overshoots past a = 1
// at practical step sizes; the map is stable for any dt and exact when k is
// frozen.
class ReducedStepper {
public:
    ReducedStepper(const ControlParams& cp, const NoiseParams& np)
        : cp_(cp), np_(np),
          drawPerp_(uses_perp_channel(cp)), drawPar_(uses_parallel_channel(cp)) {}

    void step(double& delta, double& a, double dt, NoiseStream& ns) const {
        const MeasurementChoice mc = select_measurement(cp_, delta);
        double dd = 0.0, da = 0.0;
        if (np_.any()) {
            dd += reduced_delta_noise_drift(delta, a, np_) * dt;
            da += reduced_a_noise_drift(delta, a, np_) * dt;
        }
        if (drawPerp_)
            dd += std::sqrt(8.0 * mc.kPerp) / a * ns.wiener(dt);
        if (drawPar_)
            da += std::sqrt(8.0 * mc.muPar) * (1.0 - a * a) * ns.wiener(dt);

        delta += dd;
        if (mc.hamiltonian) {
            const double rot = cp_.alphaMax * dt;
            if (std::abs(delta) <= rot) delta = 0.0;
            else delta -= (delta > 0.0 ? rot : -rot);
        }
        delta = wrap_angle(delta, cp_.boundary);

        a += da;
        if (drawPerp_ && mc.kPerp > 0.0)
            a = std::sqrt(1.0 - (1.0 - a * a) * std::exp(-8.0 * mc.kPerp * dt));
        if (a > 1.0) {
            if (a > 1.05) throw SimulationError("Bloch length overshoot beyond clamp window");
            a = 1.0;
        }
        if (a < eps_num) a = eps_num;
    }

    const ControlParams& control() const { return cp_; }
    const NoiseParams& noise() const { return np_; }

private:
    ControlParams cp_;
    NoiseParams np_;
    bool drawPerp_, drawPar_;
};

struct EnsembleOptions {
    std::size_t nTraj = 10000;
    std::uint64_t seed = 42;
    int threads = 1;
    std::size_t recordEvery = 20;
    IncrementMode mode = IncrementMode::Gaussian;
};

// Ensemble mean of the error probability under a protocol, from (delta0, a0).
// The pure noiseless diffusion-gradient case takes a tight angle-only path that
// is pathwise identical to the stepper (a stays exactly 1 there).
inline EnsembleSeries mean_error_ensemble(const ControlParams& cp, const NoiseParams& np,
                                          double delta0, double a0, double dt,
                                          std::size_t nSteps, const EnsembleOptions& opt) {
    std::vector<double> times;
    times.push_back(0.0);
    for (std::size_t n = opt.recordEvery; n <= nSteps; n += opt.recordEvery)
        times.push_back(static_cast<double>(n) * dt);

    const bool fastPath = !np.any() && cp.kind == ProtocolKind::DiffusionGradient &&
                          cp.mu == 0.0 && cp.fixedK < 0.0 && a0 == 1.0;
    if (fastPath) {
        const double g = std::sqrt(8.0 * cp.kappa);
        const auto boundary = cp.boundary;
        return run_ensemble(opt.nTraj, times, opt.threads,
            [&, g, delta0, boundary](std::size_t j, std::vector<double>& out) {
                NoiseStream ns(opt.seed, j, opt.mode);
                double s = delta0;
                out[0] = error_probability_reduced(s, 1.0);
                std::size_t idx = 1;
                for (std::size_t n = 0; n < nSteps; ++n) {
                    s += g * std::abs(s) * ns.wiener(dt);
                    s = wrap_angle(s, boundary);
                    if ((n + 1) % opt.recordEvery == 0)
                        out[idx++] = error_probability_reduced(s, 1.0);
                }
            });
    }

    const ReducedStepper stepper(cp, np);
    return run_ensemble(opt.nTraj, times, opt.threads,
        [&, delta0, a0](std::size_t j, std::vector<double>& out) {
            NoiseStream ns(opt.seed, j, opt.mode);
            double delta = delta0, a = a0;
            out[0] = error_probability_reduced(delta, a);
            std::size_t idx = 1;
            for (std::size_t n = 0; n < nSteps; ++n) {
                stepper.step(delta, a, dt, ns);
                if ((n + 1) % opt.recordEvery == 0)
                    out[idx++] = error_probability_reduced(delta, a);
            }
        });
}

struct FirstPassageResult {
    std::vector<double> levels;
    // times[l][j]: first time trajectory j reached level l; NaN when censored
    std::vector<std::vector<double>> times;
};

// Per-trajectory first-passage times of the error probability through a set of
// levels (descending order required), censored at the horizon.
inline FirstPassageResult first_passage_ensemble(const ControlParams& cp,
                                                 const NoiseParams& np,
                                                 double delta0, double a0, double dt,
                                                 std::size_t nSteps,
                                                 std::vector<double> levels,
                                                 const EnsembleOptions& opt) {
    for (std::size_t l = 1; l < levels.size(); ++l)
        if (levels[l] >= levels[l - 1])
            throw std::invalid_argument("first_passage_ensemble: levels must descend");

    FirstPassageResult r;
    r.levels = levels;
    r.times.assign(levels.size(),
                   std::vector<double>(opt.nTraj, std::numeric_limits<double>::quiet_NaN()));

    const ReducedStepper stepper(cp, np);
    // reuses the deterministic block scheduling of run_ensemble via a dummy series
    std::vector<double> dummyTimes{0.0};
    run_ensemble(opt.nTraj, dummyTimes, opt.threads,
        [&](std::size_t j, std::vector<double>& out) {
            NoiseStream ns(opt.seed, j, opt.mode);
            double delta = delta0, a = a0;
            std::size_t li = 0;
            double pe = error_probability_reduced(delta, a);
            while (li < levels.size() && pe <= levels[li]) {
                r.times[li][j] = 0.0;
                ++li;
            }
            for (std::size_t n = 0; n < nSteps && li < levels.size(); ++n) {
                stepper.step(delta, a, dt, ns);
                pe = error_probability_reduced(delta, a);
                while (li < levels.size() && pe <= levels[li]) {
                    r.times[li][j] = static_cast<double>(n + 1) * dt;
                    ++li;
                }
            }
            out[0] = 0.0;
        });
    return r;
}

struct SteadyStateRun {
    double value = 0.0;   // ensemble x time average of the error probability
    double sem = 0.0;
    double relativeDrift = 0.0;
};

// Steady-state error probability: time average after burn-in, ensemble average
// across trajectories, with a stationarity diagnostic from the two half-windows.
inline SteadyStateRun steady_state_ensemble(const ControlParams& cp, const NoiseParams& np,
                                            double delta0, double a0, double dt,
                                            std::size_t nSteps, std::size_t burnSteps,
                                            const EnsembleOptions& opt,
                                            std::size_t sampleEvery = 8) {
    if (burnSteps >= nSteps)
        throw std::invalid_argument("steady_state_ensemble: burn exceeds horizon");
    const ReducedStepper stepper(cp, np);
    // out[0]: time average; out[1]: first half; out[2]: second half
    std::vector<double> cols{0.0, 1.0, 2.0};
    EnsembleSeries s = run_ensemble(opt.nTraj, cols, opt.threads,
        [&](std::size_t j, std::vector<double>& out) {
            NoiseStream ns(opt.seed, j, opt.mode);
            double delta = delta0, a = a0;
            double sum = 0.0, sumA = 0.0, sumB = 0.0;
            std::size_t cnt = 0, cntA = 0, cntB = 0;
            const std::size_t mid = burnSteps + (nSteps - burnSteps) / 2;
            for (std::size_t n = 0; n < nSteps; ++n) {
                stepper.step(delta, a, dt, ns);
                if (n >= burnSteps && (n - burnSteps) % sampleEvery == 0) {
                    const double pe = error_probability_reduced(delta, a);
                    sum += pe; ++cnt;
                    if (n < mid) { sumA += pe; ++cntA; }
                    else { sumB += pe; ++cntB; }
                }
            }
            out[0] = sum / static_cast<double>(cnt);
            out[1] = cntA ? sumA / static_cast<double>(cntA) : out[0];
            out[2] = cntB ? sumB / static_cast<double>(cntB) : out[0];
        });
    SteadyStateRun r;
    r.value = s.mean[0];
    r.sem = s.sem(0);
    r.relativeDrift = r.value != 0.0 ? (s.mean[2] - s.mean[1]) / r.value : 0.0;
    return r;
}

// Steady-state error of the Hamiltonian-plus-perpendicular protocol as a
// function of the frozen measurement strength; returns the swept curve and the
// grid optimum.
inline SweepResult sweep_optimal_k(ControlParams cp, const NoiseParams& np,
                                   const std::vector<double>& kGrid,
                                   double delta0, double a0, double dt,
                                   std::size_t nSteps, std::size_t burnSteps,
                                   const EnsembleOptions& opt) {
    std::vector<SweepPoint> pts;
    pts.reserve(kGrid.size());
    for (double k : kGrid) {
        cp.fixedK = k;
        const SteadyStateRun r =
            steady_state_ensemble(cp, np, delta0, a0, dt, nSteps, burnSteps, opt);
        pts.push_back({k, r.value, r.sem});
    }
    return pick_optimal(std::move(pts));
}

} // namespace backaction
