#pragma once

// Generic Euler-Maruyama engine. Models expose drift/diffusion callbacks over raw
// state arrays; the runner owns the time loop, the noise stream, recording, and
// finite-state checks. Templated so that concrete model structs with inline
// members pay no call overhead; the type-erased SdeModel below satisfies the same
// shape for tests and one-off models.

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "quantum.hpp"

namespace backaction {

struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// wrap to the signed circle (-pi, pi]
inline double wrap_circle(double x) {
    double y = std::remainder(x, 2.0 * pi);
    if (y <= -pi) y += 2.0 * pi;
    return y;
}

// wrap to [0, pi) with the endpoints identified (literal interval-periodic mode)
inline double wrap_interval(double x) {
    double y = std::fmod(x, pi);
    if (y < 0.0) y += pi;
    return y;
}

enum class BoundaryMode { SignedCircle, IntervalPeriodic };

inline double wrap_angle(double x, BoundaryMode mode) {
    return mode == BoundaryMode::SignedCircle ? wrap_circle(x) : wrap_interval(x);
}

// Type-erased model. diffusion fills dim*channels values, column-major: entry
// [i + dim*j] couples state i to Wiener channel j. constrain may be empty.
struct SdeModel {
    int dim = 1;
    int channels = 1;
    std::function<void(const double*, double*)> drift;
    std::function<void(const double*, double*)> diffusion;
    std::function<void(double*)> constrain;
};

struct TrajectoryPath {
    std::vector<double> times;
    std::vector<std::vector<double>> states;
};

namespace detail {

template <class Model>
inline void em_step(const Model& model, std::vector<double>& s,
                    const std::vector<double>& dW,
                    std::vector<double>& fbuf, std::vector<double>& gbuf,
                    double dt) {
    const int dim = model.dim;
    const int ch = model.channels;
    model.drift(s.data(), fbuf.data());
    model.diffusion(s.data(), gbuf.data());
    for (int i = 0; i < dim; ++i) {
        double ds = fbuf[i] * dt;
        for (int j = 0; j < ch; ++j) ds += gbuf[i + dim * j] * dW[j];
        s[i] += ds;
    }
    if (model.constrain) model.constrain(s.data());
}

inline void check_finite(const std::vector<double>& s, std::size_t step) {
    for (double v : s)
        if (!std::isfinite(v))
            throw SimulationError("non-finite state at step " + std::to_string(step));
}

} // namespace detail

// Integrate one trajectory, recording every recordEvery steps (state at t=0
// included). The stream is consumed in a fixed order: channels fastest.
template <class Model>
TrajectoryPath run_trajectory(const Model& model, std::vector<double> state0,
                              double dt, std::size_t nSteps, std::size_t recordEvery,
                              NoiseStream& stream) {
    if (!(dt > 0.0)) throw std::invalid_argument("run_trajectory: dt must be positive");
    if (recordEvery == 0) recordEvery = 1;
    if (static_cast<int>(state0.size()) != model.dim)
        throw std::invalid_argument("run_trajectory: state size does not match model");

    TrajectoryPath path;
    path.times.reserve(nSteps / recordEvery + 1);
    path.states.reserve(nSteps / recordEvery + 1);
    path.times.push_back(0.0);
    path.states.push_back(state0);

    std::vector<double> dW(model.channels);
    std::vector<double> fbuf(model.dim), gbuf(model.dim * model.channels);
    for (std::size_t n = 0; n < nSteps; ++n) {
        for (auto& w : dW) w = stream.wiener(dt);
        detail::em_step(model, state0, dW, fbuf, gbuf, dt);
        if ((n + 1) % recordEvery == 0 || n + 1 == nSteps) {
            detail::check_finite(state0, n + 1);
            if (path.times.back() != (n + 1) * dt) {
                path.times.push_back((n + 1) * dt);
                path.states.push_back(state0);
            }
        }
    }
    return path;
}

// Integrate two models against the SAME Wiener increments, used for pathwise
// comparisons of different representations of one physical model. Channel counts
// must match; each step draws channels increments shared by both.
template <class ModelA, class ModelB>
std::pair<TrajectoryPath, TrajectoryPath> run_paired_trajectories(
    const ModelA& modelA, const ModelB& modelB,
    std::vector<double> stateA, std::vector<double> stateB,
    double dt, std::size_t nSteps, std::size_t recordEvery, NoiseStream& stream) {
    if (modelA.channels != modelB.channels)
        throw std::invalid_argument("run_paired_trajectories: channel counts differ");
    if (recordEvery == 0) recordEvery = 1;

    TrajectoryPath pa, pb;
    pa.times.push_back(0.0); pa.states.push_back(stateA);
    pb.times.push_back(0.0); pb.states.push_back(stateB);

    std::vector<double> dW(modelA.channels);
    std::vector<double> fa(modelA.dim), ga(modelA.dim * modelA.channels);
    std::vector<double> fb(modelB.dim), gb(modelB.dim * modelB.channels);
    for (std::size_t n = 0; n < nSteps; ++n) {
        for (auto& w : dW) w = stream.wiener(dt);
        detail::em_step(modelA, stateA, dW, fa, ga, dt);
        detail::em_step(modelB, stateB, dW, fb, gb, dt);
        if ((n + 1) % recordEvery == 0 || n + 1 == nSteps) {
            detail::check_finite(stateA, n + 1);
            detail::check_finite(stateB, n + 1);
            if (pa.times.back() != (n + 1) * dt) {
                pa.times.push_back((n + 1) * dt); pa.states.push_back(stateA);
                pb.times.push_back((n + 1) * dt); pb.states.push_back(stateB);
            }
        }
    }
    return {std::move(pa), std::move(pb)};
}

// Deterministic pairwise sum: fixed reduction tree independent of traversal
// order, so ensemble averages are bit-identical regardless of scheduling.
inline double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

inline double pairwise_sum(const std::vector<double>& v) {
    return pairwise_sum(v.data(), v.size());
}

} // namespace backaction
