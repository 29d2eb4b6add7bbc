#pragma once

// Ensemble statistics and curve fits. The ensemble reducer is deterministic for
// any thread count: trajectories are grouped into fixed blocks of 1024, each
// block is summed sequentially in trajectory order, and the block partials are
// combined along a fixed pairwise tree.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <thread>
#include <vector>

namespace backaction {

inline constexpr std::size_t ensemble_block_size = 1024;

struct EnsembleSeries {
    std::vector<double> times;
    std::vector<double> mean;
    std::vector<double> var;   // population variance across trajectories
    std::size_t count = 0;

    // standard error of the mean; 0 for deterministic (count<=1) series
    double sem(std::size_t i) const {
        return count > 1 ? std::sqrt(var[i] / static_cast<double>(count)) : 0.0;
    }
};

namespace detail {

struct BlockPartial {
    std::vector<double> sum, sumSq;
};

inline void combine(BlockPartial& a, const BlockPartial& b) {
    for (std::size_t i = 0; i < a.sum.size(); ++i) {
        a.sum[i] += b.sum[i];
        a.sumSq[i] += b.sumSq[i];
    }
}

// fixed pairwise tree over [lo, hi)
inline BlockPartial pairwise_combine(std::vector<BlockPartial>& blocks,
                                     std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return std::move(blocks[lo]);
    const std::size_t mid = lo + (hi - lo) / 2;
    BlockPartial left = pairwise_combine(blocks, lo, mid);
    BlockPartial right = pairwise_combine(blocks, mid, hi);
    combine(left, right);
    return left;
}

} // namespace detail

// Generic ensemble driver. fn(trajIndex, out) fills the observable at the
// recorded times for one trajectory; it must derive all randomness from
// trajIndex so evaluation order cannot matter.
template <class TrajFn>
EnsembleSeries run_ensemble(std::size_t nTraj, const std::vector<double>& times,
                            int threads, TrajFn&& fn) {
    if (nTraj == 0) throw std::invalid_argument("run_ensemble: empty ensemble");
    const std::size_t nT = times.size();
    const std::size_t nBlocks = (nTraj + ensemble_block_size - 1) / ensemble_block_size;
    std::vector<detail::BlockPartial> blocks(nBlocks);

    auto worker = [&](std::size_t firstBlock, std::size_t strideBlocks) {
        std::vector<double> obs(nT);
        for (std::size_t b = firstBlock; b < nBlocks; b += strideBlocks) {
            auto& part = blocks[b];
            part.sum.assign(nT, 0.0);
            part.sumSq.assign(nT, 0.0);
            const std::size_t jEnd = std::min(nTraj, (b + 1) * ensemble_block_size);
            for (std::size_t j = b * ensemble_block_size; j < jEnd; ++j) {
                fn(j, obs);
                for (std::size_t i = 0; i < nT; ++i) {
                    part.sum[i] += obs[i];
                    part.sumSq[i] += obs[i] * obs[i];
                }
            }
        }
    };

    const int nw = std::max(1, std::min<int>(threads, static_cast<int>(nBlocks)));
    if (nw == 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nw);
        for (int w = 0; w < nw; ++w)
            pool.emplace_back(worker, static_cast<std::size_t>(w), static_cast<std::size_t>(nw));
        for (auto& t : pool) t.join();
    }

    detail::BlockPartial total = detail::pairwise_combine(blocks, 0, nBlocks);
    EnsembleSeries s;
    s.times = times;
    s.count = nTraj;
    s.mean.resize(nT);
    s.var.resize(nT);
    const double n = static_cast<double>(nTraj);
    for (std::size_t i = 0; i < nT; ++i) {
        s.mean[i] = total.sum[i] / n;
        s.var[i] = std::max(0.0, total.sumSq[i] / n - s.mean[i] * s.mean[i]);
    }
    return s;
}

struct RateFit {
    double rate = 0.0;        // decay rate: mean ~ exp(-rate * t) over the window
    double rateStderr = 0.0;
    double tStart = 0.0, tEnd = 0.0;
    std::size_t points = 0;
    bool valid = false;
};

// Fit the asymptotic exponential decay of a positive ensemble mean. The window
// is the trailing tailFraction of the usable span, where usable ends at the last
// point whose signal-to-noise mean/sem still reaches snrMin (beyond that the log
// of the mean is dominated by sampling noise and biases the slope). Weighted
// least squares on ln(mean) with weights (mean/sem)^2; deterministic series
// (sem = 0) get unit weights.
inline RateFit fit_asymptotic_rate(const EnsembleSeries& s,
                                   double tailFraction = 0.3,
                                   double snrMin = 10.0) {
    RateFit fit;
    const std::size_t n = s.times.size();
    if (n < 3) return fit;

    std::size_t iEnd = 0;   // one-past-last usable index; 0 = none found
    for (std::size_t i = n; i-- > 0;) {
        if (s.mean[i] <= 0.0) continue;
        const double sem = s.sem(i);
        if (sem == 0.0 || s.mean[i] / sem >= snrMin) { iEnd = i + 1; break; }
    }
    if (iEnd < 3) return fit;

    const double t0 = s.times.front();
    const double tEnd = s.times[iEnd - 1];
    const double tStart = t0 + (1.0 - tailFraction) * (tEnd - t0);

    double sw = 0, swt = 0, swy = 0, swtt = 0, swty = 0;
    std::size_t pts = 0;
    for (std::size_t i = 0; i < iEnd; ++i) {
        if (s.times[i] < tStart || s.mean[i] <= 0.0) continue;
        const double sem = s.sem(i);
        double w = 1.0;
        if (sem > 0.0) {
            const double snr = s.mean[i] / sem;
            if (snr < snrMin) continue;
            w = snr * snr;
        }
        const double t = s.times[i], y = std::log(s.mean[i]);
        sw += w; swt += w * t; swy += w * y; swtt += w * t * t; swty += w * t * y;
        ++pts;
    }
    if (pts < 3) return fit;
    const double det = sw * swtt - swt * swt;
    if (det <= 0.0) return fit;
    const double slope = (sw * swty - swt * swy) / det;
    fit.rate = -slope;
    fit.rateStderr = std::sqrt(sw / det);
    fit.tStart = tStart;
    fit.tEnd = tEnd;
    fit.points = pts;
    fit.valid = true;
    return fit;
}

// First time a positive decaying curve reaches each level, log-interpolated
// between samples; NaN when never reached.
inline std::vector<double> crossing_times(const std::vector<double>& times,
                                          const std::vector<double>& values,
                                          const std::vector<double>& levels) {
    std::vector<double> out(levels.size(),
                            std::numeric_limits<double>::quiet_NaN());
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const double lev = levels[l];
        if (!(lev > 0.0)) continue;
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (values[i] > lev) continue;
            if (i == 0 || values[i] <= 0.0 || values[i - 1] <= lev) {
                out[l] = times[i];
            } else {
                const double la = std::log(values[i - 1]), lb = std::log(values[i]);
                const double f = (la - std::log(lev)) / (la - lb);
                out[l] = times[i - 1] + f * (times[i] - times[i - 1]);
            }
            break;
        }
    }
    return out;
}

// Rate of the level-vs-crossing-time curve: level ~ exp(-rate * T). Plain least
// squares of ln(level) on T; NaN crossing times are skipped.
inline RateFit fit_crossing_rate(const std::vector<double>& levels,
                                 const std::vector<double>& times) {
    RateFit fit;
    double sw = 0, swt = 0, swy = 0, swtt = 0, swty = 0;
    std::size_t pts = 0;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (std::isnan(times[i]) || !(levels[i] > 0.0)) continue;
        const double t = times[i], y = std::log(levels[i]);
        sw += 1; swt += t; swy += y; swtt += t * t; swty += t * y;
        ++pts;
    }
    if (pts < 3) return fit;
    const double det = sw * swtt - swt * swt;
    if (det <= 0.0) return fit;
    fit.rate = -(sw * swty - swt * swy) / det;
    fit.rateStderr = std::sqrt(sw / det);
    fit.points = pts;
    fit.valid = true;
    return fit;
}

struct CensoredStats {
    double mean = 0.0;
    std::size_t observed = 0;
    std::size_t censored = 0;
};

// Mean of first-passage samples; NaN entries count as censored (never reached
// within the horizon) and are excluded from the mean.
inline CensoredStats censored_mean(const std::vector<double>& samples) {
    CensoredStats st;
    double sum = 0.0;
    for (double v : samples) {
        if (std::isnan(v)) { ++st.censored; continue; }
        sum += v;
        ++st.observed;
    }
    if (st.observed > 0) st.mean = sum / static_cast<double>(st.observed);
    return st;
}

struct SteadyStateEstimate {
    double value = 0.0;       // time average over the post-burn window
    double sem = 0.0;         // propagated ensemble error, averaged
    double firstHalf = 0.0, secondHalf = 0.0;
    double relativeDrift = 0.0;  // (secondHalf-firstHalf)/value; small when stationary
    std::size_t samples = 0;
};

// Time-average the ensemble mean after discarding the leading burnFraction.
// The two half-window averages expose residual transients.
inline SteadyStateEstimate steady_state_error(const EnsembleSeries& s,
                                              double burnFraction = 1.0 / 3.0) {
    SteadyStateEstimate est;
    const std::size_t n = s.times.size();
    if (n == 0) return est;
    const double tBurn = s.times.front() + burnFraction * (s.times.back() - s.times.front());
    std::size_t i0 = 0;
    while (i0 < n && s.times[i0] < tBurn) ++i0;
    if (i0 >= n) i0 = n - 1;
    const std::size_t m = n - i0, half = m / 2;
    double a = 0, b = 0, se = 0;
    for (std::size_t i = i0; i < n; ++i) {
        (i < i0 + half ? a : b) += s.mean[i];
        se += s.sem(i);
    }
    est.samples = m;
    est.value = (a + b) / static_cast<double>(m);
    est.sem = se / static_cast<double>(m);
    est.firstHalf = half > 0 ? a / static_cast<double>(half) : est.value;
    est.secondHalf = m > half ? b / static_cast<double>(m - half) : est.value;
    est.relativeDrift = est.value != 0.0
        ? (est.secondHalf - est.firstHalf) / est.value : 0.0;
    return est;
}

struct SweepPoint {
    double k = 0.0;
    double value = 0.0;
    double sem = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    std::size_t bestIndex = 0;
    double bestK = 0.0;
    double bestValue = 0.0;
};

inline SweepResult pick_optimal(std::vector<SweepPoint> points) {
    if (points.empty()) throw std::invalid_argument("pick_optimal: empty sweep");
    SweepResult r;
    r.points = std::move(points);
    for (std::size_t i = 1; i < r.points.size(); ++i)
        if (r.points[i].value < r.points[r.bestIndex].value) r.bestIndex = i;
    r.bestK = r.points[r.bestIndex].k;
    r.bestValue = r.points[r.bestIndex].value;
    return r;
}

// Total variation distance between two histograms given as probability masses
// over the same cells.
inline double total_variation(const std::vector<double>& p,
                              const std::vector<double>& q) {
    if (p.size() != q.size())
        throw std::invalid_argument("total_variation: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

} // namespace backaction
