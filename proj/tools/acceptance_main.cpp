// Acceptance gate: one pass/fail line per criterion, exit 0 only if all hold.
//
// Every run uses a fixed seed, so each line is reproducible bit for bit on a
// given platform. Rates are quoted in units of kappa, times in 1/kappa.

#include "backaction/analysis.hpp"
#include "backaction/fokker_planck.hpp"
#include "backaction/io.hpp"
#include "backaction/protocols.hpp"
#include "backaction/sme.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

namespace ba = backaction;
namespace fs = std::filesystem;

namespace {

constexpr double pi_v = 3.14159265358979323846;
constexpr std::uint64_t seed = 42;

int passed = 0, total = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    ++total;
    if (ok) ++passed;
    std::printf("[%d/8] %s  %s: %s\n", total, ok ? "PASS" : "FAIL", name.c_str(),
                detail.c_str());
    std::fflush(stdout);
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::vector<double> logspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    const double step = (std::log(hi) - std::log(lo)) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(std::log(lo) + step * static_cast<double>(i));
    return out;
}

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const auto idx = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(v.size() - 1)));
    return v[idx];
}

double cfl_dt(const ba::Fp1DModel& m, double safety) {
    const double h = m.grid.h();
    double maxD = 0.0, maxV = 0.0;
    for (std::size_t i = 0; i < m.grid.n; ++i) {
        maxD = std::max(maxD, m.diff[i]);
        maxV = std::max(maxV, std::abs(m.drift[i]));
    }
    return safety / (maxD / (h * h) + maxV / h);
}

// 1. Decay rate of the mean error probability from the antipode, two routes:
//    windowed Monte Carlo fit (1.23 +- 5%) and grid-operator eigenvalue
//    (1.23 +- 2%). The fit window is pinned by snr >= 6 and a 30% tail.
void criterion_mean_decay_rate() {
    ba::ControlParams cp;
    cp.kappa = 1.0;
    cp.kind = ba::ProtocolKind::DiffusionGradient;
    ba::EnsembleOptions opt;
    opt.nTraj = 400000;
    opt.seed = seed;
    opt.recordEvery = 20;
    const ba::EnsembleSeries s =
        ba::mean_error_ensemble(cp, ba::NoiseParams{}, pi_v, 1.0, 1e-3, 12000, opt);
    const ba::RateFit fit = ba::fit_asymptotic_rate(s, 0.30, 6.0);

    const double lambda1 =
        ba::fp_decay_eigenvalue(ba::make_angle_diffusion_model(1.0, 4096));

    const bool okMc = fit.valid && fit.rate >= 1.23 * 0.95 && fit.rate <= 1.23 * 1.05;
    const bool okFp = lambda1 >= 1.23 * 0.98 && lambda1 <= 1.23 * 1.02;
    report(okMc && okFp, "mean-error decay rate",
           "Monte Carlo " + num(fit.rate) + " +- " + num(fit.rateStderr) +
           " in 1.23 +- 5% [" + num(1.23 * 0.95) + ", " + num(1.23 * 1.05) +
           "], grid eigenvalue " + num(lambda1) + " in 1.23 +- 2% [" +
           num(1.23 * 0.98) + ", " + num(1.23 * 1.02) + "]");
}

// 2. Crossing rate of the mean error curve through deep targets, from the
//    log-chart grid model (1.05 +- 5%).
void criterion_deep_crossing_rate() {
    const ba::Fp1DModel m = ba::make_log_chart_model(1.0, -32.0, 1536);
    const double dt = cfl_dt(m, 0.45);
    const auto nSteps = static_cast<std::size_t>(std::ceil(26.0 / dt));
    const auto rec = std::max<std::size_t>(1, nSteps / 4096);
    const ba::EnsembleSeries s = ba::fp_observable_series(
        m, ba::delta_density(m.grid, std::log(pi_v / 2.0)), dt, nSteps, rec,
        [](double y) { return (1.0 - std::cos(std::exp(y))) / 2.0; });

    std::vector<double> levels = logspace(1e-12, 1e-10, 9);
    std::reverse(levels.begin(), levels.end());
    const std::vector<double> times = ba::crossing_times(s.times, s.mean, levels);
    std::vector<double> lv, tc;
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (!std::isnan(times[i])) { lv.push_back(levels[i]); tc.push_back(times[i]); }
    ba::RateFit fit;
    if (lv.size() >= 3) fit = ba::fit_crossing_rate(lv, tc);

    const bool ok = fit.valid && fit.rate >= 1.05 * 0.95 && fit.rate <= 1.05 * 1.05;
    report(ok, "deep-threshold crossing rate",
           num(fit.rate) + " over targets 1e-12..1e-10, in 1.05 +- 5% [" +
           num(1.05 * 0.95) + ", " + num(1.05 * 1.05) + "]");
}

// 3. Exponential purification law at frozen measurement strength: ensemble
//    impurity tracks Delta0 * exp(-8kt) within 1% over t <= 0.2/k.
void criterion_purification_law() {
    const double k = 1.0, dt = 1e-5, delta0 = 1e-2;
    const std::size_t nSteps = 20000, rec = 400, nTraj = 16;

    ba::ControlParams cp;
    cp.kappa = k;
    cp.kind = ba::ProtocolKind::DiffusionGradient;
    cp.fixedK = k;
    const ba::BlochVector b0{0.0, 0.0, 1.0 - delta0};

    std::vector<double> meanDelta(nSteps / rec + 1, 0.0);
    std::vector<double> times;
    for (std::size_t j = 0; j < nTraj; ++j) {
        ba::NoiseStream ns(seed, 100 + j, ba::IncrementMode::TwoPoint);
        const ba::SmeRunResult run =
            ba::run_controlled_sme(cp, ba::NoiseParams{}, b0, dt, nSteps, rec, ns);
        if (j == 0) times = run.times;
        for (std::size_t i = 0; i < run.bloch.size(); ++i)
            meanDelta[i] += (1.0 - run.bloch[i].norm()) / static_cast<double>(nTraj);
    }
    double worst = 0.0;
    for (std::size_t i = 1; i < times.size(); ++i) {
        const double ref = delta0 * std::exp(-8.0 * k * times[i]);
        worst = std::max(worst, std::abs(meanDelta[i] / ref - 1.0));
    }
    report(worst < 0.01, "frozen-k purification law",
           "max relative deviation from Delta0*exp(-8kt) over 16 runs: " + num(worst) +
           " (bound 0.0100)");
}

// 4. Pathwise agreement between the reduced chart and the density-matrix
//    integration under shared noise: the sup-gap in the angle scales like
//    sqrt(dt) (log-log slope within [0.4, 1.1]).
void criterion_pathwise_refinement() {
    ba::ControlParams cp;
    cp.kappa = 1.0;
    cp.kind = ba::ProtocolKind::DiffusionGradient;
    ba::NoiseParams np;
    np.gamma = 0.01;
    np.betaX = 0.01;

    // the sup-gap is heavy-tailed across noise streams (a single close
    // encounter with the target decorrelates the pair), so average the LOG of
    // the gap: that is the statistic whose slope the bound constrains
    const double dts[3] = {1e-3, 1e-4, 1e-5};
    double logDt[3], logGap[3];
    for (int i = 0; i < 3; ++i) {
        const auto nSteps = static_cast<std::size_t>(std::llround(1.0 / dts[i]));
        const std::size_t rec = nSteps / 1000;
        double sum = 0.0;
        for (std::uint64_t stream = 11; stream < 17; ++stream)
            sum += std::log(ba::reduced_vs_sme_max_gap(cp, np, 0.6, 0.98, dts[i],
                                                       nSteps, rec, seed, stream));
        logDt[i] = std::log(dts[i]);
        logGap[i] = sum / 6.0;
    }
    const double mx = (logDt[0] + logDt[1] + logDt[2]) / 3.0;
    const double my = (logGap[0] + logGap[1] + logGap[2]) / 3.0;
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < 3; ++i) {
        sxx += (logDt[i] - mx) * (logDt[i] - mx);
        sxy += (logDt[i] - mx) * (logGap[i] - my);
    }
    const double slope = sxy / sxx;
    report(slope >= 0.4 && slope <= 1.1, "shared-noise refinement order",
           "gap slope vs dt over {1e-3,1e-4,1e-5} is " + num(slope) +
           ", in [0.4000, 1.1000]; gaps " + num(std::exp(logGap[0])) + "/" +
           num(std::exp(logGap[1])) + "/" + num(std::exp(logGap[2])));
}

struct NoisePoint {
    double gamma, dg, par, perpBest, perpK;
};

// Shared sweep for criteria 5 and 6: three noise levels, three protocols.
std::vector<NoisePoint> noise_sweep() {
    const double mu = 1.0, alphaMax = pi_v * pi_v;
    const std::vector<double> kGrid = logspace(1e-2, pi_v * pi_v, 16);
    const double dt = 5e-4;
    const std::size_t nSteps = 60000, burnSteps = 20000;

    ba::EnsembleOptions opt;
    opt.nTraj = 2000;
    opt.seed = seed;

    std::vector<NoisePoint> out;
    for (double g : {0.005, 0.05, 0.5}) {
        ba::NoiseParams np;
        np.gamma = g;
        np.betaX = np.betaY = np.betaZ = g;

        ba::ControlParams dg;
        dg.kappa = 1.0;
        dg.kind = ba::ProtocolKind::DiffusionGradient;
        dg.mu = mu;
        const ba::SteadyStateRun rDg =
            ba::steady_state_ensemble(dg, np, pi_v / 2.0, 1.0, dt, nSteps, burnSteps, opt, 8);

        ba::ControlParams par;
        par.kappa = 1.0;
        par.kind = ba::ProtocolKind::HamiltonianParallel;
        par.mu = mu;
        par.alphaMax = alphaMax;
        const ba::SteadyStateRun rPar =
            ba::steady_state_ensemble(par, np, pi_v / 2.0, 1.0, dt, nSteps, burnSteps, opt, 8);

        ba::ControlParams perp;
        perp.kappa = 1.0;
        perp.kind = ba::ProtocolKind::HamiltonianPerp;
        perp.alphaMax = alphaMax;
        const ba::SweepResult sw =
            ba::sweep_optimal_k(perp, np, kGrid, pi_v / 2.0, 1.0, dt, nSteps, burnSteps, opt);

        out.push_back({g, rDg.value, rPar.value, sw.bestValue, sw.bestK});
    }
    return out;
}

// 5. Steady-state error under the adaptive protocol rises strictly with the
//    noise rate and stays below 0.05 in the good-control regime.
void criterion_steady_state_shape(const std::vector<NoisePoint>& pts) {
    bool increasing = true;
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (!(pts[i].dg > pts[i - 1].dg)) increasing = false;
    const bool okLow = pts.front().dg < 0.05;
    report(increasing && okLow, "steady-state error vs noise",
           "Pe_ss " + num(pts[0].dg) + " / " + num(pts[1].dg) + " / " + num(pts[2].dg) +
           " at gamma 0.005/0.05/0.5 (strictly increasing: " +
           (increasing ? "yes" : "no") + ", first < 0.0500)");
}

// 6. The three protocols land within a factor of three of one another at
//    every noise level.
void criterion_protocol_similarity(const std::vector<NoisePoint>& pts) {
    bool ok = true;
    double worst = 0.0;
    for (const auto& p : pts) {
        const double hi = std::max({p.dg, p.par, p.perpBest});
        const double lo = std::min({p.dg, p.par, p.perpBest});
        worst = std::max(worst, hi / lo);
        if (hi / lo >= 3.0) ok = false;
    }
    report(ok, "protocol similarity",
           "worst max/min ratio across three protocols and three noise levels: " +
           num(worst) + " (bound 3.0000)");
}

// 7. The command-line verification suite runs clean end to end.
void criterion_verification_suite(const char* argv0) {
    fs::path cli;
    if (const char* env = std::getenv("BACKACTION_CLI"))
        cli = env;
    else
        cli = fs::path(argv0).parent_path() / "backaction";
    const std::string cmd = "\"" + cli.string() +
                            "\" verify --out acceptance_verify_out > acceptance_verify_out.log 2>&1";
    const int rc = std::system(cmd.c_str());
    report(rc == 0, "verification suite",
           std::string("'backaction verify' exit status ") +
           (rc == 0 ? "0 (all checks green)" : std::to_string(rc) +
            " (see acceptance_verify_out.log)"));
}

// 8. N-level control: the two-level specialization reproduces the qubit
//    ensemble within Monte Carlo error, and three-level control converges.
void criterion_nlevel(int& subPass) {
    // qubit ensemble, density-matrix protocol runner
    const double delta0 = 0.8, a0 = 0.9, dt = 1e-3;
    const std::size_t nSteps = 2000, nTraj = 256;
    ba::ControlParams cp;
    cp.kappa = 1.0;
    cp.kind = ba::ProtocolKind::DiffusionGradient;
    cp.mu = 1.0;

    double sumQ = 0.0, sumQ2 = 0.0;
    for (std::size_t j = 0; j < nTraj; ++j) {
        ba::NoiseStream ns(seed, 3000 + j);
        const ba::SmeRunResult run = ba::run_controlled_sme(
            cp, ba::NoiseParams{}, ba::bloch_from_reduced(delta0, a0), dt, nSteps,
            nSteps, ns);
        const double pe = (1.0 - run.bloch.back().z) / 2.0;
        sumQ += pe;
        sumQ2 += pe * pe;
    }
    const double meanQ = sumQ / static_cast<double>(nTraj);
    const double varQ = (sumQ2 - sumQ * sumQ / static_cast<double>(nTraj)) /
                        static_cast<double>(nTraj - 1);

    // the same protocol through the N-level runner at N=2
    ba::VectorXc chi = ba::VectorXc::Zero(2);
    chi(0) = 1.0;
    ba::MatrixXc rho0(2, 2);
    const double ax = a0 * std::sin(delta0), az = a0 * std::cos(delta0);
    rho0 << (1.0 + az) / 2.0, ax / 2.0, ax / 2.0, (1.0 - az) / 2.0;

    double sumN = 0.0, sumN2 = 0.0;
    for (std::size_t j = 0; j < nTraj; ++j) {
        ba::NoiseStream ns(seed, 7000 + j);
        const ba::NLevelRunResult run =
            ba::run_nlevel_control(chi, rho0, 1.0, 1.0, dt, nSteps, nSteps, ns);
        sumN += run.pe.back();
        sumN2 += run.pe.back() * run.pe.back();
    }
    const double meanN = sumN / static_cast<double>(nTraj);
    const double varN = (sumN2 - sumN * sumN / static_cast<double>(nTraj)) /
                        static_cast<double>(nTraj - 1);

    const double gap = std::abs(meanQ - meanN);
    const double sem = std::sqrt((varQ + varN) / static_cast<double>(nTraj));
    const bool okPair = gap <= 4.0 * sem;

    // three-level convergence, median over the ensemble
    ba::VectorXc chi3 = ba::VectorXc::Zero(3);
    chi3(0) = 1.0;
    const ba::MatrixXc rho3 = ba::MatrixXc::Identity(3, 3) / 3.0;
    ba::SmeOptions opt;
    opt.projectPositive = true;
    std::vector<double> finals;
    for (std::size_t j = 0; j < 33; ++j) {
        ba::NoiseStream ns(seed, j, ba::IncrementMode::TwoPoint);
        const ba::NLevelRunResult run =
            ba::run_nlevel_control(chi3, rho3, 1.0, 1.0, 1e-4, 100000, 100000, ns, opt);
        finals.push_back(run.pe.back());
    }
    const double med = percentile(finals, 0.5);
    const bool okThree = med < 1e-2;

    subPass = (okPair ? 1 : 0) + (okThree ? 1 : 0);
    report(okPair && okThree, "N-level control",
           "N=2 vs qubit final Pe " + num(meanN) + " vs " + num(meanQ) + " (gap " +
           num(gap) + " <= 4*sem " + num(4.0 * sem) + "), N=3 median final Pe " +
           ba::format_full(med) + " < 1e-2");
}

} // namespace

int main(int, char** argv) {
    std::printf("acceptance: eight criteria, fixed seed %llu\n",
                static_cast<unsigned long long>(seed));
    criterion_mean_decay_rate();
    criterion_deep_crossing_rate();
    criterion_purification_law();
    criterion_pathwise_refinement();
    const std::vector<NoisePoint> pts = noise_sweep();
    criterion_steady_state_shape(pts);
    criterion_protocol_similarity(pts);
    criterion_verification_suite(argv[0]);
    int sub = 0;
    criterion_nlevel(sub);
    std::printf("acceptance: %d/%d criteria passed\n", passed, total);
    return passed == total ? 0 : 1;
}
