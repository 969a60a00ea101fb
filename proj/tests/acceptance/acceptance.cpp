// Acceptance harness: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// Usage: acceptance [--work DIR] [--cli PATH] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "CLI11.hpp"
#include "gnwd/alignment.hpp"
#include "gnwd/metrics.hpp"
#include "gnwd/nbody.hpp"
#include "gnwd/oracle.hpp"
#include "gnwd/pipeline.hpp"
#include "support/nbody_oracle.hpp"

using namespace gnwd;
namespace fs = std::filesystem;

namespace {

// Tolerances, pinned.
constexpr double kAlphaBarTol = 1e-12;
constexpr double kNoisingSigmas = 3.0;
constexpr double kCrpsTol = 1e-9;
constexpr double kMetricSeconds = 10.0;
constexpr double kGradRelTol = 1e-4;
constexpr int kGradProbes = 12;
constexpr double kSamplerSeconds = 120.0;
constexpr double kDriftTol = 1e-3;
constexpr double kDriftHalfTol = 2.5e-4;
constexpr double kRk4Tol = 1e-2;
constexpr double kEnergyReduction = 0.20;
constexpr double kPipelineHours = 4.0;
constexpr double kOrderingP = 0.01;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-10}); }

// ---------------------------------------------------------------------------
// 1. CSI / BIAS against pixel enumeration
// ---------------------------------------------------------------------------

Outcome metric_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    std::size_t mismatches = 0, checked = 0;
    for (int g = 0; g < 1000; ++g) {
        Tensor p({1, 16, 16, 1}), o({1, 16, 16, 1});
        for (auto& v : p.span()) v = static_cast<float>(rng.uniform());
        for (auto& v : o.span()) v = static_cast<float>(rng.uniform());
        for (double thr : kDefaultThresholds) {
            std::uint64_t h = 0, m = 0, f = 0;
            for (std::size_t i = 0; i < 16 * 16; ++i) {
                const bool pe = p[i] * 255.0 >= thr, oe = o[i] * 255.0 >= thr;
                h += pe && oe;
                m += oe && !pe;
                f += pe && !oe;
            }
            const Contingency c = contingency(p, o, thr);
            // exact rational comparison: CSI = h / (h + m + f), BIAS = (h + f) / (h + m)
            const bool csi_ok = (h + m + f == 0) ? csi(c) == 0.0 : csi(c) == static_cast<double>(h) / (h + m + f);
            const auto b = bias(c);
            const bool bias_ok = (h + m == 0) ? !b : (b && *b == static_cast<double>(h + f) / (h + m));
            mismatches += !(c.hits == h && c.misses == m && c.false_alarms == f && csi_ok && bias_ok);
            ++checked;
        }
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < kMetricSeconds,
            fmt::format("{} grid/threshold pairs, {} mismatches, {:.2f} s (limit {} s)", checked, mismatches, secs,
                        kMetricSeconds)};
}

// ---------------------------------------------------------------------------
// 2. CRPS with one member equals MAE
// ---------------------------------------------------------------------------

Outcome crps_collapse() {
    Rng rng(102);
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
        Tensor x({10, 16, 16, 1}), y({10, 16, 16, 1});
        for (auto& v : x.span()) v = static_cast<float>(rng.uniform());
        for (auto& v : y.span()) v = static_cast<float>(rng.uniform());
        const std::vector<Tensor> one = {x};
        worst = std::max(worst, std::abs(crps_ensemble(one, y) - mae(x, y)));
    }
    return {worst <= kCrpsTol, fmt::format("100 sequences, max |CRPS - MAE| = {:.3g} (tol {})", worst, kCrpsTol)};
}

// ---------------------------------------------------------------------------
// 3. Schedule recursion and forward-process moments
// ---------------------------------------------------------------------------

Outcome schedule_consistency() {
    const int steps = 1000;
    double worst_abar = 0.0;
    for (ScheduleKind k : {ScheduleKind::linear, ScheduleKind::scaled_linear, ScheduleKind::cosine}) {
        const NoiseSchedule s = make_schedule(steps, k);
        long double prod = 1.0L;
        for (int t = 1; t <= steps; ++t) {
            prod *= 1.0L - static_cast<long double>(s.beta(t));
            worst_abar = std::max(worst_abar, static_cast<double>(std::abs(prod - s.alpha_bar(t))));
        }
    }

    // iterate q(z_t | z_{t-1}) from a fixed z_0 and compare with q(z_t | z_0)
    const NoiseSchedule s = make_schedule(steps, ScheduleKind::linear);
    const double z0 = 1.5;
    const std::size_t draws = 100000;
    const std::vector<int> probe = {1, steps / 2, steps};
    std::vector<double> sum(probe.size(), 0.0), sum2(probe.size(), 0.0), sum4(probe.size(), 0.0);
    std::vector<double> zs(draws, z0);
    Rng rng(103);
    std::size_t next = 0;
    std::vector<std::vector<double>> snap(probe.size());
    for (int t = 1; t <= steps; ++t) {
        const double a = std::sqrt(1.0 - s.beta(t)), b = std::sqrt(s.beta(t));
        for (double& z : zs) z = a * z + b * rng.normal();
        if (next < probe.size() && t == probe[next]) snap[next++] = zs;
    }
    double worst_sigmas = 0.0;
    std::string per;
    for (std::size_t k = 0; k < probe.size(); ++k) {
        const int t = probe[k];
        const double m_true = std::sqrt(s.alpha_bar(t)) * z0, v_true = 1.0 - s.alpha_bar(t);
        double m = 0.0;
        for (double z : snap[k]) m += z;
        m /= draws;
        double v = 0.0, m4 = 0.0;
        for (double z : snap[k]) {
            v += (z - m) * (z - m);
            m4 += std::pow(z - m, 4);
        }
        v /= draws - 1;
        m4 /= draws;
        const double se_m = std::sqrt(v / draws);
        const double se_v = std::sqrt((m4 - v * v) / draws);
        const double zm = std::abs(m - m_true) / se_m, zv = std::abs(v - v_true) / se_v;
        worst_sigmas = std::max({worst_sigmas, zm, zv});
        per += fmt::format(" t={}: mean {:.2f} SE, var {:.2f} SE;", t, zm, zv);
    }
    return {worst_abar <= kAlphaBarTol && worst_sigmas <= kNoisingSigmas,
            fmt::format("alpha_bar max error {:.3g} (tol {}); 1e5 draws{} max {:.2f} SE (tol {})", worst_abar,
                        kAlphaBarTol, per, worst_sigmas, kNoisingSigmas)};
}

// ---------------------------------------------------------------------------
// 4. Finite-difference gradient checks in 64-bit
// ---------------------------------------------------------------------------

// Values on a 2^-12 grid so that +-2^-10 perturbations along sign vectors are exact in float.
Tensor grid_tensor(const Shape& s, Rng& rng) {
    Tensor t(s);
    for (auto& v : t.span()) v = static_cast<float>(std::round(rng.normal() * 4096.0) / 4096.0);
    return t;
}

Tensor sign_tensor(const Shape& s, Rng& rng) {
    Tensor t(s);
    for (auto& v : t.span()) v = rng.uniform() < 0.5 ? -1.0f : 1.0f;
    return t;
}

Tensor offset(const Tensor& z, const Tensor& v, double h) {
    Tensor out = z;
    for (std::size_t i = 0; i < z.numel(); ++i) out[i] = static_cast<float>(z[i] + h * v[i]);
    return out;
}

template <class F>
double worst_param_error(std::vector<double>& params, const std::vector<double>& grad, F&& loss, Rng& rng) {
    double worst = 0.0;
    for (int p = 0; p < kGradProbes; ++p) {
        std::vector<double> v(params.size());
        for (auto& x : v) x = rng.normal();
        double an = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) an += grad[i] * v[i];
        const double h = 1e-5;
        const std::vector<double> base = params;
        for (std::size_t i = 0; i < v.size(); ++i) params[i] = base[i] + h * v[i];
        const double lp = loss();
        for (std::size_t i = 0; i < v.size(); ++i) params[i] = base[i] - h * v[i];
        const double lm = loss();
        params = base;
        worst = std::max(worst, rel_err(an, (lp - lm) / (2 * h)));
    }
    return worst;
}

Outcome gradient_integrity() {
    Rng rng(104);
    DenoiserSpec ds;
    ds.l_in = 3;
    ds.l_out = 3;
    ds.height = 4;
    ds.width = 4;
    ds.channels = 3;
    ds.base_width = 8;
    ds.time_dim = 8;
    Denoiser<double> den(ds);
    den.init(1);
    DiffusionBatch b;
    for (int i = 0; i < 4; ++i) {
        b.z_t.push_back(grid_tensor(ds.z_shape(), rng));
        b.z_cond.push_back(grid_tensor(ds.cond_shape(), rng));
        b.eps.push_back(grid_tensor(ds.z_shape(), rng));
        b.t.push_back(1 + static_cast<int>(rng.below(200)));
    }
    const LossAndGrads dl = den.loss_and_grads(b);
    const double e_den = worst_param_error(den.params(), dl.grads, [&] { return den.loss_and_grads(b).loss; }, rng);

    AlignmentSpec as;
    as.l_in = 3;
    as.l_out = 3;
    as.height = 4;
    as.width = 4;
    as.channels = 3;
    as.base_width = 6;
    as.time_dim = 8;
    as.heads = 2;
    as.hidden = 8;
    as.out_dim = 3;
    AlignmentNet<double> al(as);
    al.init(2);
    const Normalizer nz{4.0, 1.5};
    AlignmentBatch ab;
    for (int i = 0; i < 4; ++i) {
        ab.z_t.push_back(grid_tensor(as.z_shape(), rng));
        ab.z_cond.push_back(grid_tensor(ds.cond_shape(), rng));
        ab.t.push_back(static_cast<int>(rng.below(201)));
        ab.target.push_back({4 + rng.normal(), 4 + rng.normal(), 4 + rng.normal()});
    }
    const LossAndGrads agl = alignment_loss_and_grads(al, nz, ab);
    const double e_al =
        worst_param_error(al.params(), agl.grads, [&] { return alignment_loss_and_grads(al, nz, ab).loss; }, rng);

    // guidance gradient: g = -lambda grad_z ||U(z) - F0||
    const AlignmentEstimatorT<double> est(al, nz);
    const std::vector<double> f0 = {3.0, 5.0, 4.5};
    const double lambda = 2.0;
    double e_g = 0.0;
    for (int p = 0; p < kGradProbes; ++p) {
        const Tensor z = grid_tensor(as.z_shape(), rng), zc = grid_tensor(ds.cond_shape(), rng);
        const Tensor v = sign_tensor(z.shape(), rng);
        const int t = static_cast<int>(rng.below(200));
        const auto objective = [&](const Tensor& zz) {
            AlignmentNet<double>::Cache k;
            al.forward_raw(zz, t, zc, k);
            double s2 = 0.0;
            for (std::size_t j = 0; j < f0.size(); ++j) s2 += std::pow(nz.from_net(k.out[j]) - f0[j], 2);
            return std::sqrt(s2);
        };
        const double h = std::ldexp(1.0, -10);
        const double fd = (objective(offset(z, v, h)) - objective(offset(z, v, -h))) / (2 * h);
        const Tensor g = guidance_gradient(est, z, t, zc, f0, {lambda, 0.0});
        e_g = std::max(e_g, rel_err(dot(g.span(), v.span()), -lambda * fd));
    }
    const double worst = std::max({e_den, e_al, e_g});
    return {worst <= kGradRelTol,
            fmt::format("{} probes each, max rel error: denoiser params {:.2e}, alignment params {:.2e}, "
                        "guidance grad_z {:.2e} (tol {})",
                        kGradProbes, e_den, e_al, e_g, kGradRelTol)};
}

// ---------------------------------------------------------------------------
// 5-6. Gaussian oracle checks
// ---------------------------------------------------------------------------

Outcome gaussian_sampler() {
    const auto t0 = std::chrono::steady_clock::now();
    const NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
    const SamplerCheck c = run_sampler_check(GaussianTask{}, sched, 10000, 105);
    const double secs = seconds_since(t0);
    return {c.pass && secs < kSamplerSeconds,
            fmt::format("T=200, 1e4 chains, {:.1f} s (limit {} s); {}", secs, kSamplerSeconds, describe(c))};
}

Outcome guidance_efficacy() {
    const PipelineConfig cfg;  // probe_lambda comes from the config defaults
    const NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
    const GuidanceCheck c = run_guidance_check(GaussianTask{}, sched, 10000, 106, cfg.probe_lambda);
    return {c.pass, fmt::format("lambda {}; {}", cfg.probe_lambda, describe(c))};
}

// ---------------------------------------------------------------------------
// 7. Simulator energy drift and RK4 agreement
// ---------------------------------------------------------------------------

Outcome simulator_energy() {
    const SimConfig cfg;
    SimConfig half = cfg;
    half.substeps = cfg.substeps * 2;  // same 100 frames, half the integration step
    Rng rng(107);
    const int rollouts = 20;
    double worst = 0.0, worst_half = 0.0, worst_ratio = 1e300, worst_rk4 = 0.0;
    for (int r = 0; r < rollouts; ++r) {
        const BodyState init = random_state(cfg, rng);
        const auto drift = [&](const SimConfig& c) {
            const Trajectory t = rollout(init, c, 100);
            return std::abs(t.energies.back() - total_energy(init, c)) / std::abs(total_energy(init, c));
        };
        const double d1 = drift(cfg), d2 = drift(half);
        worst = std::max(worst, d1);
        worst_half = std::max(worst_half, d2);
        if (d2 > 0) worst_ratio = std::min(worst_ratio, d1 / d2);
        if (r < 3) {
            const Trajectory lf = rollout(init, cfg, 100);
            const auto ref = gnwd::testing::rk4_reference(init, cfg, 100, 100);
            for (std::size_t f = 0; f < 100; ++f) {
                for (std::size_t i = 0; i < init.size(); ++i) {
                    worst_rk4 = std::max(worst_rk4, std::hypot(lf.states[f].positions[i][0] - ref[f].positions[i][0],
                                                               lf.states[f].positions[i][1] - ref[f].positions[i][1]));
                }
            }
        }
    }
    return {worst <= kDriftTol && worst_half <= kDriftHalfTol && worst_rk4 <= kRk4Tol,
            fmt::format("{} rollouts of 100 steps at dt={}: max drift {:.2e} (tol {}), at dt/2 {:.2e} (tol {}), "
                        "min ratio {:.2f}; RK4 (dt/100) max position deviation {:.2e} (tol {})",
                        rollouts, cfg.dt, worst, kDriftTol, worst_half, kDriftHalfTol, worst_ratio, worst_rk4,
                        kRk4Tol)};
}

// ---------------------------------------------------------------------------
// 8-9. End-to-end runs
// ---------------------------------------------------------------------------

// 2000 sequences at 32x32; shared by criteria 8 and 9. Faster bodies than the
// simulator default so that motion (kinetic energy) is visible at this resolution.
const char* kToyConfig = R"(
[sim]
height = 32
width = 32
l_in = 10
l_out = 10
train_count = 2000
test_count = 50
sprite_factor = 2
speed_min = 2
speed_max = 6

[denoiser]
epochs = 60
base_width = 64
lr_schedule = cosine

[guidance]
align_width = 32
align_hidden = 128
align_clean_epochs = 60
align_epochs = 150
detector_epochs = 100
align_augment = true

[eval]
ensemble = 8

[run]
seed = 1
)";
constexpr double kEnergyLambda = 1.0;
constexpr double kIntensityLambda = 3.0;
constexpr std::size_t kIntensityContexts = 30;

struct ToyRun {
    PipelineConfig cfg;
    fs::path root, train, test, denoiser;
    TrainResult train_result;
    double seconds = 0.0;
};

ToyRun& toy_run(const fs::path& work) {
    static std::unique_ptr<ToyRun> run;
    if (run) return *run;
    run = std::make_unique<ToyRun>();
    const auto t0 = std::chrono::steady_clock::now();
    run->cfg = parse_config(kToyConfig);
    run->root = work / "toy";
    fs::remove_all(run->root);
    cmd_gen_nbody(run->cfg, run->root / "data");
    run->train = run->root / "data" / "train.gnwd.json";
    run->test = run->root / "data" / "test.gnwd.json";
    run->train_result = cmd_train(run->cfg, run->train, run->root / "train");
    run->denoiser = run->train_result.checkpoint;
    run->seconds = seconds_since(t0);
    return *run;
}

Outcome energy_end_to_end(const fs::path& work) {
    ToyRun& run = toy_run(work);
    const auto t0 = std::chrono::steady_clock::now();
    PipelineConfig cfg = run.cfg;
    const fs::path align = run.root / "align_energy";
    cmd_train_align(cfg, run.train, align);
    const fs::path detector = align / "detector.ckpt";
    const fs::path plain = cmd_sample(cfg, {run.denoiser, {}, run.test}, run.root / "sample_unguided");
    const auto rows_u = cmd_evaluate(cfg, plain, run.test, detector, run.root / "eval_unguided");
    cfg.lambda = kEnergyLambda;
    const fs::path guided = cmd_sample(cfg, {run.denoiser, align, run.test}, run.root / "sample_guided");
    const auto rows_g = cmd_evaluate(cfg, guided, run.test, detector, run.root / "eval_guided");
    const double hours = (run.seconds + seconds_since(t0)) / 3600.0;

    const auto& losses = run.train_result.epoch_loss;
    const bool converged = losses.size() >= 2 && losses.back() < 0.5 * losses.front();
    const double eu = *rows_u[0].e_mae, eg = *rows_g[0].e_mae;
    const double reduction = 1.0 - eg / eu;
    return {converged && reduction >= kEnergyReduction && hours <= kPipelineHours,
            fmt::format("denoiser loss {:.4f} -> {:.4f} over {} epochs; E.MAE unguided {:.4f}, guided (lambda {}) "
                        "{:.4f}, reduction {:.1f}% (need >= {:.0f}%); target E.MAE {:.4f}, persistence {:.4f}; "
                        "MSE unguided {:.4f}, guided {:.4f}; runtime {:.2f} h (limit {} h)",
                        losses.front(), losses.back(), losses.size(), eu, kEnergyLambda, eg, 100 * reduction,
                        100 * kEnergyReduction, *rows_u[2].e_mae, *rows_u[1].e_mae, rows_u[0].mse, rows_g[0].mse,
                        hours, kPipelineHours)};
}

Outcome intensity_ordering(const fs::path& work) {
    ToyRun& run = toy_run(work);
    PipelineConfig cfg = run.cfg;
    cfg.constraint = "mean_intensity";
    cfg.test_limit = kIntensityContexts;
    cfg.lambda = kIntensityLambda;
    const fs::path align = run.root / "align_intensity";
    cmd_train_align(cfg, run.train, align);
    std::map<int, ForecastSet> arms;
    for (int n : {2, -2}) {
        cfg.n_sigma = n;
        arms[n] = load_forecasts(cmd_sample(cfg, {run.denoiser, align, run.test}, run.root / fmt::format("sample_n{}", n)));
    }
    std::vector<double> diff;
    double up = 0.0, down = 0.0;
    for (std::size_t i = 0; i < kIntensityContexts; ++i) {
        const double a = mean_intensity(arms[2].members[i]), b = mean_intensity(arms[-2].members[i]);
        diff.push_back(a - b);
        up += a / kIntensityContexts;
        down += b / kIntensityContexts;
    }
    const double n = static_cast<double>(diff.size());
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
    double var = 0.0;
    for (double d : diff) var += (d - mean) * (d - mean);
    var /= n - 1;
    const double t = mean / std::sqrt(var / n);
    const boost::math::students_t dist(n - 1);
    const double p = boost::math::cdf(boost::math::complement(dist, t));  // one-sided: n=+2 brighter
    return {p < kOrderingP,
            fmt::format("{} contexts x {} members, lambda {}: mean I(x) n=+2 {:.5f}, n=-2 {:.5f}; paired t = {:.2f}, "
                        "one-sided p = {:.3g} (need < {})",
                        kIntensityContexts, cfg.ensemble, kIntensityLambda, up, down, t, p, kOrderingP)};
}

// ---------------------------------------------------------------------------
// 10. CLI reproducibility
// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream is(e.path(), std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        out[fs::relative(e.path(), dir).string()] = ss.str();
    }
    return out;
}

Outcome cli_reproducibility(const fs::path& work, const fs::path& cli) {
    if (!fs::exists(cli)) return {false, "CLI binary not found: " + cli.string()};
    const fs::path dir = work / "repro";
    const fs::path cfg = work / "repro.ini";
    std::ofstream(cfg) << R"([sim]
height = 16
width = 16
l_in = 3
l_out = 3
train_count = 24
test_count = 3
sprite_factor = 4
sprite_pool = 30
[denoiser]
base_width = 6
time_dim = 8
epochs = 2
batch = 4
[guidance]
align_width = 4
align_hidden = 8
align_heads = 2
align_epochs = 2
detector_epochs = 2
align_batch = 4
[eval]
ensemble = 2
pool_sizes = 4, 16
oracle_chains = 4000
)";
    const std::vector<std::string> commands = {
        "gen-nbody", "train", "train-align", "sample --lambda 2", "evaluate", "oracle-check"};
    std::vector<std::map<std::string, std::string>> runs;
    for (int r = 0; r < 2; ++r) {
        fs::remove_all(dir);
        for (const auto& c : commands) {
            const std::string cmd = fmt::format("\"{}\" {} --config \"{}\" --seed 9 --workers 1 --out \"{}\" >/dev/null 2>&1",
                                                cli.string(), c, cfg.string(), dir.string());
            if (std::system(cmd.c_str()) != 0) return {false, "command failed: " + cmd};
        }
        runs.push_back(snapshot(dir));
    }
    std::vector<std::string> differ;
    for (const auto& [name, bytes] : runs[0]) {
        const auto it = runs[1].find(name);
        if (it == runs[1].end() || it->second != bytes) differ.push_back(name);
    }
    if (runs[1].size() != runs[0].size()) differ.push_back("(file sets differ)");
    std::string list;
    for (std::size_t i = 0; i < std::min<std::size_t>(differ.size(), 5); ++i) list += " " + differ[i];
    return {differ.empty() && !runs[0].empty(),
            fmt::format("{} commands, {} artifacts compared across two runs, {} differ{}", commands.size(),
                        runs[0].size(), differ.size(), list)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string work = "acceptance_work", cli;
    std::vector<int> only;
    app.add_option("--work", work, "scratch directory");
    app.add_option("--cli", cli, "path of the gnwd binary");
    app.add_option("--only", only, "run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"metric oracle equivalence", metric_oracle},
        {"CRPS collapse to MAE", crps_collapse},
        {"schedule / forward consistency", schedule_consistency},
        {"gradient integrity", gradient_integrity},
        {"Gaussian sampler oracle", gaussian_sampler},
        {"guidance efficacy", guidance_efficacy},
        {"simulator energy", simulator_energy},
        {"end-to-end energy guidance", [&] { return energy_end_to_end(work); }},
        {"intensity-guidance ordering", [&] { return intensity_ordering(work); }},
        {"CLI reproducibility", [&] { return cli_reproducibility(work, cli); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << fmt::format("[{}] {} {}: {} ({:.1f} s)", id, o.pass ? "PASS" : "FAIL", criteria[i].first,
                                 o.detail, seconds_since(t0))
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
