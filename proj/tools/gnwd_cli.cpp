// gnwd: data generation, training, guided sampling and evaluation.
//
// Default layout under the run root ([run] out, or --out); --dir redirects one command's
// output and --data / --denoiser / --align / --forecast point at other inputs:
//   <out>/data     gen-nbody      train.gnwd, test.gnwd
//   <out>/train    train          denoiser.ckpt, loss.csv
//   <out>/align    train-align    align.ckpt, detector.ckpt or forecaster.json
//   <out>/sample   sample         samples/forecast.gnwd, PGM grids
//   <out>/eval     evaluate       metrics.csv, summary.txt
//   <out>/oracle   oracle-check   oracle_report.txt

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "gnwd/pipeline.hpp"

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> ensemble;
    std::optional<double> lambda;
    std::optional<double> n;
    std::optional<std::size_t> workers;
    std::string out;
    std::string dir;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "base seed");
    app->add_option("--workers", c.workers, "worker threads (GNWD_THREADS overrides)");
    app->add_option("--out", c.out, "run root (overrides [run] out)");
    app->add_option("--dir", c.dir, "output directory of this command (default: its place under the run root)");
}

gnwd::PipelineConfig resolve(const Common& c) {
    gnwd::PipelineConfig cfg = c.config.empty() ? gnwd::PipelineConfig{} : gnwd::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.ensemble) cfg.ensemble = *c.ensemble;
    if (c.lambda) cfg.lambda = *c.lambda;
    if (c.n) cfg.n_sigma = *c.n;
    if (c.workers) cfg.workers = *c.workers;
    if (!c.out.empty()) cfg.out = c.out;
    cfg.validate();
    return cfg;
}

gnwd::fs::path pick(const std::string& given, const gnwd::fs::path& fallback) {
    return given.empty() ? fallback : gnwd::fs::path(given);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent diffusion forecasting with knowledge-guided sampling"};
    app.require_subcommand(1);

    Common c;
    std::string data, denoiser, align, detector, forecast;
    bool resume = false;

    auto* gen = app.add_subcommand("gen-nbody", "generate train/test 3-body digit sequences");
    add_common(gen, c);

    auto* train = app.add_subcommand("train", "train the latent noise predictor");
    add_common(train, c);
    train->add_option("--data", data, "training dataset (train.gnwd or its .json manifest)");
    train->add_flag("--resume", resume, "continue from the checkpoint in the output directory");

    auto* talign = app.add_subcommand("train-align", "train the alignment network (and energy detector / forecaster)");
    add_common(talign, c);
    talign->add_option("--data", data, "training dataset");
    talign->add_flag("--resume", resume, "continue from the checkpoints in the output directory");

    auto* samp = app.add_subcommand("sample", "draw ensemble forecasts for the test set");
    add_common(samp, c);
    samp->add_option("--ensemble", c.ensemble, "members per test sample");
    samp->add_option("--lambda", c.lambda, "guidance scale (0 = unguided)");
    samp->add_option("--n", c.n, "intensity shift in forecaster standard deviations");
    samp->add_option("--data", data, "test dataset");
    samp->add_option("--denoiser", denoiser, "denoiser checkpoint");
    samp->add_option("--align", align, "train-align output directory");

    auto* eval = app.add_subcommand("evaluate", "score a forecast file against the test set");
    add_common(eval, c);
    eval->add_option("--forecast", forecast, "samples/forecast.gnwd written by sample");
    eval->add_option("--data", data, "test dataset");
    eval->add_option("--detector", detector, "energy detector checkpoint (enables E.MSE / E.MAE)");

    auto* oracle = app.add_subcommand("oracle-check", "analytic Gaussian checks of sampler and guidance");
    add_common(oracle, c);

    CLI11_PARSE(app, argc, argv);

    try {
        const gnwd::PipelineConfig cfg = resolve(c);
        const gnwd::fs::path root = cfg.out;
        const gnwd::fs::path dir_data = root / "data", dir_align = root / "align";
        if (*gen) {
            gnwd::cmd_gen_nbody(cfg, pick(c.dir, dir_data));
        } else if (*train) {
            gnwd::cmd_train(cfg, pick(data, dir_data / "train.gnwd"), pick(c.dir, root / "train"), resume);
        } else if (*talign) {
            gnwd::cmd_train_align(cfg, pick(data, dir_data / "train.gnwd"), pick(c.dir, dir_align), resume);
        } else if (*samp) {
            gnwd::SampleInputs in;
            in.denoiser = pick(denoiser, root / "train" / "denoiser.ckpt");
            in.align_dir = pick(align, dir_align);
            in.test_manifest = pick(data, dir_data / "test.gnwd");
            const auto path = gnwd::cmd_sample(cfg, in, pick(c.dir, root / "sample"));
            std::cout << path.string() << '\n';
        } else if (*eval) {
            gnwd::fs::path det = detector;
            if (det.empty() && cfg.constraint == "energy" && gnwd::fs::exists(dir_align / "detector.ckpt")) {
                det = dir_align / "detector.ckpt";
            }
            gnwd::cmd_evaluate(cfg, pick(forecast, root / "sample" / "samples" / "forecast.gnwd"),
                               pick(data, dir_data / "test.gnwd"), det, pick(c.dir, root / "eval"));
        } else if (*oracle) {
            if (!gnwd::cmd_oracle_check(cfg, pick(c.dir, root / "oracle"))) {
                std::cerr << "oracle-check: FAILED\n";
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
