#pragma once

// The end-to-end commands behind the CLI. Every command writes the resolved config
// (config.ini) and a plain-text log into its output directory; nothing in the
// outputs depends on wall-clock time or on the worker count.

#include <filesystem>
#include <string>
#include <vector>

#include "gnwd/alignment.hpp"
#include "gnwd/config.hpp"
#include "gnwd/data_store.hpp"
#include "gnwd/metrics.hpp"

namespace gnwd {

namespace fs = std::filesystem;

struct GenerateResult {
    DatasetManifest train;
    DatasetManifest test;
};

/// Writes train.gnwd / test.gnwd (+ .json manifests) under out.
GenerateResult cmd_gen_nbody(const PipelineConfig& cfg, const fs::path& out);

struct TrainResult {
    std::uint64_t steps = 0;
    std::vector<double> epoch_loss;  // mean loss of each epoch run in this call
    fs::path checkpoint;
};

/// Trains the noise predictor on a training manifest; writes denoiser.ckpt and loss.csv.
/// With resume, continues from the checkpoint in out up to cfg.epochs total epochs.
TrainResult cmd_train(const PipelineConfig& cfg, const fs::path& train_manifest, const fs::path& out,
                      bool resume = false);

struct AlignTrainResult {
    std::vector<double> align_epoch_loss;
    std::vector<double> detector_epoch_loss;
    double detector_val_mse = 0.0;  // normalized units, held-out split
    double align_val_mse = 0.0;     // normalized units, held-out split at t = 0
    double corpus_violation = 0.0;  // mean ||F(x) - F_0|| over training targets
    fs::path checkpoint;
};

/// Trains the alignment network (and, for the energy constraint, the energy detector;
/// for the intensity constraint, the intensity forecaster). Never reads denoiser weights.
AlignTrainResult cmd_train_align(const PipelineConfig& cfg, const fs::path& train_manifest, const fs::path& out,
                                 bool resume = false);

struct SampleInputs {
    fs::path denoiser;     // checkpoint file
    fs::path align_dir;    // output of train-align; needed when lambda > 0
    fs::path test_manifest;
};

/// Draws cfg.ensemble members per test sample; guided iff cfg.lambda > 0. Writes
/// samples/forecast.gnwd (+ .json), samples/latents.gnwd and PGM grids.
fs::path cmd_sample(const PipelineConfig& cfg, const SampleInputs& in, const fs::path& out);

/// Scores a forecast file against the test set; writes metrics.csv and summary.txt.
/// Rows: the forecast, persistence (last context frame repeated) and the target scored
/// against itself. Energy metrics need a detector checkpoint (empty path skips them).
std::vector<MetricsAccumulator::Row> cmd_evaluate(const PipelineConfig& cfg, const fs::path& forecast,
                                                  const fs::path& test_manifest, const fs::path& detector,
                                                  const fs::path& out);

/// Gaussian sampler and linear-probe guidance checks; returns true when both pass.
bool cmd_oracle_check(const PipelineConfig& cfg, const fs::path& out);

// ---------------------------------------------------------------------------
// Pieces shared with tests and the acceptance harness
// ---------------------------------------------------------------------------

/// Sprite pool used by the generator: IDX file if configured, else procedural digits.
Tensor load_sprite_pool(const PipelineConfig& cfg);

struct LatentCorpus {
    std::vector<Tensor> z0;      // encoded targets
    std::vector<Tensor> z_cond;  // encoded contexts
    std::vector<std::vector<double>> energies;   // ground-truth target energies (if meta)
    std::vector<double> reference;               // E(y^L_in) (if meta)
    std::vector<std::vector<double>> intensity_features;
    std::vector<double> intensity;               // mean target intensity
};

LatentCorpus encode_corpus(DatasetReader& reader, const FrameCodec& codec, std::size_t limit = 0);

DenoiserSpec denoiser_spec(const PipelineConfig& cfg);
AlignmentSpec alignment_spec(const PipelineConfig& cfg, std::size_t out_dim);

/// Forecasts stored by cmd_sample: one [M, L_out, H, W, C] tensor per test sample.
struct ForecastSet {
    std::vector<Tensor> members;
    std::vector<std::size_t> indices;  // test-set index of each entry
    std::size_t ensemble = 0;
    double lambda = 0.0;
    double n_sigma = 0.0;
};
ForecastSet load_forecasts(const fs::path& forecast);

/// Writes an 8-bit binary PGM of an [H, W] or [H, W, 1] frame grid.
void write_pgm(const fs::path& path, const Tensor& image);

}  // namespace gnwd
