#pragma once

// Pipeline configuration: INI-style `key = value` under [sim], [codec], [diffusion],
// [denoiser], [guidance], [eval], [run]. Unknown keys are rejected so typos surface.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gnwd/codec.hpp"
#include "gnwd/diffusion.hpp"
#include "gnwd/nbody.hpp"

namespace gnwd {

struct PipelineConfig {
    // [sim]
    SimConfig sim;
    std::size_t l_in = 10;
    std::size_t l_out = 10;
    std::size_t train_count = 200;
    std::size_t test_count = 50;
    std::size_t sprite_factor = 1;  // box downsample of 28x28 digit sprites
    std::size_t sprite_pool = 1000;
    std::string idx_path;           // MNIST-style IDX images; empty uses procedural digits

    // [codec]
    CodecMode codec_mode = CodecMode::patch_dct;
    std::size_t patch = 4;
    std::size_t kept = 3;

    // [diffusion]
    int steps = 200;
    ScheduleKind schedule = ScheduleKind::scaled_linear;
    double beta_min = 1e-4;
    double beta_max = 2e-2;

    // [denoiser]
    std::size_t base_width = 32;
    std::size_t time_dim = 32;
    std::size_t epochs = 20;
    std::size_t batch = 8;
    double lr = 1e-3;
    double grad_clip = 1.0;
    double weight_decay = 0.0;
    std::string lr_schedule = "constant";  // or "cosine" (decay to lr / 100); also used for alignment training

    // [guidance]
    std::string constraint = "energy";    // energy | mean_intensity
    std::string path = "alignment";       // alignment | oracle
    double lambda = 0.0;
    double n_sigma = 0.0;
    double clip = 0.0;
    double probe_lambda = 20.0;           // linear-probe Gaussian check
    std::size_t align_width = 16;
    std::size_t align_hidden = 64;
    std::size_t align_heads = 4;
    std::size_t align_epochs = 20;
    std::size_t align_clean_epochs = 0;  // leading epochs on clean latents (t = 0)
    std::size_t align_batch = 8;
    double align_lr = 1e-3;
    std::size_t detector_epochs = 20;
    double align_shuffle = 1.0;  // probability of pairing a target with another sample's context
    bool align_augment = false;  // random flips/transposes and time reversal of alignment targets

    // [eval]
    std::size_t ensemble = 8;
    std::size_t test_limit = 0;  // 0 = all test samples
    std::vector<double> thresholds = {16, 74, 133, 160, 181, 219};
    std::vector<std::size_t> pool_sizes = {4, 16};
    std::size_t oracle_chains = 10000;

    // [run]
    std::uint64_t seed = 0;
    std::string out = "run";
    std::size_t workers = 1;

    SimConfig sim_config() const;
    CodecSpec codec_spec() const;
    NoiseSchedule schedule_obj() const;
    void validate() const;
};

/// Reads an INI file over the defaults.
PipelineConfig load_config(const std::filesystem::path& path);
/// Parses INI text over the defaults.
PipelineConfig parse_config(const std::string& text);
/// Full resolved configuration as INI text (stable key order, round-trips through parse_config).
std::string dump_config(const PipelineConfig& cfg);

}  // namespace gnwd
