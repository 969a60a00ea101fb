#pragma once

// Forecast scores. Frames are [L, H, W, C] in [0, 1]; ensembles are vectors of
// such sequences. Thresholds are on the 0-255 scale and an event is value >= threshold.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnwd/tensor.hpp"

namespace gnwd {

inline const std::vector<double> kDefaultThresholds = {16, 74, 133, 160, 181, 219};

struct Contingency {
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t false_alarms = 0;
    std::uint64_t correct_negatives = 0;

    Contingency& operator+=(const Contingency& o);
};

/// Binarizes pred and obs at threshold (0-255 scale) and counts outcomes.
Contingency contingency(const Tensor& pred, const Tensor& obs, double threshold);

/// H / (H + M + F); 0 when the denominator is 0.
double csi(const Contingency& c);
/// (H + F) / (H + M); nullopt when H + M = 0.
std::optional<double> bias(const Contingency& c);

/// Max-pools each frame/channel with kernel = stride = s; H and W must be divisible by s.
Tensor max_pool_frames(const Tensor& seq, std::size_t s);
Contingency pooled_contingency(const Tensor& pred, const Tensor& obs, double threshold, std::size_t s);

/// Pixel-wise empirical CRPS averaged over pixels:
/// mean_m |x_m - y| - 1/(2 M^2) sum_{m,m'} |x_m - x_m'|.
double crps_ensemble(std::span<const Tensor> members, const Tensor& obs);

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, L 1, valid region)
/// over frames and channels.
double ssim(const Tensor& a, const Tensor& b);
/// SSIM of one [H, W] plane given as row-major values.
double ssim_plane(const float* a, const float* b, std::size_t h, std::size_t w);

double mse(const Tensor& a, const Tensor& b);
double mae(const Tensor& a, const Tensor& b);
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

Tensor ensemble_mean(std::span<const Tensor> members);

struct EnergyScores {
    double mse = 0.0;
    double mae = 0.0;
};

/// Squared / absolute error between each forecast frame's energy and the reference energy
/// E(y^L_in), averaged over frames and members. `member_energies[m][l]`.
EnergyScores energy_scores(std::span<const std::vector<double>> member_energies, double reference);

/// Accumulates per-sample scores into a report row.
class MetricsAccumulator {
  public:
    explicit MetricsAccumulator(std::vector<double> thresholds = kDefaultThresholds,
                                std::vector<std::size_t> pool_sizes = {4, 16});

    /// members: ensemble forecast; obs: ground truth. Deterministic models pass a single member.
    void add(std::span<const Tensor> members, const Tensor& obs);
    void add_energy(std::span<const std::vector<double>> member_energies, double reference);

    struct Row {
        std::string name;
        std::size_t samples = 0;
        double mse = 0.0;
        double mae = 0.0;
        double ssim = 0.0;
        double crps = 0.0;
        std::vector<double> csi;                       // per threshold
        double csi_mean = 0.0;
        std::vector<std::vector<double>> csi_pool;     // [pool size][threshold]
        std::vector<double> csi_pool_mean;             // per pool size
        std::vector<std::optional<double>> bias;       // per threshold
        std::optional<double> bias_mean;               // over defined thresholds
        std::optional<double> e_mse;
        std::optional<double> e_mae;
    };
    Row finish(const std::string& name) const;

    const std::vector<double>& thresholds() const { return thresholds_; }
    const std::vector<std::size_t>& pool_sizes() const { return pools_; }

  private:
    std::vector<double> thresholds_;
    std::vector<std::size_t> pools_;
    std::size_t n_ = 0;
    double mse_ = 0.0, mae_ = 0.0, ssim_ = 0.0, crps_ = 0.0;
    std::vector<Contingency> tables_;
    std::vector<std::vector<Contingency>> pooled_;  // [pool][threshold]
    std::size_t n_energy_ = 0;
    double e_mae_ = 0.0, e_mse_ = 0.0;
};

/// Fixed-column CSV; undefined values print as "nan".
std::vector<std::string> metrics_csv_columns(const std::vector<double>& thresholds,
                                             const std::vector<std::size_t>& pool_sizes);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsAccumulator::Row> rows,
                       const std::vector<double>& thresholds, const std::vector<std::size_t>& pool_sizes);

}  // namespace gnwd
