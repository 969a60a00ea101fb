#pragma once

// Analytic Gaussian checks of the sampler and of guidance. For data x ~ N(m, S) the
// noised marginal is N(sqrt(abar) m, abar S + (1 - abar) I), so the optimal noise
// predictor is eps*(z, t) = sqrt(1 - abar) Sigma_t^{-1} (z - sqrt(abar) m).

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "gnwd/diffusion.hpp"

namespace gnwd {

class GaussianOracleDenoiser : public NoisePredictor {
  public:
    GaussianOracleDenoiser(Eigen::VectorXd mean, Eigen::MatrixXd cov, const NoiseSchedule& sched);

    Tensor predict(const Tensor& z_t, int t, const Tensor& z_cond) const override;
    /// eps* is affine in z with a symmetric Jacobian.
    Tensor predict_vjp(const Tensor& z_t, int t, const Tensor& z_cond, const Tensor& cotangent) const override;

    std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }

  private:
    Eigen::MatrixXd precision(int t) const;

    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    const NoiseSchedule& sched_;
};

/// The 2-D problem used by both checks.
struct GaussianTask {
    Eigen::Vector2d mean{1.0, -1.0};
    Eigen::Matrix2d cov = (Eigen::Matrix2d() << 1.0, 0.25, 0.25, 0.8).finished();
    Eigen::Vector2d probe{1.0, 0.0};  // F(x) = <a, x>
    double target = 2.0;              // F_0
};

inline constexpr double kSamplerMeanTol = 0.05;
inline constexpr double kSamplerCovRelTol = 0.10;
inline constexpr double kGuidanceViolationRatio = 0.5;
inline constexpr double kGuidanceFidelityTol = 0.20;

struct SamplerCheck {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    double mean_error = 0.0;     // ||sample mean - m||
    double cov_rel_error = 0.0;  // ||sample cov - S||_F / ||S||_F
    bool pass = false;
};

/// Draws `chains` samples with the oracle predictor (chain c seeded from (seed, c)).
SamplerCheck run_sampler_check(const GaussianTask& task, const NoiseSchedule& sched, std::size_t chains,
                               std::uint64_t seed, std::size_t workers = 1);

struct GuidanceCheck {
    double unguided_violation = 0.0;  // mean |F(x) - F_0|
    double guided_violation = 0.0;
    double violation_ratio = 0.0;
    double unguided_free_var = 0.0;   // variance of the coordinate orthogonal to the probe
    double guided_free_var = 0.0;
    double fidelity_drift = 0.0;      // relative change of that variance
    bool lambda0_bit_exact = false;   // hook with lambda 0 == no hook, same rng stream
    bool pass = false;
};

/// Linear-probe guidance through the oracle (z0_hat) path with the given lambda.
GuidanceCheck run_guidance_check(const GaussianTask& task, const NoiseSchedule& sched, std::size_t chains,
                                 std::uint64_t seed, double lambda, std::size_t workers = 1);

std::string describe(const SamplerCheck& c);
std::string describe(const GuidanceCheck& c);

}  // namespace gnwd
