#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gnwd/codec.hpp"
#include "gnwd/rng.hpp"
#include "gnwd/tensor.hpp"

namespace gnwd {

/// scaled_linear reads [beta_min, beta_max] at the 1000-step reference and multiplies
/// by 1000 / T, so short schedules still end near abar_T = 0.
enum class ScheduleKind { linear, scaled_linear, cosine };
ScheduleKind parse_schedule_kind(const std::string& s);
std::string to_string(ScheduleKind k);

/// Variance schedule for steps t = 1..T. Index 0 is the clean-data convention
/// (alpha_bar(0) = 1). Recurrences are kept in double.
class NoiseSchedule {
  public:
    /// Validates 0 < beta_t < 1 for every step.
    explicit NoiseSchedule(std::vector<double> betas);

    int steps() const { return static_cast<int>(beta_.size()); }
    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }
    /// beta~_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t, with beta~_1 = beta_1.
    double posterior_var(int t) const { return posterior_var_.at(index(t)); }

  private:
    std::size_t index(int t) const;

    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
    std::vector<double> posterior_var_;
};

NoiseSchedule make_schedule(int steps, ScheduleKind kind = ScheduleKind::linear, double beta_min = 1e-4,
                            double beta_max = 2e-2);

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, for t in [0, T].
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

Tensor standard_normal(const Shape& shape, Rng& rng);

struct TransitionMoments {
    Tensor mean;
    double var = 0.0;
};

/// Mean and (fixed) variance of p(z_{t-1} | z_t) under the eps parameterization.
TransitionMoments transition_moments(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched);

/// eps-prediction model used by the sampler. predict_vjp returns J^T cotangent with
/// J = d eps_hat / d z_t, which the guidance path needs.
class NoisePredictor {
  public:
    virtual ~NoisePredictor() = default;
    virtual Tensor predict(const Tensor& z_t, int t, const Tensor& z_cond) const = 0;
    virtual Tensor predict_vjp(const Tensor& z_t, int t, const Tensor& z_cond, const Tensor& cotangent) const = 0;
};

/// Returns the mean shift direction g for the transition into z_{t_next}; the sampler
/// applies mean + var * g. Called with the unguided moments.
using GuidanceHook = std::function<Tensor(const TransitionMoments& moments, int t_next, const Tensor& z_cond)>;

/// Ancestral sampling z_T ~ N(0, I) down to z_0. The final step emits the mean.
Tensor sample(const Tensor& z_cond, const Shape& z_shape, const NoisePredictor& model, const NoiseSchedule& sched,
              Rng& rng, const GuidanceHook* guidance = nullptr);

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

/// One noised mini-batch in latent space: z_t = q_sample(encode(x), t, eps), cond = encode(y).
struct DiffusionBatch {
    std::vector<Tensor> z_t;
    std::vector<Tensor> z_cond;
    std::vector<Tensor> eps;
    std::vector<int> t;
};

DiffusionBatch make_diffusion_batch(std::span<const Tensor> targets, std::span<const Tensor> contexts,
                                    const FrameCodec& codec, const NoiseSchedule& sched, Rng& rng);

/// Same, from already-encoded latents.
DiffusionBatch make_latent_batch(std::span<const Tensor> z0, std::span<const Tensor> z_cond,
                                 const NoiseSchedule& sched, Rng& rng);

struct LossAndGrads {
    double loss = 0.0;
    std::vector<double> grads;
};

/// Mean squared eps residual over the batch with t ~ U{1..T}. The model supplies
/// `LossAndGrads loss_and_grads(const DiffusionBatch&)`.
template <class Model>
LossAndGrads training_loss(std::span<const Tensor> targets, std::span<const Tensor> contexts, Model& model,
                           const FrameCodec& codec, const NoiseSchedule& sched, Rng& rng) {
    if (targets.empty()) throw ContractError("training_loss: empty batch");
    return model.loss_and_grads(make_diffusion_batch(targets, contexts, codec, sched, rng));
}

}  // namespace gnwd
