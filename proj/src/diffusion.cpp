#include "gnwd/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace gnwd {

ScheduleKind parse_schedule_kind(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "scaled_linear") return ScheduleKind::scaled_linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ContractError("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::linear: return "linear";
        case ScheduleKind::scaled_linear: return "scaled_linear";
        case ScheduleKind::cosine: return "cosine";
    }
    return "?";
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw ContractError("schedule needs T >= 1");
    double abar = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        const double b = beta_[i];
        if (!(b > 0.0 && b < 1.0)) {
            throw ContractError("beta_" + std::to_string(i + 1) + " = " + std::to_string(b) + " outside (0, 1)");
        }
        const double abar_prev = abar;
        abar *= 1.0 - b;
        alpha_bar_.push_back(abar);
        posterior_var_.push_back(i == 0 ? b : (1.0 - abar_prev) / (1.0 - abar) * b);
    }
}

std::size_t NoiseSchedule::index(int t) const {
    if (t < 1 || t > steps()) throw ContractError("step t=" + std::to_string(t) + " outside [1, T]");
    return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_schedule(int steps, ScheduleKind kind, double beta_min, double beta_max) {
    if (steps < 1) throw ContractError("schedule needs T >= 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    if (kind == ScheduleKind::linear || kind == ScheduleKind::scaled_linear) {
        if (!(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max)) {
            throw ContractError("linear schedule needs 0 < beta_min <= beta_max < 1");
        }
        const double scale = kind == ScheduleKind::scaled_linear ? 1000.0 / steps : 1.0;
        for (int t = 1; t <= steps; ++t) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
            betas[static_cast<std::size_t>(t - 1)] = scale * (beta_min + (beta_max - beta_min) * frac);
        }
    } else {
        constexpr double s = 0.008;
        const auto f = [&](int t) {
            const double c = std::cos((static_cast<double>(t) / steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
            return c * c;
        };
        for (int t = 1; t <= steps; ++t) {
            betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - f(t) / f(t - 1), 0.999);
        }
    }
    return NoiseSchedule(std::move(betas));
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (z0.shape() != eps.shape()) throw ContractError("q_sample: eps shape differs from z0");
    if (t < 0 || t > sched.steps()) throw ContractError("q_sample: t outside [0, T]");
    const double a = std::sqrt(sched.alpha_bar(t));
    const double b = std::sqrt(1.0 - sched.alpha_bar(t));
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(a * z0[i] + b * eps[i]);
    return out;
}

Tensor standard_normal(const Shape& shape, Rng& rng) {
    Tensor out(shape);
    for (auto& v : out.span()) v = static_cast<float>(rng.normal());
    return out;
}

TransitionMoments transition_moments(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched) {
    if (z_t.shape() != eps_hat.shape()) throw ContractError("transition_moments: shape mismatch");
    const double beta = sched.beta(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
    const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
    TransitionMoments m{Tensor(z_t.shape()), sched.posterior_var(t)};
    for (std::size_t i = 0; i < z_t.numel(); ++i) {
        m.mean[i] = static_cast<float>(inv_sqrt_alpha * (z_t[i] - coef * eps_hat[i]));
    }
    return m;
}

Tensor sample(const Tensor& z_cond, const Shape& z_shape, const NoisePredictor& model, const NoiseSchedule& sched,
              Rng& rng, const GuidanceHook* guidance) {
    Tensor z = standard_normal(z_shape, rng);
    for (int t = sched.steps(); t >= 1; --t) {
        const Tensor eps = model.predict(z, t, z_cond);
        TransitionMoments m = transition_moments(z, t, eps, sched);
        if (guidance && *guidance) {
            const Tensor g = (*guidance)(m, t - 1, z_cond);
            if (g.shape() != m.mean.shape()) throw ContractError("guidance returned a mis-shaped shift");
            for (std::size_t i = 0; i < m.mean.numel(); ++i) {
                m.mean[i] = static_cast<float>(m.mean[i] + m.var * g[i]);
            }
        }
        if (t > 1) {
            const double sd = std::sqrt(m.var);
            for (std::size_t i = 0; i < m.mean.numel(); ++i) {
                m.mean[i] = static_cast<float>(m.mean[i] + sd * rng.normal());
            }
        }
        z = std::move(m.mean);
    }
    return z;
}

DiffusionBatch make_latent_batch(std::span<const Tensor> z0, std::span<const Tensor> z_cond,
                                 const NoiseSchedule& sched, Rng& rng) {
    if (z0.size() != z_cond.size()) throw ContractError("targets and contexts differ in count");
    DiffusionBatch b;
    for (std::size_t i = 0; i < z0.size(); ++i) {
        const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps())));
        Tensor eps = standard_normal(z0[i].shape(), rng);
        b.z_t.push_back(q_sample(z0[i], t, eps, sched));
        b.z_cond.push_back(z_cond[i]);
        b.eps.push_back(std::move(eps));
        b.t.push_back(t);
    }
    return b;
}

DiffusionBatch make_diffusion_batch(std::span<const Tensor> targets, std::span<const Tensor> contexts,
                                    const FrameCodec& codec, const NoiseSchedule& sched, Rng& rng) {
    if (targets.size() != contexts.size()) throw ContractError("targets and contexts differ in count");
    std::vector<Tensor> z0, zc;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        z0.push_back(codec.encode_seq(targets[i]));
        zc.push_back(codec.encode_seq(contexts[i]));
    }
    return make_latent_batch(z0, zc, sched, rng);
}

}  // namespace gnwd
