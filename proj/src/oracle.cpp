#include "gnwd/oracle.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gnwd/alignment.hpp"
#include "gnwd/parallel.hpp"

namespace gnwd {

GaussianOracleDenoiser::GaussianOracleDenoiser(Eigen::VectorXd mean, Eigen::MatrixXd cov, const NoiseSchedule& sched)
    : mean_(std::move(mean)), cov_(std::move(cov)), sched_(sched) {
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) throw ContractError("oracle: covariance shape");
}

Eigen::MatrixXd GaussianOracleDenoiser::precision(int t) const {
    const double abar = sched_.alpha_bar(t);
    const Eigen::MatrixXd sigma =
        abar * cov_ + (1.0 - abar) * Eigen::MatrixXd::Identity(mean_.size(), mean_.size());
    return sigma.inverse();
}

Tensor GaussianOracleDenoiser::predict(const Tensor& z_t, int t, const Tensor&) const {
    if (z_t.numel() != dim()) throw ContractError("oracle: latent dimension mismatch");
    const double abar = sched_.alpha_bar(t);
    Eigen::VectorXd z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = z_t[static_cast<std::size_t>(i)];
    const Eigen::VectorXd e = std::sqrt(1.0 - abar) * (precision(t) * (z - std::sqrt(abar) * mean_));
    Tensor out(z_t.shape());
    for (Eigen::Index i = 0; i < e.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(e(i));
    return out;
}

Tensor GaussianOracleDenoiser::predict_vjp(const Tensor& z_t, int t, const Tensor&, const Tensor& cotangent) const {
    if (z_t.numel() != dim() || cotangent.numel() != dim()) throw ContractError("oracle: latent dimension mismatch");
    const double abar = sched_.alpha_bar(t);
    Eigen::VectorXd c(mean_.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = cotangent[static_cast<std::size_t>(i)];
    const Eigen::VectorXd g = std::sqrt(1.0 - abar) * (precision(t) * c);
    Tensor out(z_t.shape());
    for (Eigen::Index i = 0; i < g.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(g(i));
    return out;
}

namespace {

std::vector<Tensor> draw(const NoisePredictor& model, const NoiseSchedule& sched, std::size_t chains,
                         std::uint64_t seed, std::size_t workers, const GuidanceHook* hook) {
    std::vector<Tensor> out(chains);
    const Tensor cond;
    parallel_for(chains, workers, [&](std::size_t c) {
        Rng rng(derive_seed(seed, c));
        out[c] = sample(cond, {2}, model, sched, rng, hook);
    });
    return out;
}

void moments(const std::vector<Tensor>& xs, Eigen::Vector2d& mean, Eigen::Matrix2d& cov) {
    mean.setZero();
    for (const auto& x : xs) mean += Eigen::Vector2d(x[0], x[1]);
    mean /= static_cast<double>(xs.size());
    cov.setZero();
    for (const auto& x : xs) {
        const Eigen::Vector2d d = Eigen::Vector2d(x[0], x[1]) - mean;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(xs.size() - 1);
}

}  // namespace

SamplerCheck run_sampler_check(const GaussianTask& task, const NoiseSchedule& sched, std::size_t chains,
                               std::uint64_t seed, std::size_t workers) {
    if (chains < 2) throw ContractError("sampler check needs at least 2 chains");
    const GaussianOracleDenoiser model(task.mean, task.cov, sched);
    const auto xs = draw(model, sched, chains, seed, workers, nullptr);
    SamplerCheck r;
    moments(xs, r.mean, r.cov);
    r.mean_error = (r.mean - task.mean).norm();
    r.cov_rel_error = (r.cov - task.cov).norm() / task.cov.norm();
    r.pass = r.mean_error <= kSamplerMeanTol && r.cov_rel_error <= kSamplerCovRelTol;
    return r;
}

GuidanceCheck run_guidance_check(const GaussianTask& task, const NoiseSchedule& sched, std::size_t chains,
                                 std::uint64_t seed, double lambda, std::size_t workers) {
    if (chains < 2) throw ContractError("guidance check needs at least 2 chains");
    const GaussianOracleDenoiser model(task.mean, task.cov, sched);
    ConstraintSpec spec;
    spec.kind = ConstraintKind::linear_probe;
    spec.probe = Tensor({2}, std::vector<float>{static_cast<float>(task.probe(0)), static_cast<float>(task.probe(1))});
    const OracleEstimator est(model, sched, nullptr, spec);
    const std::vector<double> f0 = {task.target};

    const GuidanceHook guided = make_guidance_hook(est, f0, {lambda, 0.0});
    const GuidanceHook zero = make_guidance_hook(est, f0, {0.0, 0.0});
    const auto plain = draw(model, sched, chains, seed, workers, nullptr);
    const auto steered = draw(model, sched, chains, seed, workers, &guided);
    const auto noop = draw(model, sched, chains, seed, workers, &zero);

    GuidanceCheck r;
    r.lambda0_bit_exact = true;
    for (std::size_t c = 0; c < chains; ++c) r.lambda0_bit_exact = r.lambda0_bit_exact && plain[c] == noop[c];

    // coordinate orthogonal to the probe
    const Eigen::Vector2d free_dir = Eigen::Vector2d(-task.probe(1), task.probe(0)).normalized();
    const auto stats = [&](const std::vector<Tensor>& xs, double& viol, double& free_var) {
        viol = 0.0;
        double m = 0.0, m2 = 0.0;
        for (const auto& x : xs) {
            const Eigen::Vector2d v(x[0], x[1]);
            viol += std::abs(task.probe.dot(v) - task.target);
            const double f = free_dir.dot(v);
            m += f;
            m2 += f * f;
        }
        const double n = static_cast<double>(xs.size());
        viol /= n;
        m /= n;
        free_var = (m2 - n * m * m) / (n - 1.0);
    };
    stats(plain, r.unguided_violation, r.unguided_free_var);
    stats(steered, r.guided_violation, r.guided_free_var);
    r.violation_ratio = r.guided_violation / r.unguided_violation;
    r.fidelity_drift = std::abs(r.guided_free_var - r.unguided_free_var) / r.unguided_free_var;
    r.pass = r.lambda0_bit_exact && r.violation_ratio <= kGuidanceViolationRatio &&
             r.fidelity_drift <= kGuidanceFidelityTol;
    return r;
}

std::string describe(const SamplerCheck& c) {
    return fmt::format(
        "sampler: mean=({:.4f}, {:.4f}) |mean err|={:.4f} (tol {}) cov=[[{:.4f}, {:.4f}], [{:.4f}, {:.4f}]] "
        "rel cov err={:.4f} (tol {}) -> {}",
        c.mean(0), c.mean(1), c.mean_error, kSamplerMeanTol, c.cov(0, 0), c.cov(0, 1), c.cov(1, 0), c.cov(1, 1),
        c.cov_rel_error, kSamplerCovRelTol, c.pass ? "pass" : "FAIL");
}

std::string describe(const GuidanceCheck& c) {
    return fmt::format(
        "guidance: violation unguided={:.4f} guided={:.4f} ratio={:.4f} (tol {}) free-coordinate var "
        "unguided={:.4f} guided={:.4f} drift={:.4f} (tol {}) lambda0 bit-exact={} -> {}",
        c.unguided_violation, c.guided_violation, c.violation_ratio, kGuidanceViolationRatio, c.unguided_free_var,
        c.guided_free_var, c.fidelity_drift, kGuidanceFidelityTol, c.lambda0_bit_exact ? "yes" : "no",
        c.pass ? "pass" : "FAIL");
}

}  // namespace gnwd
