#pragma once

// Knowledge alignment: constraint functionals, the alignment network that
// estimates them from noisy latents, the guided mean shift, and the Gaussian
// intensity forecaster used to set anticipated-intensity targets.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gnwd/codec.hpp"
#include "gnwd/denoiser.hpp"
#include "gnwd/diffusion.hpp"
#include "gnwd/nbody.hpp"
#include "gnwd/nn.hpp"

namespace gnwd {

// ---------------------------------------------------------------------------
// Alignment network
// ---------------------------------------------------------------------------

struct AlignmentSpec {
    std::size_t l_in = 10;
    std::size_t l_out = 10;
    std::size_t height = 16;  // latent grid
    std::size_t width = 16;
    std::size_t channels = 3;
    std::size_t base_width = 32;
    std::size_t time_dim = 32;
    std::size_t heads = 4;
    std::size_t hidden = 64;
    std::size_t out_dim = 1;

    void validate() const;
    std::size_t in_channels() const { return (l_in + l_out) * (channels + 1); }
    Shape z_shape() const { return {l_out, height, width, channels}; }
};

/// Maps (z_t, t, z_cond) to R^d: two conv layers (the second residual) over the
/// time-stacked latents, then multi-head softmax-attention pooling plus a mean
/// pool, then a two-layer head. Outputs are in normalized units.
template <class T>
class AlignmentNet {
  public:
    explicit AlignmentNet(AlignmentSpec spec) : spec_(spec) {
        spec_.validate();
        const std::size_t h = spec_.height, w = spec_.width, c = spec_.base_width;
        in_ = {h, w, spec_.in_channels(), c, 0, 0};
        in_.w_off = layout_.add("input.weight", {c, 3, 3, spec_.in_channels()}, 9 * spec_.in_channels());
        in_.b_off = layout_.add("input.bias", {c}, 0);
        temb_ = {spec_.time_dim, c, 0, 0};
        temb_.w_off = layout_.add("temb.weight", {c, spec_.time_dim}, spec_.time_dim);
        temb_.b_off = layout_.add("temb.bias", {c}, 0);
        conv1_ = {h, w, c, c, 0, 0};
        conv1_.w_off = layout_.add("conv1.weight", {c, 3, 3, c}, 9 * c);
        conv1_.b_off = layout_.add("conv1.bias", {c}, 0);
        score_ = {c, spec_.heads, 0, 0};
        score_.w_off = layout_.add("score.weight", {spec_.heads, c}, c);
        score_.b_off = layout_.add("score.bias", {spec_.heads}, 0);
        const std::size_t feat = (spec_.heads + 1) * c;
        fc1_ = {feat, spec_.hidden, 0, 0};
        fc1_.w_off = layout_.add("fc1.weight", {spec_.hidden, feat}, feat);
        fc1_.b_off = layout_.add("fc1.bias", {spec_.hidden}, 0);
        fc2_ = {spec_.hidden, spec_.out_dim, 0, 0};
        fc2_.w_off = layout_.add("fc2.weight", {spec_.out_dim, spec_.hidden}, spec_.hidden);
        fc2_.b_off = layout_.add("fc2.bias", {spec_.out_dim}, 0);
        params_.assign(layout_.total(), T(0));
    }

    const AlignmentSpec& spec() const { return spec_; }
    const nn::ParamLayout& layout() const { return layout_; }
    std::vector<T>& params() { return params_; }
    const std::vector<T>& params() const { return params_; }
    void init(std::uint64_t seed) { params_ = nn::init_params<T>(layout_, seed); }

    struct Cache {
        std::vector<T> x, emb, tp, cols_in, h0pre, h0, cols1, h1pre, h1, scores, alpha, feat, hidpre, hid, out;
    };

    void forward_raw(const Tensor& z_t, int t, const Tensor& z_cond, Cache& k) const {
        const std::size_t h = spec_.height, w = spec_.width, c = spec_.base_width, hw = h * w, nh = spec_.heads;
        nn::assemble_input<T>(z_t, z_cond, spec_.l_in, spec_.l_out, h, w, spec_.channels, k.x);
        const T* p = params_.data();
        k.emb = nn::timestep_embedding<T>(static_cast<double>(t), spec_.time_dim);
        k.tp.resize(c);
        temb_.forward(p, k.emb.data(), k.tp.data());
        k.h0pre.resize(hw * c);
        in_.forward(p, k.x.data(), k.cols_in, k.h0pre.data());
        k.h0.resize(hw * c);
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t j = 0; j < c; ++j) {
                k.h0pre[q * c + j] += k.tp[j];
                k.h0[q * c + j] = nn::silu(k.h0pre[q * c + j]);
            }
        }
        k.h1pre.resize(hw * c);
        conv1_.forward(p, k.h0.data(), k.cols1, k.h1pre.data());
        k.h1.resize(hw * c);
        for (std::size_t i = 0; i < hw * c; ++i) k.h1[i] = k.h0[i] + nn::silu(k.h1pre[i]);

        // attention pooling, one softmax over positions per head
        k.scores.resize(hw * nh);
        for (std::size_t q = 0; q < hw; ++q) score_.forward(p, k.h1.data() + q * c, k.scores.data() + q * nh);
        k.alpha.resize(nh * hw);
        k.feat.assign((nh + 1) * c, T(0));
        for (std::size_t hd = 0; hd < nh; ++hd) {
            T mx = k.scores[hd];
            for (std::size_t q = 1; q < hw; ++q) mx = std::max(mx, k.scores[q * nh + hd]);
            T z = 0;
            for (std::size_t q = 0; q < hw; ++q) {
                const T e = std::exp(k.scores[q * nh + hd] - mx);
                k.alpha[hd * hw + q] = e;
                z += e;
            }
            for (std::size_t q = 0; q < hw; ++q) {
                const T a = k.alpha[hd * hw + q] /= z;
                for (std::size_t j = 0; j < c; ++j) k.feat[hd * c + j] += a * k.h1[q * c + j];
            }
        }
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t j = 0; j < c; ++j) k.feat[nh * c + j] += k.h1[q * c + j] / static_cast<T>(hw);
        }
        k.hidpre.resize(spec_.hidden);
        fc1_.forward(p, k.feat.data(), k.hidpre.data());
        k.hid.resize(spec_.hidden);
        for (std::size_t i = 0; i < spec_.hidden; ++i) k.hid[i] = nn::silu(k.hidpre[i]);
        k.out.resize(spec_.out_dim);
        fc2_.forward(p, k.hid.data(), k.out.data());
    }

    void backward_raw(const Cache& k, std::span<const T> dout, T* grads, std::vector<T>* dx) const {
        const std::size_t h = spec_.height, w = spec_.width, c = spec_.base_width, hw = h * w, nh = spec_.heads;
        const T* p = params_.data();
        std::vector<T> scratch;
        if (!grads) {
            scratch.assign(params_.size(), T(0));
            grads = scratch.data();
        }
        std::vector<T> dhid(spec_.hidden, T(0));
        fc2_.backward(p, k.hid.data(), dout.data(), grads, dhid.data());
        for (std::size_t i = 0; i < spec_.hidden; ++i) dhid[i] *= nn::silu_grad(k.hidpre[i]);
        std::vector<T> dfeat(k.feat.size(), T(0));
        fc1_.backward(p, k.feat.data(), dhid.data(), grads, dfeat.data());

        std::vector<T> dh1(hw * c, T(0));
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t j = 0; j < c; ++j) dh1[q * c + j] += dfeat[nh * c + j] / static_cast<T>(hw);
        }
        std::vector<T> dscores(hw * nh, T(0));
        for (std::size_t hd = 0; hd < nh; ++hd) {
            const T* dpool = dfeat.data() + hd * c;
            std::vector<T> dalpha(hw);
            T weighted = 0;
            for (std::size_t q = 0; q < hw; ++q) {
                const T a = k.alpha[hd * hw + q];
                T da = 0;
                for (std::size_t j = 0; j < c; ++j) {
                    dh1[q * c + j] += a * dpool[j];
                    da += dpool[j] * k.h1[q * c + j];
                }
                dalpha[q] = da;
                weighted += a * da;
            }
            for (std::size_t q = 0; q < hw; ++q) dscores[q * nh + hd] = k.alpha[hd * hw + q] * (dalpha[q] - weighted);
        }
        for (std::size_t q = 0; q < hw; ++q) {
            score_.backward(p, k.h1.data() + q * c, dscores.data() + q * nh, grads, dh1.data() + q * c);
        }

        // h1 = h0 + silu(h1pre)
        std::vector<T> dh0 = dh1;
        std::vector<T> dpre(hw * c);
        for (std::size_t i = 0; i < hw * c; ++i) dpre[i] = dh1[i] * nn::silu_grad(k.h1pre[i]);
        conv1_.backward(p, k.cols1, dpre.data(), grads, dh0.data());
        std::vector<T> dtp(c, T(0));
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t j = 0; j < c; ++j) {
                T& v = dh0[q * c + j];
                v *= nn::silu_grad(k.h0pre[q * c + j]);
                dtp[j] += v;
            }
        }
        temb_.backward(p, k.emb.data(), dtp.data(), grads, nullptr);
        if (dx) dx->assign(k.x.size(), T(0));
        in_.backward(p, k.cols_in, dh0.data(), grads, dx ? dx->data() : nullptr);
    }

    std::vector<double> evaluate(const Tensor& z_t, int t, const Tensor& z_cond) const {
        Cache k;
        forward_raw(z_t, t, z_cond, k);
        return {k.out.begin(), k.out.end()};
    }

    /// Gradient of <cot, U(z_t)> with respect to z_t.
    Tensor input_vjp(const Tensor& z_t, int t, const Tensor& z_cond, std::span<const double> cot,
                     std::vector<double>* value = nullptr) const {
        Cache k;
        forward_raw(z_t, t, z_cond, k);
        if (value) value->assign(k.out.begin(), k.out.end());
        std::vector<T> d(cot.begin(), cot.end());
        std::vector<T> dx;
        backward_raw(k, d, nullptr, &dx);
        return nn::extract_zt_grad(dx, spec_.l_in, spec_.l_out, spec_.height, spec_.width, spec_.channels);
    }

  private:
    AlignmentSpec spec_;
    nn::ParamLayout layout_;
    std::vector<T> params_;
    nn::Conv3x3<T> in_, conv1_;
    nn::Linear<T> temb_, score_, fc1_, fc2_;
};

/// Affine map between raw constraint values and network units.
struct Normalizer {
    double mean = 0.0;
    double scale = 1.0;
    double to_net(double v) const { return (v - mean) / scale; }
    double from_net(double v) const { return v * scale + mean; }
};

/// One regression batch for the alignment network: latent inputs and raw targets F.
struct AlignmentBatch {
    std::vector<Tensor> z_t;
    std::vector<Tensor> z_cond;
    std::vector<int> t;
    std::vector<std::vector<double>> target;
};

/// Noises encoded targets as in training: t ~ U{0..T}, z_t ~ q(z_t | z_0). fixed_t >= 0
/// pins the step (fixed_t = 0 gives clean latents, used for the energy detector).
AlignmentBatch make_alignment_batch(std::span<const Tensor> z0, std::span<const Tensor> z_cond,
                                    std::span<const std::vector<double>> targets, const NoiseSchedule& sched, Rng& rng,
                                    int fixed_t = -1);

/// Frame symmetry s in [0, 8) applied to every frame of [L,H,W,C]: bit 0 flips rows,
/// bit 1 flips columns, bit 2 transposes (square frames only). Energy and intensity are invariant.
Tensor symmetry_transform(const Tensor& seq, unsigned s);
/// Frames of [L, ...] in reverse order.
Tensor reverse_frames(const Tensor& seq);

/// Mean over the batch of ||U(z_t, t, z_cond) - F|| (L2, normalized units) with exact grads.
template <class T>
LossAndGrads alignment_loss_and_grads(const AlignmentNet<T>& net, const Normalizer& norm, const AlignmentBatch& b) {
    const std::size_t n = b.z_t.size();
    if (n == 0 || b.z_cond.size() != n || b.t.size() != n || b.target.size() != n) {
        throw ContractError("alignment loss: inconsistent batch");
    }
    std::vector<T> g(net.params().size(), T(0));
    double loss = 0.0;
    typename AlignmentNet<T>::Cache k;
    for (std::size_t i = 0; i < n; ++i) {
        net.forward_raw(b.z_t[i], b.t[i], b.z_cond[i], k);
        if (b.target[i].size() != k.out.size()) throw ContractError("alignment loss: target dim mismatch");
        std::vector<double> r(k.out.size());
        double n2 = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            r[j] = static_cast<double>(k.out[j]) - norm.to_net(b.target[i][j]);
            n2 += r[j] * r[j];
        }
        const double nrm = std::sqrt(n2);
        loss += nrm;
        if (nrm == 0.0) continue;  // zero subgradient at the kink
        std::vector<T> d(r.size());
        for (std::size_t j = 0; j < r.size(); ++j) d[j] = static_cast<T>(r[j] / nrm / static_cast<double>(n));
        net.backward_raw(k, d, g.data(), nullptr);
    }
    return {loss / static_cast<double>(n), std::vector<double>(g.begin(), g.end())};
}

/// One step of the alignment training loop: sample t and noise, then regress U onto F(x, y).
template <class T>
LossAndGrads train_alignment_step(const AlignmentNet<T>& net, const Normalizer& norm, std::span<const Tensor> z0,
                                  std::span<const Tensor> z_cond, std::span<const std::vector<double>> targets,
                                  const NoiseSchedule& sched, Rng& rng, int fixed_t = -1) {
    return alignment_loss_and_grads(net, norm, make_alignment_batch(z0, z_cond, targets, sched, rng, fixed_t));
}

void save_alignment(const std::filesystem::path& path, const AlignmentNet<float>& net, const Normalizer& norm,
                    const CheckpointInfo& info);
AlignmentNet<float> load_alignment(const std::filesystem::path& path, Normalizer* norm, CheckpointInfo* info = nullptr);

// ---------------------------------------------------------------------------
// Constraints
// ---------------------------------------------------------------------------

enum class ConstraintKind { energy_sequence, mean_intensity, linear_probe };
ConstraintKind parse_constraint_kind(const std::string& s);
std::string to_string(ConstraintKind k);

/// Frames -> per-frame total energy, using clean-latent alignment-network weights.
class EnergyDetector {
  public:
    EnergyDetector(AlignmentNet<float> net, Normalizer norm, const FrameCodec& codec)
        : net_(std::move(net)), norm_(norm), codec_(codec) {}

    /// x_hat [L_out, H, W, C], y [L_in, H, W, C] -> L_out energies.
    std::vector<double> energies(const Tensor& x_hat, const Tensor& y) const;
    /// d <cot, energies> / d x_hat.
    Tensor pullback(const Tensor& x_hat, const Tensor& y, std::span<const double> cot) const;

    const AlignmentNet<float>& net() const { return net_; }
    const Normalizer& normalizer() const { return norm_; }

  private:
    AlignmentNet<float> net_;
    Normalizer norm_;
    FrameCodec codec_;
};

struct ConstraintSpec {
    ConstraintKind kind = ConstraintKind::mean_intensity;
    Tensor probe;               // linear-probe direction, shaped like x_hat
    double offset = 0.0;        // linear-probe offset
    std::size_t l_out = 1;      // energy-sequence output length
    std::shared_ptr<const EnergyDetector> detector;

    std::size_t dim() const { return kind == ConstraintKind::energy_sequence ? l_out : 1; }
};

/// F(x_hat, y).
std::vector<double> constraint_value(const ConstraintSpec& spec, const Tensor& x_hat, const Tensor& y);

/// d <cot, F(x_hat, y)> / d x_hat.
Tensor constraint_pullback(const ConstraintSpec& spec, const Tensor& x_hat, const Tensor& y,
                           std::span<const double> cot);

/// Ground-truth energy sequence of the target frames from the simulator record:
/// F = [E(x^1) .. E(x^L_out)].
std::vector<double> energy_sequence_from_trajectory(const Trajectory& traj, std::size_t l_in, std::size_t l_out);

/// F_0 = [E(y^L_in), ..., E(y^L_in)].
std::vector<double> energy_reference(const Trajectory& traj, std::size_t l_in, std::size_t l_out);

/// ||F - F_0||_2.
double violation(std::span<const double> f, std::span<const double> f0);

// ---------------------------------------------------------------------------
// Guidance
// ---------------------------------------------------------------------------

struct GuidanceConfig {
    double lambda = 0.0;
    double clip = 0.0;  // max norm of g; <= 0 disables

    void validate() const {
        if (!(lambda >= 0.0)) throw ContractError("lambda_F must be >= 0");
    }
};

/// Value of F at a latent, plus the pullback of a cotangent in R^d to latent space.
struct Linearization {
    std::vector<double> value;
    std::function<Tensor(std::span<const double>)> pullback;
};

class ConstraintEstimator {
  public:
    virtual ~ConstraintEstimator() = default;
    virtual std::size_t dim() const = 0;
    virtual Linearization linearize(const Tensor& z, int t, const Tensor& z_cond) const = 0;
};

/// Learned path: F ~ U_phi(z_t, t, z_cond).
template <class T>
class AlignmentEstimatorT : public ConstraintEstimator {
  public:
    AlignmentEstimatorT(const AlignmentNet<T>& net, Normalizer norm) : net_(net), norm_(norm) {}
    std::size_t dim() const override { return net_.spec().out_dim; }
    Linearization linearize(const Tensor& z, int t, const Tensor& z_cond) const override {
        Linearization lin;
        lin.value = net_.evaluate(z, t, z_cond);
        for (double& v : lin.value) v = norm_.from_net(v);
        lin.pullback = [this, z, t, z_cond](std::span<const double> cot) {
            std::vector<double> c(cot.begin(), cot.end());
            for (double& v : c) v *= norm_.scale;
            return net_.input_vjp(z, t, z_cond, c);
        };
        return lin;
    }

  private:
    const AlignmentNet<T>& net_;
    Normalizer norm_;
};
using AlignmentEstimator = AlignmentEstimatorT<float>;

/// Analytic path: F applied to the decoded one-step estimate
/// z0_hat = (z_t - sqrt(1 - abar_t) eps_hat(z_t)) / sqrt(abar_t), differentiated through eps_hat.
/// Without a codec the latent is the data space; the context passed to F is decode(z_cond).
class OracleEstimator : public ConstraintEstimator {
  public:
    OracleEstimator(const NoisePredictor& model, const NoiseSchedule& sched, const FrameCodec* codec,
                    ConstraintSpec spec)
        : model_(model), sched_(sched), codec_(codec), spec_(std::move(spec)) {}
    std::size_t dim() const override { return spec_.dim(); }
    Linearization linearize(const Tensor& z, int t, const Tensor& z_cond) const override;

  private:
    const NoisePredictor& model_;
    const NoiseSchedule& sched_;
    const FrameCodec* codec_;
    ConstraintSpec spec_;
};

/// g = -lambda * grad_z ||F(z) - F_0|| at z (the transition mean), zero at zero violation, optionally clipped.
Tensor guidance_gradient(const ConstraintEstimator& est, const Tensor& z, int t, const Tensor& z_cond,
                         std::span<const double> f0, const GuidanceConfig& cfg);

/// mean' = mean + var * g; var unchanged.
TransitionMoments apply_guidance(const TransitionMoments& m, const Tensor& g);

/// Sampler hook evaluating guidance at the transition mean for the incoming step.
GuidanceHook make_guidance_hook(const ConstraintEstimator& est, std::vector<double> f0, GuidanceConfig cfg);

// ---------------------------------------------------------------------------
// Intensity forecaster
// ---------------------------------------------------------------------------

/// Mean pixel value per frame of an [L, H, W, C] sequence.
std::vector<double> frame_intensities(const Tensor& seq);
double mean_intensity(const Tensor& seq);

/// Gaussian forecaster N(mu(features), sigma) for the mean future intensity, with mu
/// linear in the per-frame context intensities.
struct IntensityForecaster {
    std::vector<double> weights;     // [intercept, w_1 .. w_L_in]
    std::vector<double> std_errors;  // same layout; empty after a ridge fallback
    double sigma = 0.0;
    bool ridge_fallback = false;

    double mean(std::span<const double> features) const;
    double mean(const Tensor& y) const { return mean(frame_intensities(y)); }
};

/// Least squares of I(x) on [1, I(y^1) .. I(y^L_in)]; sigma is the residual standard deviation
/// (dof-corrected when n > p). A rank-deficient design falls back to ridge on the slopes.
IntensityForecaster fit_intensity_forecaster(std::span<const std::vector<double>> features,
                                             std::span<const double> targets);
IntensityForecaster fit_intensity_forecaster(std::span<const SequenceSample> corpus);

/// F_0 = mu(y) + n * sigma.
double anticipated_target(const IntensityForecaster& f, const Tensor& y, double n_sigma);

}  // namespace gnwd
