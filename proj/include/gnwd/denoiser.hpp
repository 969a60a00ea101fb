#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gnwd/diffusion.hpp"
#include "gnwd/nn.hpp"
#include "gnwd/tensor.hpp"

namespace gnwd {

struct DenoiserSpec {
    std::size_t l_in = 10;
    std::size_t l_out = 10;
    std::size_t height = 16;  // latent grid
    std::size_t width = 16;
    std::size_t channels = 3;
    std::size_t base_width = 32;
    std::size_t time_dim = 32;

    void validate() const;
    std::size_t in_channels() const { return (l_in + l_out) * (channels + 1); }
    std::size_t out_channels() const { return l_out * channels; }
    Shape z_shape() const { return {l_out, height, width, channels}; }
    Shape cond_shape() const { return {l_in, height, width, channels}; }
};

/// Conditional eps-predictor: input conv, residual block, one 2x average-pool /
/// nearest-upsample level with a skip, second residual block, output conv.
/// Context and noisy latents are stacked along time (folded into channels) with
/// an observation-indicator channel; a projected sinusoidal time embedding is
/// added ahead of each residual block.
template <class T>
class Denoiser : public NoisePredictor {
  public:
    explicit Denoiser(DenoiserSpec spec) : spec_(spec) {
        spec_.validate();
        const std::size_t h = spec_.height, w = spec_.width, c = spec_.base_width, e = spec_.time_dim;
        const auto conv = [&](const std::string& name, std::size_t hh, std::size_t ww, std::size_t cin,
                              std::size_t cout) {
            nn::Conv3x3<T> l{hh, ww, cin, cout, 0, 0};
            l.w_off = layout_.add(name + ".weight", {cout, 3, 3, cin}, 9 * cin);
            l.b_off = layout_.add(name + ".bias", {cout}, 0);
            return l;
        };
        const auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
            nn::Linear<T> l{in, out, 0, 0};
            l.w_off = layout_.add(name + ".weight", {out, in}, in);
            l.b_off = layout_.add(name + ".bias", {out}, 0);
            return l;
        };
        in_ = conv("input", h, w, spec_.in_channels(), c);
        temb1_ = linear("temb1", e, c);
        res1_ = conv("res1", h, w, c, c);
        mid_ = conv("mid", h / 2, w / 2, c, c);
        temb2_ = linear("temb2", e, c);
        res2_ = conv("res2", h, w, c, c);
        out_ = conv("output", h, w, c, spec_.out_channels());
        params_.assign(layout_.total(), T(0));
    }

    const DenoiserSpec& spec() const { return spec_; }
    const nn::ParamLayout& layout() const { return layout_; }
    std::vector<T>& params() { return params_; }
    const std::vector<T>& params() const { return params_; }
    std::size_t num_params() const { return params_.size(); }

    void init(std::uint64_t seed) { params_ = nn::init_params<T>(layout_, seed); }

    struct Cache {
        std::vector<T> x, emb, tp1, tp2;
        std::vector<T> cols_in, h0, a1, cols_r1, h1, d, cols_mid, h2, a3, cols_r3, h3, cols_out, y;
    };

    /// Raw forward in T precision; output laid out [H, W, L_out * C].
    void forward_raw(const Tensor& z_t, int t, const Tensor& z_cond, Cache& k) const {
        const std::size_t h = spec_.height, w = spec_.width, c = spec_.base_width, hw = h * w;
        nn::assemble_input<T>(z_t, z_cond, spec_.l_in, spec_.l_out, h, w, spec_.channels, k.x);
        const T* p = params_.data();
        k.emb = nn::timestep_embedding<T>(static_cast<double>(t), spec_.time_dim);
        k.tp1.resize(c);
        k.tp2.resize(c);
        temb1_.forward(p, k.emb.data(), k.tp1.data());
        temb2_.forward(p, k.emb.data(), k.tp2.data());

        k.h0.resize(hw * c);
        in_.forward(p, k.x.data(), k.cols_in, k.h0.data());

        // residual block 1
        k.a1.resize(hw * c);
        std::vector<T> s(hw * c);
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t j = 0; j < c; ++j) {
                k.a1[q * c + j] = k.h0[q * c + j] + k.tp1[j];
                s[q * c + j] = nn::silu(k.a1[q * c + j]);
            }
        }
        k.h1.resize(hw * c);
        res1_.forward(p, s.data(), k.cols_r1, k.h1.data());
        for (std::size_t i = 0; i < hw * c; ++i) k.h1[i] += k.h0[i];

        // down / up with skip
        const std::size_t h2 = h / 2, w2 = w / 2;
        k.d.assign(h2 * w2 * c, T(0));
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                T* dst = k.d.data() + ((i / 2) * w2 + j / 2) * c;
                const T* src = k.h1.data() + (i * w + j) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += T(0.25) * src[ch];
            }
        }
        std::vector<T> sd(k.d.size());
        for (std::size_t i = 0; i < sd.size(); ++i) sd[i] = nn::silu(k.d[i]);
        std::vector<T> m(h2 * w2 * c);
        mid_.forward(p, sd.data(), k.cols_mid, m.data());
        k.h2 = k.h1;
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                T* dst = k.h2.data() + (i * w + j) * c;
                const T* src = m.data() + ((i / 2) * w2 + j / 2) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
        }

        // residual block 2
        k.a3.resize(hw * c);
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t j = 0; j < c; ++j) {
                k.a3[q * c + j] = k.h2[q * c + j] + k.tp2[j];
                s[q * c + j] = nn::silu(k.a3[q * c + j]);
            }
        }
        k.h3.resize(hw * c);
        res2_.forward(p, s.data(), k.cols_r3, k.h3.data());
        for (std::size_t i = 0; i < hw * c; ++i) k.h3[i] += k.h2[i];

        for (std::size_t i = 0; i < hw * c; ++i) s[i] = nn::silu(k.h3[i]);
        k.y.resize(hw * spec_.out_channels());
        out_.forward(p, s.data(), k.cols_out, k.y.data());
    }

    /// Backward from dy ([H, W, L_out * C]); accumulates into grads (may be null) and dx (may be null).
    void backward_raw(const Cache& k, const std::vector<T>& dy, T* grads, std::vector<T>* dx) const {
        const std::size_t h = spec_.height, w = spec_.width, c = spec_.base_width, hw = h * w;
        const std::size_t h2 = h / 2, w2 = w / 2;
        const T* p = params_.data();
        std::vector<T> scratch;
        if (!grads) {
            scratch.assign(params_.size(), T(0));
            grads = scratch.data();
        }

        std::vector<T> ds(hw * c, T(0));
        out_.backward(p, k.cols_out, dy.data(), grads, ds.data());
        std::vector<T> dh2(hw * c);
        for (std::size_t i = 0; i < hw * c; ++i) dh2[i] = ds[i] * nn::silu_grad(k.h3[i]);  // = dh3

        // residual block 2
        std::fill(ds.begin(), ds.end(), T(0));
        res2_.backward(p, k.cols_r3, dh2.data(), grads, ds.data());
        std::vector<T> dtp(c, T(0));
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t j = 0; j < c; ++j) {
                const T da = ds[q * c + j] * nn::silu_grad(k.a3[q * c + j]);
                dh2[q * c + j] += da;
                dtp[j] += da;
            }
        }
        temb2_.backward(p, k.emb.data(), dtp.data(), grads, nullptr);

        // down / up
        std::vector<T> dh1 = dh2;
        std::vector<T> dm(h2 * w2 * c, T(0));
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                T* dst = dm.data() + ((i / 2) * w2 + j / 2) * c;
                const T* src = dh2.data() + (i * w + j) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
        }
        std::vector<T> dsd(h2 * w2 * c, T(0));
        mid_.backward(p, k.cols_mid, dm.data(), grads, dsd.data());
        for (std::size_t i = 0; i < dsd.size(); ++i) dsd[i] *= nn::silu_grad(k.d[i]);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                T* dst = dh1.data() + (i * w + j) * c;
                const T* src = dsd.data() + ((i / 2) * w2 + j / 2) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += T(0.25) * src[ch];
            }
        }

        // residual block 1
        std::fill(ds.begin(), ds.end(), T(0));
        res1_.backward(p, k.cols_r1, dh1.data(), grads, ds.data());
        std::vector<T>& dh0 = dh1;
        std::fill(dtp.begin(), dtp.end(), T(0));
        for (std::size_t q = 0; q < hw; ++q) {
            for (std::size_t j = 0; j < c; ++j) {
                const T da = ds[q * c + j] * nn::silu_grad(k.a1[q * c + j]);
                dh0[q * c + j] += da;
                dtp[j] += da;
            }
        }
        temb1_.backward(p, k.emb.data(), dtp.data(), grads, nullptr);

        if (dx) dx->assign(k.x.size(), T(0));
        in_.backward(p, k.cols_in, dh0.data(), grads, dx ? dx->data() : nullptr);
    }

    Tensor to_latent(const std::vector<T>& y) const {
        // [H, W, L_out * C] -> [L_out, H, W, C]
        const std::size_t h = spec_.height, w = spec_.width, c = spec_.channels, lo = spec_.l_out;
        Tensor out(spec_.z_shape());
        for (std::size_t f = 0; f < lo; ++f) {
            for (std::size_t q = 0; q < h * w; ++q) {
                for (std::size_t k = 0; k < c; ++k) out[(f * h * w + q) * c + k] = static_cast<float>(y[q * lo * c + f * c + k]);
            }
        }
        return out;
    }

    std::vector<T> from_latent(const Tensor& z) const {
        const std::size_t h = spec_.height, w = spec_.width, c = spec_.channels, lo = spec_.l_out;
        if (z.shape() != spec_.z_shape()) throw ContractError("denoiser: bad output-gradient shape");
        std::vector<T> y(h * w * lo * c);
        for (std::size_t f = 0; f < lo; ++f) {
            for (std::size_t q = 0; q < h * w; ++q) {
                for (std::size_t k = 0; k < c; ++k) y[q * lo * c + f * c + k] = static_cast<T>(z[(f * h * w + q) * c + k]);
            }
        }
        return y;
    }

    Tensor predict(const Tensor& z_t, int t, const Tensor& z_cond) const override {
        Cache k;
        forward_raw(z_t, t, z_cond, k);
        return to_latent(k.y);
    }

    Tensor predict_vjp(const Tensor& z_t, int t, const Tensor& z_cond, const Tensor& cotangent) const override {
        Cache k;
        forward_raw(z_t, t, z_cond, k);
        std::vector<T> dx;
        backward_raw(k, from_latent(cotangent), nullptr, &dx);
        return nn::extract_zt_grad(dx, spec_.l_in, spec_.l_out, spec_.height, spec_.width, spec_.channels);
    }

    /// Mean over the batch of the per-element mean squared eps residual, with exact grads.
    LossAndGrads loss_and_grads(const DiffusionBatch& b) const {
        const std::size_t n = b.z_t.size();
        if (n == 0 || b.eps.size() != n || b.z_cond.size() != n || b.t.size() != n) {
            throw ContractError("denoiser loss: inconsistent batch");
        }
        std::vector<T> g(params_.size(), T(0));
        double loss = 0.0;
        Cache k;
        for (std::size_t i = 0; i < n; ++i) {
            forward_raw(b.z_t[i], b.t[i], b.z_cond[i], k);
            const std::vector<T> target = from_latent(b.eps[i]);
            const double scale = 1.0 / static_cast<double>(target.size());
            std::vector<T> dy(target.size());
            double li = 0.0;
            for (std::size_t q = 0; q < target.size(); ++q) {
                const double r = static_cast<double>(k.y[q]) - static_cast<double>(target[q]);
                li += r * r;
                dy[q] = static_cast<T>(2.0 * r * scale / static_cast<double>(n));
            }
            loss += li * scale;
            backward_raw(k, dy, g.data(), nullptr);
        }
        return {loss / static_cast<double>(n), std::vector<double>(g.begin(), g.end())};
    }

  private:
    DenoiserSpec spec_;
    nn::ParamLayout layout_;
    std::vector<T> params_;
    nn::Conv3x3<T> in_, res1_, mid_, res2_, out_;
    nn::Linear<T> temb1_, temb2_;
};

/// Checkpoint: `<path>` holds the parameter tensors (container records, layout order);
/// `<path>.json` holds the spec, parameter names and training bookkeeping.
struct CheckpointInfo {
    std::string kind;
    std::uint64_t step = 0;
    std::string extra;  // serialized JSON object, module specific
};

void save_denoiser(const std::filesystem::path& path, const Denoiser<float>& net, const CheckpointInfo& info);
Denoiser<float> load_denoiser(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

/// Shared helpers for flat-parameter checkpoints.
void save_param_tensors(const std::filesystem::path& path, const nn::ParamLayout& layout,
                        const std::vector<float>& params);
std::vector<float> load_param_tensors(const std::filesystem::path& path, const nn::ParamLayout& layout);

}  // namespace gnwd
