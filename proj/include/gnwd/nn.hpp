#pragma once

// Minimal layer kit for the denoiser and alignment networks. Activations are
// HWC row-major; all parameters of a network live in one flat vector so that
// optimizers, checkpoints and finite-difference checks treat them uniformly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gnwd/rng.hpp"
#include "gnwd/tensor.hpp"

namespace gnwd::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

struct ParamEntry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t fan_in = 1;  // 0 marks a bias (initialized to zero)

    std::size_t size() const { return shape_numel(shape); }
};

class ParamLayout {
  public:
    std::size_t add(std::string name, Shape shape, std::size_t fan_in) {
        ParamEntry e{std::move(name), std::move(shape), total_, fan_in};
        total_ += e.size();
        entries_.push_back(std::move(e));
        return entries_.back().offset;
    }
    std::size_t total() const { return total_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

  private:
    std::vector<ParamEntry> entries_;
    std::size_t total_ = 0;
};

/// Fan-in scaled uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights, zeros for biases.
template <class T>
std::vector<T> init_params(const ParamLayout& layout, std::uint64_t seed) {
    std::vector<T> p(layout.total(), T(0));
    Rng rng(seed);
    for (const auto& e : layout.entries()) {
        if (e.fan_in == 0) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
        for (std::size_t i = 0; i < e.size(); ++i) p[e.offset + i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    return p;
}

template <class T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <class T>
inline T silu(T x) {
    return x * sigmoid(x);
}

template <class T>
inline T silu_grad(T x) {
    const T s = sigmoid(x);
    return s * (T(1) + x * (T(1) - s));
}

/// 3x3 same-padded convolution on an H x W grid. Weights [cout][3][3][cin].
template <class T>
struct Conv3x3 {
    std::size_t h = 0, w = 0, cin = 0, cout = 0;
    std::size_t w_off = 0, b_off = 0;

    std::size_t cols_width() const { return 9 * cin; }

    void im2col(const T* x, T* cols) const {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                T* row = cols + (i * w + j) * cols_width();
                for (int di = -1; di <= 1; ++di) {
                    for (int dj = -1; dj <= 1; ++dj) {
                        T* dst = row + static_cast<std::size_t>((di + 1) * 3 + (dj + 1)) * cin;
                        const long ii = static_cast<long>(i) + di;
                        const long jj = static_cast<long>(j) + dj;
                        if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w)) {
                            std::fill(dst, dst + cin, T(0));
                        } else {
                            const T* src = x + (static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * cin;
                            std::copy(src, src + cin, dst);
                        }
                    }
                }
            }
        }
    }

    void col2im_add(const T* cols, T* dx) const {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                const T* row = cols + (i * w + j) * cols_width();
                for (int di = -1; di <= 1; ++di) {
                    for (int dj = -1; dj <= 1; ++dj) {
                        const long ii = static_cast<long>(i) + di;
                        const long jj = static_cast<long>(j) + dj;
                        if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w)) continue;
                        const T* src = row + static_cast<std::size_t>((di + 1) * 3 + (dj + 1)) * cin;
                        T* dst = dx + (static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * cin;
                        for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }

    /// y = conv(x); `cols` receives the im2col buffer for backward.
    void forward(const T* params, const T* x, std::vector<T>& cols, T* y) const {
        cols.resize(h * w * cols_width());
        im2col(x, cols.data());
        CMatMap<T> c(cols.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cols_width()));
        CMatMap<T> wt(params + w_off, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cols_width()));
        CVecMap<T> b(params + b_off, static_cast<Eigen::Index>(cout));
        MatMap<T> out(y, static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cout));
        out.noalias() = c * wt.transpose();
        out.rowwise() += b.transpose();
    }

    /// Accumulates parameter grads; adds the input gradient into dx when non-null.
    void backward(const T* params, const std::vector<T>& cols, const T* dy, T* grads, T* dx) const {
        CMatMap<T> c(cols.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cols_width()));
        CMatMap<T> g(dy, static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cout));
        MatMap<T> dw(grads + w_off, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cols_width()));
        VecMap<T> db(grads + b_off, static_cast<Eigen::Index>(cout));
        dw.noalias() += g.transpose() * c;
        db += g.colwise().sum().transpose();
        if (dx) {
            CMatMap<T> wt(params + w_off, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cols_width()));
            std::vector<T> dcols(h * w * cols_width());
            MatMap<T> dc(dcols.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cols_width()));
            dc.noalias() = g * wt;
            col2im_add(dcols.data(), dx);
        }
    }
};

/// y = W x + b with W [out][in].
template <class T>
struct Linear {
    std::size_t in = 0, out = 0;
    std::size_t w_off = 0, b_off = 0;

    void forward(const T* params, const T* x, T* y) const {
        CMatMap<T> wt(params + w_off, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        VecMap<T>(y, static_cast<Eigen::Index>(out)) =
            wt * CVecMap<T>(x, static_cast<Eigen::Index>(in)) + CVecMap<T>(params + b_off, static_cast<Eigen::Index>(out));
    }

    void backward(const T* params, const T* x, const T* dy, T* grads, T* dx) const {
        CVecMap<T> g(dy, static_cast<Eigen::Index>(out));
        MatMap<T>(grads + w_off, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)).noalias() +=
            g * CVecMap<T>(x, static_cast<Eigen::Index>(in)).transpose();
        VecMap<T>(grads + b_off, static_cast<Eigen::Index>(out)) += g;
        if (dx) {
            CMatMap<T> wt(params + w_off, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
            VecMap<T>(dx, static_cast<Eigen::Index>(in)) += wt.transpose() * g;
        }
    }
};

/// [sin(t f_k), cos(t f_k)] with f_k = 10000^(-k / (dim/2)).
template <class T>
std::vector<T> timestep_embedding(double t, std::size_t dim) {
    std::vector<T> e(dim, T(0));
    const std::size_t half = dim / 2;
    for (std::size_t k = 0; k < half; ++k) {
        const double f = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        e[k] = static_cast<T>(std::sin(t * f));
        e[half + k] = static_cast<T>(std::cos(t * f));
    }
    return e;
}

/// Builds the [H, W, (L_in + L_out) * (C + 1)] network input: context frames then noisy
/// frames along time, each frame followed by its observation-indicator channel.
template <class T>
void assemble_input(const Tensor& z_t, const Tensor& z_cond, std::size_t l_in, std::size_t l_out, std::size_t h,
                    std::size_t w, std::size_t c, std::vector<T>& x) {
    if (z_t.shape() != Shape{l_out, h, w, c} || z_cond.shape() != Shape{l_in, h, w, c}) {
        throw ContractError("network input: expected z_t " + shape_str({l_out, h, w, c}) + " and z_cond " +
                            shape_str({l_in, h, w, c}) + ", got " + shape_str(z_t.shape()) + " and " +
                            shape_str(z_cond.shape()));
    }
    const std::size_t frames = l_in + l_out;
    const std::size_t cin = frames * (c + 1);
    x.assign(h * w * cin, T(0));
    for (std::size_t f = 0; f < frames; ++f) {
        const bool observed = f < l_in;
        const Tensor& src = observed ? z_cond : z_t;
        const std::size_t sf = observed ? f : f - l_in;
        for (std::size_t p = 0; p < h * w; ++p) {
            T* dst = x.data() + p * cin + f * (c + 1);
            const float* s = src.data() + (sf * h * w + p) * c;
            for (std::size_t k = 0; k < c; ++k) dst[k] = static_cast<T>(s[k]);
            dst[c] = observed ? T(1) : T(0);
        }
    }
}

/// Scatters the gradient w.r.t. the assembled input back onto z_t.
template <class T>
Tensor extract_zt_grad(const std::vector<T>& dx, std::size_t l_in, std::size_t l_out, std::size_t h, std::size_t w,
                       std::size_t c) {
    const std::size_t cin = (l_in + l_out) * (c + 1);
    Tensor out({l_out, h, w, c});
    for (std::size_t f = 0; f < l_out; ++f) {
        for (std::size_t p = 0; p < h * w; ++p) {
            const T* s = dx.data() + p * cin + (l_in + f) * (c + 1);
            float* d = out.data() + (f * h * w + p) * c;
            for (std::size_t k = 0; k < c; ++k) d[k] = static_cast<float>(s[k]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

/// Global-norm clip in place; returns the pre-clip norm. clip <= 0 disables.
inline double clip_global_norm(std::vector<double>& grads, double clip);

/// One Adam update. lr == 0 leaves params untouched; so do all-zero grads on a fresh state.
template <class T>
void adam_step(std::vector<T>& params, std::vector<double> grads, double lr, double clip, AdamState& st,
               const AdamConfig& cfg = {}) {
    if (lr < 0.0) throw ContractError("learning rate must be >= 0");
    if (grads.size() != params.size()) throw ContractError("adam: grads/params size mismatch");
    if (st.m.size() != params.size()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
        st.step = 0;
    }
    clip_global_norm(grads, clip);
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        if (lr == 0.0) continue;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        double p = static_cast<double>(params[i]);
        p -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p);
        params[i] = static_cast<T>(p);
    }
}

inline double clip_global_norm(std::vector<double>& grads, double clip) {
    double n2 = 0.0;
    for (double g : grads) n2 += g * g;
    const double norm = std::sqrt(n2);
    if (clip > 0.0 && norm > clip) {
        const double s = clip / norm;
        for (double& g : grads) g *= s;
    }
    return norm;
}

template <class To, class From>
std::vector<To> convert_params(const std::vector<From>& p) {
    return std::vector<To>(p.begin(), p.end());
}

}  // namespace gnwd::nn
