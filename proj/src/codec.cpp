#include "gnwd/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

namespace gnwd {

CodecMode parse_codec_mode(const std::string& s) {
    if (s == "identity") return CodecMode::identity;
    if (s == "patch" || s == "patch-orthonormal" || s == "patch_dct") return CodecMode::patch_dct;
    throw ContractError("unknown codec mode: " + s);
}

std::string to_string(CodecMode m) { return m == CodecMode::identity ? "identity" : "patch-orthonormal"; }

void CodecSpec::validate() const {
    if (height == 0 || width == 0 || channels == 0) throw ContractError("codec frame dims must be positive");
    if (mode == CodecMode::identity) return;
    if (patch == 0 || height % patch || width % patch) {
        throw ContractError("codec: H and W must be divisible by the patch size");
    }
    if (kept < 1 || kept > patch * patch * channels) throw ContractError("codec: kept channels out of range");
}

FrameCodec::FrameCodec(CodecSpec spec) : spec_(spec) {
    spec_.validate();
    if (spec_.mode == CodecMode::identity) return;
    const std::size_t p = spec_.patch;
    const std::size_t c = spec_.channels;
    std::vector<Frequency> all;
    for (std::size_t u = 0; u < p; ++u) {
        for (std::size_t v = 0; v < p; ++v) {
            for (std::size_t ch = 0; ch < c; ++ch) all.push_back({u, v, ch});
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const Frequency& a, const Frequency& b) {
        return std::make_tuple(a.u + a.v, a.u, a.channel) < std::make_tuple(b.u + b.v, b.u, b.channel);
    });
    freqs_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec_.kept));

    const auto dct = [p](std::size_t k, std::size_t i) {
        const double scale = k == 0 ? std::sqrt(1.0 / p) : std::sqrt(2.0 / p);
        return scale * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * p));
    };
    basis_.assign(spec_.kept * p * p * c, 0.0);
    for (std::size_t k = 0; k < spec_.kept; ++k) {
        const auto& f = freqs_[k];
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < p; ++j) {
                basis_[((k * p + i) * p + j) * c + f.channel] = dct(f.u, i) * dct(f.v, j);
            }
        }
    }
}

void FrameCodec::encode_into(const float* frame, float* latent) const {
    const std::size_t p = spec_.patch, c = spec_.channels, w = spec_.width;
    const std::size_t hz = spec_.latent_height(), wz = spec_.latent_width(), cz = spec_.kept;
    const std::size_t patch_len = p * p * c;
    for (std::size_t bi = 0; bi < hz; ++bi) {
        for (std::size_t bj = 0; bj < wz; ++bj) {
            for (std::size_t k = 0; k < cz; ++k) {
                const double* b = basis_.data() + k * patch_len;
                double acc = 0.0;
                for (std::size_t i = 0; i < p; ++i) {
                    const float* row = frame + ((bi * p + i) * w + bj * p) * c;
                    for (std::size_t jc = 0; jc < p * c; ++jc) acc += b[i * p * c + jc] * row[jc];
                }
                latent[(bi * wz + bj) * cz + k] = static_cast<float>(acc);
            }
        }
    }
}

void FrameCodec::decode_into(const float* latent, float* frame) const {
    const std::size_t p = spec_.patch, c = spec_.channels, w = spec_.width;
    const std::size_t hz = spec_.latent_height(), wz = spec_.latent_width(), cz = spec_.kept;
    const std::size_t patch_len = p * p * c;
    std::vector<double> acc(patch_len);
    for (std::size_t bi = 0; bi < hz; ++bi) {
        for (std::size_t bj = 0; bj < wz; ++bj) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t k = 0; k < cz; ++k) {
                const double z = latent[(bi * wz + bj) * cz + k];
                const double* b = basis_.data() + k * patch_len;
                for (std::size_t q = 0; q < patch_len; ++q) acc[q] += z * b[q];
            }
            for (std::size_t i = 0; i < p; ++i) {
                float* row = frame + ((bi * p + i) * w + bj * p) * c;
                for (std::size_t jc = 0; jc < p * c; ++jc) row[jc] = static_cast<float>(acc[i * p * c + jc]);
            }
        }
    }
}

Tensor FrameCodec::encode_frame(const Tensor& frame) const {
    if (frame.shape() != spec_.frame_shape()) {
        throw ContractError("encode: expected frame " + shape_str(spec_.frame_shape()) + ", got " +
                            shape_str(frame.shape()));
    }
    if (spec_.mode == CodecMode::identity) return frame;
    Tensor out(spec_.latent_shape());
    encode_into(frame.data(), out.data());
    return out;
}

Tensor FrameCodec::decode_frame(const Tensor& latent) const {
    if (latent.shape() != spec_.latent_shape()) {
        throw ContractError("decode: expected latent " + shape_str(spec_.latent_shape()) + ", got " +
                            shape_str(latent.shape()));
    }
    if (spec_.mode == CodecMode::identity) return latent;
    Tensor out(spec_.frame_shape());
    decode_into(latent.data(), out.data());
    return out;
}

Tensor FrameCodec::encode_seq(const Tensor& seq) const {
    if (seq.empty()) return {};
    const Shape fs = spec_.frame_shape();
    if (seq.rank() != 4 || !std::equal(fs.begin(), fs.end(), seq.shape().begin() + 1)) {
        throw ContractError("encode_seq: expected [L," + shape_str(fs).substr(1) + ", got " + shape_str(seq.shape()));
    }
    if (spec_.mode == CodecMode::identity) return seq;
    const std::size_t len = seq.dim(0);
    const Shape ls = spec_.latent_shape();
    Tensor out({len, ls[0], ls[1], ls[2]});
    const std::size_t fn = shape_numel(fs), ln = shape_numel(ls);
    for (std::size_t l = 0; l < len; ++l) encode_into(seq.data() + l * fn, out.data() + l * ln);
    return out;
}

Tensor FrameCodec::decode_seq(const Tensor& seq) const {
    if (seq.empty()) return {};
    const Shape ls = spec_.latent_shape();
    if (seq.rank() != 4 || !std::equal(ls.begin(), ls.end(), seq.shape().begin() + 1)) {
        throw ContractError("decode_seq: expected [L," + shape_str(ls).substr(1) + ", got " + shape_str(seq.shape()));
    }
    if (spec_.mode == CodecMode::identity) return seq;
    const std::size_t len = seq.dim(0);
    const Shape fs = spec_.frame_shape();
    Tensor out({len, fs[0], fs[1], fs[2]});
    const std::size_t fn = shape_numel(fs), ln = shape_numel(ls);
    for (std::size_t l = 0; l < len; ++l) decode_into(seq.data() + l * ln, out.data() + l * fn);
    return out;
}

}  // namespace gnwd
