#pragma once

#include <string>
#include <vector>

#include "gnwd/tensor.hpp"

namespace gnwd {

enum class CodecMode { identity, patch_dct };

CodecMode parse_codec_mode(const std::string& s);
std::string to_string(CodecMode m);

struct CodecSpec {
    CodecMode mode = CodecMode::patch_dct;
    std::size_t patch = 4;
    std::size_t kept = 3;  // latent channels C_z
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 1;

    void validate() const;
    std::size_t latent_height() const { return mode == CodecMode::identity ? height : height / patch; }
    std::size_t latent_width() const { return mode == CodecMode::identity ? width : width / patch; }
    std::size_t latent_channels() const { return mode == CodecMode::identity ? channels : kept; }
    Shape frame_shape() const { return {height, width, channels}; }
    Shape latent_shape() const { return {latent_height(), latent_width(), latent_channels()}; }
};

/// Frame-wise linear codec: per-patch orthonormal 2-D DCT-II keeping the lowest
/// frequencies, or the identity. decode is the adjoint of encode, so
/// decode(encode(.)) is an orthogonal projection.
class FrameCodec {
  public:
    explicit FrameCodec(CodecSpec spec);

    const CodecSpec& spec() const { return spec_; }

    Tensor encode_frame(const Tensor& frame) const;   // [H,W,C] -> [Hz,Wz,Cz]
    Tensor decode_frame(const Tensor& latent) const;  // [Hz,Wz,Cz] -> [H,W,C]

    /// Frame-wise over [L, ...]; an empty tensor maps to an empty tensor.
    Tensor encode_seq(const Tensor& seq) const;
    Tensor decode_seq(const Tensor& seq) const;

    /// (u, v, channel) of each kept coefficient, in latent-channel order.
    struct Frequency {
        std::size_t u, v, channel;
    };
    const std::vector<Frequency>& frequencies() const { return freqs_; }

  private:
    void encode_into(const float* frame, float* latent) const;
    void decode_into(const float* latent, float* frame) const;

    CodecSpec spec_;
    std::vector<Frequency> freqs_;
    std::vector<double> basis_;  // [kept][p*p*C], patch pixel order (i, j, c)
};

}  // namespace gnwd
