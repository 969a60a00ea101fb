#include "doctest.h"

#include <cmath>
#include <numbers>

#include "gnwd/codec.hpp"
#include "gnwd/rng.hpp"

using namespace gnwd;

namespace {

Tensor random_tensor(const Shape& s, Rng& rng) {
    Tensor t(s);
    for (auto& v : t.span()) v = static_cast<float>(rng.uniform());
    return t;
}

CodecSpec spec(std::size_t h, std::size_t w, std::size_t p, std::size_t kept, std::size_t c = 1) {
    CodecSpec s;
    s.height = h;
    s.width = w;
    s.patch = p;
    s.kept = kept;
    s.channels = c;
    return s;
}

}  // namespace

TEST_CASE("coefficients match a direct 2-D DCT-II of each patch") {
    const FrameCodec codec(spec(8, 12, 4, 6));
    Rng rng(1);
    const Tensor x = random_tensor({8, 12, 1}, rng);
    const Tensor z = codec.encode_frame(x);
    CHECK(z.shape() == Shape{2, 3, 6});
    const auto c = [](std::size_t k, std::size_t i) {
        return (k == 0 ? std::sqrt(0.25) : std::sqrt(0.5)) * std::cos(std::numbers::pi * (2.0 * i + 1) * k / 8.0);
    };
    // zig-zag-by-diagonal order used by the codec: (0,0), (0,1), (1,0), (0,2), (1,1), (2,0)
    const std::size_t uv[6][2] = {{0, 0}, {0, 1}, {1, 0}, {0, 2}, {1, 1}, {2, 0}};
    for (std::size_t bi = 0; bi < 2; ++bi) {
        for (std::size_t bj = 0; bj < 3; ++bj) {
            for (std::size_t k = 0; k < 6; ++k) {
                double acc = 0.0;
                for (std::size_t i = 0; i < 4; ++i) {
                    for (std::size_t j = 0; j < 4; ++j) acc += c(uv[k][0], i) * c(uv[k][1], j) * x[(bi * 4 + i) * 12 + bj * 4 + j];
                }
                CHECK(z[(bi * 3 + bj) * 6 + k] == doctest::Approx(acc).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("decode is the adjoint of encode and a right inverse") {
    const FrameCodec codec(spec(16, 16, 4, 5, 2));
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor({16, 16, 2}, rng);
        const Tensor z = random_tensor({4, 4, 5}, rng);
        const double lhs = dot(codec.encode_frame(x).span(), z.span());
        const double rhs = dot(x.span(), codec.decode_frame(z).span());
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
        const Tensor zz = codec.encode_frame(codec.decode_frame(z));
        for (std::size_t i = 0; i < z.numel(); ++i) CHECK(zz[i] == doctest::Approx(z[i]).epsilon(1e-5));
    }
}

TEST_CASE("keeping every coefficient reconstructs exactly; identity mode is the identity") {
    Rng rng(3);
    const Tensor x = random_tensor({8, 8, 1}, rng);
    const FrameCodec full(spec(8, 8, 4, 16));
    const Tensor back = full.decode_frame(full.encode_frame(x));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-5));

    CodecSpec id = spec(8, 8, 4, 3);
    id.mode = CodecMode::identity;
    const FrameCodec ident(id);
    CHECK(ident.encode_frame(x) == x);
    CHECK(ident.spec().latent_shape() == Shape{8, 8, 1});
}

TEST_CASE("constant patches live entirely in the DC channel") {
    const FrameCodec codec(spec(4, 4, 4, 3));
    const Tensor x({4, 4, 1}, 0.5f);
    const Tensor z = codec.encode_frame(x);
    CHECK(z[0] == doctest::Approx(0.5 * 4.0));
    CHECK(z[1] == doctest::Approx(0.0).scale(1e-6));
    CHECK(z[2] == doctest::Approx(0.0).scale(1e-6));
    CHECK(codec.decode_frame(z) == codec.decode_frame(codec.encode_frame(codec.decode_frame(z))));
}

TEST_CASE("sequence helpers work frame-wise and check shapes") {
    const FrameCodec codec(spec(8, 8, 4, 3));
    Rng rng(4);
    const Tensor seq = random_tensor({3, 8, 8, 1}, rng);
    const Tensor z = codec.encode_seq(seq);
    CHECK(z.shape() == Shape{3, 2, 2, 3});
    const Tensor f1 = codec.encode_frame(slice_leading(seq, 1, 2).reshaped({8, 8, 1}));
    for (std::size_t i = 0; i < f1.numel(); ++i) CHECK(z[12 + i] == f1[i]);
    CHECK(codec.decode_seq(z).shape() == seq.shape());
    CHECK(codec.encode_seq(Tensor()).empty());
    CHECK_THROWS_AS(codec.encode_frame(Tensor({8, 4, 1})), ContractError);
    CHECK_THROWS_AS(FrameCodec(spec(10, 8, 4, 3)), ContractError);
    CHECK_THROWS_AS(FrameCodec(spec(8, 8, 4, 17)), ContractError);
}
