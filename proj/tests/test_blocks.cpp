#include <cmath>

#include "doctest.h"
#include "sigprop/blocks.hpp"

using namespace sigprop;
using doctest::Approx;

namespace {

BlockSpec ffn(int d, double p) {
    BlockSpec b;
    b.kind = BlockKind::Ffn;
    b.d = d;
    b.seq_len = 128;
    b.dropout_p = p;
    b.sigma_w1_2 = b.sigma_w2_2 = std::sqrt((1 - p) / 2) / d;
    return b;
}

BlockSpec attention(int d, int L, double p, double vo) {
    BlockSpec b;
    b.kind = BlockKind::Attention;
    b.d = d;
    b.seq_len = L;
    b.dropout_p = p;
    b.sigma_q2 = b.sigma_k2 = 1.0 / d;
    b.sigma_v2 = b.sigma_o2 = std::sqrt(vo) / d;
    return b;
}

}  // namespace

TEST_CASE("ffn block with unit gain keeps unit variance") {
    const BlockSpec b = ffn(256, 0.1);
    const auto y = block_forward(b, MomentVector{0, 1, 0, 0});
    CHECK(y.variance == Approx(1.0).epsilon(1e-12));
    const auto g = block_backward(b, MomentVector{0, 1, 0, 0}, GradMoment{1, 0});
    CHECK(g.variance == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ffn block correlation") {
    CHECK(ffn_block_corr_poly(0.0, 0.1) == Approx(0.9 / M_PI));
    CHECK(ffn_block_corr(0.0, 0.1) == Approx(0.9 / M_PI));
    const auto y = block_forward(ffn(128, 0.1), MomentVector{0, 1, 0, 0});
    CHECK(y.corr_len == Approx(0.9 / M_PI).epsilon(1e-9));
    for (double r : {0.1, 0.5, 0.9}) {
        const auto yr = block_forward(ffn(128, 0.1), MomentVector{0, 1, r, 0});
        CHECK(yr.corr_len == Approx(ffn_block_corr(r, 0.1)).epsilon(1e-9));
        CHECK(std::abs(ffn_block_corr(r, 0.1) - ffn_block_corr_poly(r, 0.1)) < 0.03);
    }
}

TEST_CASE("ffn gradient correlation factor at r=1") {
    const auto g = block_backward(ffn(64, 0.0), MomentVector{0, 1, 1.0, 0}, GradMoment{1, 0.7});
    CHECK(g.corr_len == Approx(0.7).epsilon(1e-5));
}

TEST_CASE("simplified attention block") {
    BlockSpec b = attention(64, 128, 0.0, 1.0);
    b.use_full_attention_formula = false;
    const auto y = block_forward(b, MomentVector{0, 1, 0.5, 0});
    CHECK(y.variance == Approx(0.5));
    CHECK(y.corr_len == Approx(1.0));
    b.dropout_p = 0.1;
    const auto yp = block_forward(b, MomentVector{0, 1, 0.5, 0});
    CHECK(yp.variance == Approx(0.5 / 0.9));
    CHECK(yp.corr_len == Approx(0.9));
}

TEST_CASE("full and simplified attention agree at standard score scale") {
    for (double r : {0.2, 0.5, 0.8}) {
        BlockSpec b = attention(128, 256, 0.1, 1.0);
        b.sigma_q2 = b.sigma_k2 = 1.0 / (128.0 * 128.0);
        const auto full = block_forward(b, MomentVector{0, 1, r, 0});
        b.use_full_attention_formula = false;
        const auto simple = block_forward(b, MomentVector{0, 1, r, 0});
        CHECK(std::abs(full.variance - simple.variance) / simple.variance < 0.10);
    }
}

TEST_CASE("attention backward long sequences") {
    BlockSpec b = attention(64, 1 << 20, 0.0, 1.0);
    b.pre_norm = false;
    const double r = 0.6;
    const auto g = block_backward(b, MomentVector{0, 1, r, 0}, GradMoment{2.0, r});
    CHECK(g.variance == Approx(r * 2.0).epsilon(1e-3));
    CHECK(attention_backward_blockform(b, GradMoment{2.0, r}) == Approx(r * 2.0).epsilon(1e-3));
}

TEST_CASE("block composition") {
    const auto comps = block_components(ffn(32, 0.1));
    REQUIRE(comps.size() == 5);
    CHECK(comps.front().kind == Kind::LayerNorm);
    CHECK(comps[1].d_out == 128);
    CHECK(comps.back().kind == Kind::Dropout);
    BlockSpec post = ffn(32, 0.1);
    post.pre_norm = false;
    CHECK(block_components(post).size() == 4);
    const auto attn = block_components(attention(32, 64, 0.1, 1.0));
    CHECK(attn.front().kind == Kind::LayerNorm);
    CHECK(attn[1].kind == Kind::ShaFull);
}

TEST_CASE("pre-norm block backward divides by the input variance") {
    const BlockSpec b = ffn(64, 0.1);
    const auto g1 = block_backward(b, MomentVector{0, 1, 0.3, 0}, GradMoment{1, 0});
    const auto g4 = block_backward(b, MomentVector{0, 4, 0.3, 0}, GradMoment{1, 0});
    CHECK(g4.variance == Approx(g1.variance / 4));
}

TEST_CASE("residual combination") {
    const MomentVector a{0, 1, 0.9, 0}, b{0, 1, 0.286, 0};
    const auto y = residual_combine(a, b, 0.5, 0.5);
    CHECK(y.variance == Approx(1.0));
    const auto same = residual_combine(a, b, 1.0, 0.0);
    CHECK(same.variance == a.variance);
    CHECK(same.corr_len == a.corr_len);
    const int N = 24;
    const auto z = residual_combine(a, b, 1 - 2.0 / N, 2.0 / N);
    CHECK(z.corr_len == Approx(0.9 * (1 - 2.0 / N) + 0.286 * (2.0 / N)));
    const auto g = residual_combine(GradMoment{1, 0.5}, GradMoment{3, 0.1}, 1.0, 1.0);
    CHECK(g.variance == Approx(4.0));
    CHECK(g.corr_len == Approx((0.5 + 0.3) / 4.0));
}
