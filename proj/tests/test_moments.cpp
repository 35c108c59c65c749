#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "oracles.hpp"
#include "sigprop/moments.hpp"

using namespace sigprop;
using doctest::Approx;

namespace {

ComponentSpec spec_of(Kind k, int d = 64, int L = 128) {
    ComponentSpec s;
    s.kind = k;
    s.d_in = s.d_out = d;
    s.seq_len = L;
    return s;
}

MomentVector mv(double mean, double var, double r, double rd = 0.0) { return MomentVector{mean, var, r, rd}; }

}  // namespace

TEST_CASE("relu forward at unit variance") {
    const auto y = component_forward(spec_of(Kind::ReLU), mv(0, 1, 0.5));
    CHECK(y.mean == Approx(oracle::kReluMean).epsilon(1e-12));
    CHECK(y.variance == Approx(oracle::kReluVar).epsilon(1e-12));
    CHECK(relu_corr(1.0) == Approx(1.0).epsilon(1e-9));
    CHECK(relu_corr(0.0) == Approx(0.0).epsilon(1e-12));
}

TEST_CASE("relu correlation map matches quadrature") {
    for (double r : {-0.5, 0.0, 0.3, 0.7, 0.95}) {
        const double e = oracle::gauss2(oracle::relu, oracle::relu, r);
        const double cov = e - oracle::kReluMean * oracle::kReluMean;
        CHECK(relu_corr(r) == Approx(cov / oracle::kReluVar).epsilon(1e-3));
    }
}

TEST_CASE("relu polynomial stays close to the exact map") {
    CHECK(relu_corr_poly(0.5) == Approx(0.425));
    CHECK(relu_corr_poly(0.0) == 0.0);
    CHECK(relu_corr_poly(1.0) == Approx(1.0));
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        CHECK(std::abs(relu_corr_poly(r) - relu_corr(r)) < 0.03);
    }
}

TEST_CASE("gelu moments match quadrature") {
    for (double s : {0.1, 1.0, 4.0}) {
        const double m = oracle::gauss1(oracle::gelu, s);
        const double m2 = oracle::gauss1([](double x) { return oracle::gelu(x) * oracle::gelu(x); }, s);
        CHECK(gelu_mean(s) == Approx(m).epsilon(1e-8));
        CHECK(gelu_variance(s) == Approx(m2 - m * m).epsilon(1e-7));
        const double g2 = oracle::gauss1([](double x) { return std::pow(oracle::gelu_prime(x), 2); }, s);
        CHECK(gelu_grad_factor(s) == Approx(g2).epsilon(1e-7));
    }
    const double s = 1.0, r = 0.5;
    const double m = gelu_mean(s);
    const double e = oracle::gauss2(oracle::gelu, oracle::gelu, r, 1.0, 1.0);
    CHECK(gelu_cov(s, r) == Approx(e - m * m).epsilon(1e-4));
    const double eg = oracle::gauss2(oracle::gelu_prime, oracle::gelu_prime, r);
    CHECK(gelu_grad_cov_factor(s, r) == Approx(eg).epsilon(1e-4));
}

TEST_CASE("gelu backward factor at unit variance") {
    const double expect = 0.25 + std::asin(0.5) / (2 * M_PI) + 8.0 / (2 * M_PI * 2 * std::pow(3.0, 1.5));
    CHECK(gelu_grad_factor(1.0) == Approx(expect).epsilon(1e-12));
}

TEST_CASE("gelu small-signal limit") {
    const double s = 1e-6;
    CHECK(component_forward(spec_of(Kind::GeLU), mv(0, s, 0.0)).variance == Approx(s / 4).epsilon(1e-5));
}

TEST_CASE("dropout p=0 is the identity") {
    const MomentVector x = mv(1.5, 2.0, 0.3);
    const auto y = component_forward(spec_of(Kind::Dropout), x);
    CHECK(y.mean == x.mean);
    CHECK(y.variance == x.variance);
    CHECK(y.corr_len == x.corr_len);
    const auto g = component_backward(spec_of(Kind::Dropout), x, GradMoment{3.0, 0.4});
    CHECK(g.variance == 3.0);
    CHECK(g.corr_len == 0.4);
}

TEST_CASE("dropout scales variance and correlation") {
    auto s = spec_of(Kind::Dropout);
    s.dropout_p = 0.2;
    const auto y = component_forward(s, mv(0, 1, 0.5));
    CHECK(y.variance == Approx(1.0 / 0.8));
    CHECK(y.cov_len() == Approx(0.5));
    const auto g = component_backward(s, mv(0, 1, 0.5), GradMoment{1.0, 0.5});
    CHECK(g.variance == Approx(1.25));
    CHECK(g.corr_len == Approx(0.4));
}

TEST_CASE("layernorm normalises") {
    const auto y = component_forward(spec_of(Kind::LayerNorm, 256), mv(3.0, 7.0, 0.4));
    CHECK(y.mean == 0.0);
    CHECK(y.variance == 1.0);
    CHECK(y.corr_len == Approx(0.4));
    CHECK(layernorm_corr_finite_d(0.4, 256) == Approx(0.4 * (1 - 1.0 / 256)));
    CHECK(component_backward(spec_of(Kind::LayerNorm), mv(0, 4.0, 0.0), GradMoment{1.0, 0.0}).variance ==
          Approx(0.25));
}

TEST_CASE("relu backward correlation factor") {
    CHECK(relu_grad_corr_factor(0.0) == Approx(0.5));
    CHECK(relu_grad_corr_factor(1.0) == Approx(1.0).epsilon(1e-5));
    const auto g = component_backward(spec_of(Kind::ReLU), mv(0, 1, 0.0), GradMoment{2.0, 0.6});
    CHECK(g.variance == Approx(1.0));
    CHECK(g.corr_len == Approx(0.3));
}

TEST_CASE("linear forward and backward") {
    ComponentSpec s = spec_of(Kind::Linear, 512);
    s.d_out = 128;
    s.weight_var = 1.0 / 512;
    const auto y = component_forward(s, mv(2.0, 3.0, 0.5));
    CHECK(y.mean == 0.0);
    CHECK(y.variance == Approx(512 * s.weight_var * (3.0 + 4.0)));
    CHECK(y.corr_len == Approx((0.5 * 3.0 + 4.0) / 7.0));
    const auto g = component_backward(s, mv(2.0, 3.0, 0.5), GradMoment{1.0, 0.2});
    CHECK(g.variance == Approx(128.0 / 512));
    CHECK(g.corr_len == Approx(0.2));
}

TEST_CASE("softmax with constant input is uniform") {
    auto s = spec_of(Kind::Softmax, 16, 300);
    const auto y = component_forward(s, mv(0, 0.0, 0.0));
    CHECK(y.mean == Approx(1.0 / 300));
    CHECK(y.variance == Approx(0.0).epsilon(1e-15));
}

TEST_CASE("softmax large-L forms agree with the full ones") {
    const int L = 3000;
    CHECK(softmax_variance(L, 0.5, 0.2) == Approx(softmax_variance_simple(L, 0.5, 0.2)).epsilon(2e-3));
}

TEST_CASE("single-head attention without value projection") {
    ComponentSpec s = spec_of(Kind::ShaNoV, 64, 512);
    const auto y = component_forward(s, mv(0, 1, 0.2));
    CHECK(y.variance == Approx(0.2));
    CHECK(y.corr_len == Approx(1.0));
}

TEST_CASE("full attention reduces to r sigma^2 at zero scores") {
    const auto m = sha_full_moments(64, 1 << 20, 0.0, 0.0, 1.0, 0.3);
    CHECK(m.variance == Approx(0.3).epsilon(1e-5));
    CHECK(m.cov == Approx(0.3).epsilon(1e-5));
}

TEST_CASE("attention backward long-sequence limit") {
    ComponentSpec s = spec_of(Kind::ShaFull, 64, 100000);
    s.value_var = 1.0 / 64;
    const auto g = component_backward(s, mv(0, 1, 0.5), GradMoment{2.0, 0.4});
    CHECK(g.variance == Approx(0.4 * 2.0).epsilon(1e-3));
}

TEST_CASE("embedding correlation") {
    const auto m = embedding_moments(32000, 256, 3, 0.01);
    CHECK(m.corr_len == Approx(oracle::kEmbeddingCorr).epsilon(5e-3));
    CHECK(m.variance == Approx(0.03));
    CHECK(embedding_moments(1 << 30, 256, 3, 1.0).corr_len == Approx(2.0 / 9.0).epsilon(0.1));
    CHECK(zipf_token_corr(2147483647) < zipf_token_corr(32000));
}

TEST_CASE("validation") {
    CHECK_THROWS_AS(component_forward(spec_of(Kind::ReLU), mv(1.0, 1.0, 0.0)), std::domain_error);
    CHECK_THROWS_AS(component_forward(spec_of(Kind::GeLU), mv(0.5, 1.0, 0.0)), std::domain_error);
    CHECK_THROWS_AS(component_forward(spec_of(Kind::Softmax), mv(0.5, 1.0, 0.0)), std::domain_error);
    CHECK_THROWS(validate(mv(0, -1.0, 0.0)));
    CHECK_THROWS(validate(mv(0, 1.0, 1.5)));
    auto s = spec_of(Kind::Dropout);
    s.dropout_p = 1.0;
    CHECK_THROWS(validate(s));
    CHECK(kind_from_string(to_string(Kind::ShaFull)) == Kind::ShaFull);
}

TEST_CASE("softmax validity band") {
    auto s = spec_of(Kind::Softmax);
    CHECK(within_validity(s, mv(0, 3.9, 0.0)));
    CHECK_FALSE(within_validity(s, mv(0, 5.0, 0.0)));
    CHECK(within_validity(s, mv(0, 5.0, 0.0, 0.5)));
}
