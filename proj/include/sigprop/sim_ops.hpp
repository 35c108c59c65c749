#pragma once

// Dense forward / backward kernels used by the simulator. Activations are
// token x dim matrices; every op is templated on the scalar type.

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace sigprop::ops {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <class Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
    return x.cwiseMax(typename Derived::Scalar(0));
}

template <class DX, class DG>
auto relu_backward(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DG>& g) {
    using S = typename DX::Scalar;
    return (x.array() > S(0)).select(g, S(0));
}

template <class S>
S normal_cdf(S x) {
    return S(0.5) * std::erfc(-x / std::numbers::sqrt2_v<S>);
}

template <class S>
S normal_pdf(S x) {
    return std::exp(S(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<S> / std::numbers::sqrt2_v<S>;
}

template <class Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return x.unaryExpr([](S v) { return v * normal_cdf(v); });
}

template <class DX, class DG>
auto gelu_backward(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DG>& g) {
    using S = typename DX::Scalar;
    return x.unaryExpr([](S v) { return normal_cdf(v) + v * normal_pdf(v); }).cwiseProduct(g);
}

// Row-wise LayerNorm without epsilon. y holds the normalised rows (before gain).
template <class S>
struct LayerNormCache {
    Mat<S> y;
    Vec<S> inv_std;
};

template <class S>
Mat<S> layernorm_forward(const Mat<S>& x, LayerNormCache<S>& cache) {
    const auto d = x.cols();
    const Vec<S> mean = x.rowwise().mean();
    Mat<S> c = x.colwise() - mean;
    cache.inv_std = ((c.array().square().rowwise().sum() / S(d)).sqrt().inverse()).matrix();
    cache.y = cache.inv_std.asDiagonal() * c;
    return cache.y;
}

// Exact Jacobian-transpose: (1/sigma)(g - mean(g) - y mean(g y)) per row.
template <class S>
Mat<S> layernorm_backward(const Mat<S>& g, const LayerNormCache<S>& cache) {
    const auto d = g.cols();
    const Vec<S> gm = g.rowwise().mean();
    const Vec<S> gym = g.cwiseProduct(cache.y).rowwise().sum() / S(d);
    Mat<S> out = g.colwise() - gm;
    out -= gym.asDiagonal() * cache.y;
    return cache.inv_std.asDiagonal() * out;
}

template <class S>
Mat<S> softmax_rows(const Mat<S>& x) {
    Mat<S> e = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
    const Vec<S> inv = e.rowwise().sum().cwiseInverse();
    return inv.asDiagonal() * e;
}

template <class S>
Mat<S> softmax_rows_backward(const Mat<S>& p, const Mat<S>& g) {
    const Vec<S> dot = p.cwiseProduct(g).rowwise().sum();
    return p.cwiseProduct(g.colwise() - dot);
}

// Scaled dot-product attention with optional value projection and a fixed
// dropout mask on the attention probabilities. mask entries are 0 or 1/(1-p).
template <class S>
struct AttentionCache {
    Mat<S> x, q, k, v, a, ad;
};

template <class S>
Mat<S> attention_forward(const Mat<S>& x, const Mat<S>& wq, const Mat<S>& wk, const Mat<S>* wv, const Mat<S>* mask,
                         AttentionCache<S>& c) {
    const S scale = S(1) / std::sqrt(S(wq.cols()));
    c.x = x;
    c.q = x * wq;
    c.k = x * wk;
    c.v = wv ? Mat<S>(x * *wv) : x;
    c.a = softmax_rows<S>((c.q * c.k.transpose()) * scale);
    c.ad = mask ? Mat<S>(c.a.cwiseProduct(*mask)) : c.a;
    return c.ad * c.v;
}

// Returns dL/dx; accumulates nothing into the weights.
template <class S>
Mat<S> attention_backward(const Mat<S>& g, const Mat<S>& wq, const Mat<S>& wk, const Mat<S>* wv, const Mat<S>* mask,
                          const AttentionCache<S>& c) {
    const S scale = S(1) / std::sqrt(S(wq.cols()));
    const Mat<S> dv = c.ad.transpose() * g;
    Mat<S> dad = g * c.v.transpose();
    if (mask) dad = dad.cwiseProduct(*mask);
    const Mat<S> ds = softmax_rows_backward<S>(c.a, dad) * scale;
    Mat<S> dx = wv ? Mat<S>(dv * wv->transpose()) : dv;
    dx.noalias() += (ds * c.k) * wq.transpose();
    dx.noalias() += (ds.transpose() * c.q) * wk.transpose();
    return dx;
}

}  // namespace sigprop::ops
