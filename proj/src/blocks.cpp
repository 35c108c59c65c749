#include "sigprop/blocks.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sigprop {

namespace {

ComponentSpec comp(Kind kind, int d_in, int d_out, int L, double w = 0.0, double v = 0.0, double p = 0.0) {
    ComponentSpec c;
    c.kind = kind;
    c.d_in = d_in;
    c.d_out = d_out;
    c.seq_len = L;
    c.weight_var = w;
    c.value_var = v;
    c.dropout_p = p;
    return c;
}

double weighted_corr(double a_var, double a_r, double b_var, double b_r) {
    const double v = a_var + b_var;
    return v > 0.0 ? (a_var * a_r + b_var * b_r) / v : 0.0;
}

}  // namespace

std::vector<ComponentSpec> block_components(const BlockSpec& s) {
    if (s.d < 1 || s.seq_len < 1) throw std::invalid_argument("block dimensions must be >= 1");
    if (!(s.dropout_p >= 0.0 && s.dropout_p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
    std::vector<ComponentSpec> chain;
    const int d = s.d, L = s.seq_len;
    const double p = s.dropout_p;
    if (s.pre_norm) chain.push_back(comp(Kind::LayerNorm, d, d, L));
    if (s.kind == BlockKind::Attention) {
        const Kind sha = s.use_full_attention_formula ? Kind::ShaFull : Kind::ShaNoV;
        chain.push_back(comp(sha, d, d, L, s.sigma_q2 * s.sigma_k2, s.sigma_v2, p));
        chain.push_back(comp(Kind::Linear, d, d, L, s.sigma_o2));
    } else {
        chain.push_back(comp(Kind::Linear, d, 4 * d, L, s.sigma_w1_2));
        chain.push_back(comp(Kind::ReLU, 4 * d, 4 * d, L));
        chain.push_back(comp(Kind::Linear, 4 * d, d, L, s.sigma_w2_2));
    }
    chain.push_back(comp(Kind::Dropout, d, d, L, 0.0, 0.0, p));
    return chain;
}

MomentVector block_forward(const BlockSpec& spec, const MomentVector& x) {
    MomentVector m = x;
    for (const auto& c : block_components(spec)) m = component_forward(c, m);
    return m;
}

GradMoment block_backward(const BlockSpec& spec, const MomentVector& x, const GradMoment& g) {
    const auto chain = block_components(spec);
    std::vector<MomentVector> inputs;
    inputs.reserve(chain.size());
    MomentVector m = x;
    for (const auto& c : chain) {
        inputs.push_back(m);
        m = component_forward(c, m);
    }
    GradMoment out = g;
    for (std::size_t i = chain.size(); i-- > 0;) out = component_backward(chain[i], inputs[i], out);
    return out;
}

double ffn_block_corr(double r, double p) {
    using std::numbers::pi;
    r = clamp_corr(r);
    return 2.0 * (1.0 - p) * (r / 4.0 + std::sqrt(1.0 - r * r) / (2.0 * pi) + r * std::asin(r) / (2.0 * pi));
}

double ffn_block_corr_poly(double r, double p) {
    using std::numbers::pi;
    return (1.0 - p) * (1.0 / pi + r / 2.0 + (0.5 - 1.0 / pi) * r * r);
}

double attention_backward_blockform(const BlockSpec& s, const GradMoment& g) {
    const double p = s.dropout_p, L = s.seq_len, d = s.d;
    return d * d * s.sigma_v2 * s.sigma_o2 * g.variance * (1.0 + (L - 1.0) * g.corr_len * (1.0 - p)) /
           (L * (1.0 - p) * (1.0 - p));
}

MomentVector residual_combine(const MomentVector& skip, const MomentVector& block_out, double lambda2, double beta2) {
    if (lambda2 < 0.0 || beta2 < 0.0) throw std::invalid_argument("negative residual scale");
    const double a = lambda2 * skip.variance, b = beta2 * block_out.variance;
    MomentVector out;
    out.mean = std::sqrt(lambda2) * skip.mean + std::sqrt(beta2) * block_out.mean;
    out.variance = a + b;
    out.corr_len = weighted_corr(a, skip.corr_len, b, block_out.corr_len);
    out.corr_dim = weighted_corr(a, skip.corr_dim, b, block_out.corr_dim);
    return out;
}

GradMoment residual_combine(const GradMoment& skip, const GradMoment& block_in, double lambda2, double beta2) {
    if (lambda2 < 0.0 || beta2 < 0.0) throw std::invalid_argument("negative residual scale");
    const double a = lambda2 * skip.variance, b = beta2 * block_in.variance;
    GradMoment out;
    out.variance = a + b;
    out.corr_len = weighted_corr(a, skip.corr_len, b, block_in.corr_len);
    return out;
}

}  // namespace sigprop
