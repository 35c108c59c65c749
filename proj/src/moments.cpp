#include "sigprop/moments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sigprop {

namespace {

constexpr double pi = std::numbers::pi;

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

void require_centered(const MomentVector& x, const char* what) {
    if (std::abs(x.mean) > 1e-9 * std::sqrt(x.variance) + 1e-300)
        throw std::domain_error(std::string(what) + ": closed form assumes a zero-mean input");
}

}  // namespace

std::string to_string(Kind k) {
    switch (k) {
        case Kind::Embedding: return "Embedding";
        case Kind::Linear: return "Linear";
        case Kind::Dropout: return "Dropout";
        case Kind::ReLU: return "ReLU";
        case Kind::GeLU: return "GeLU";
        case Kind::LayerNorm: return "LayerNorm";
        case Kind::Softmax: return "Softmax";
        case Kind::ShaNoV: return "ShaNoV";
        case Kind::ShaFull: return "ShaFull";
    }
    return "?";
}

Kind kind_from_string(const std::string& s) {
    for (Kind k : {Kind::Embedding, Kind::Linear, Kind::Dropout, Kind::ReLU, Kind::GeLU, Kind::LayerNorm,
                   Kind::Softmax, Kind::ShaNoV, Kind::ShaFull})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown component kind: " + s);
}

double clamp_corr(double r) { return std::clamp(r, -kCorrClamp, kCorrClamp); }

void validate(const MomentVector& x) {
    if (!(x.variance >= 0.0)) throw std::domain_error("negative variance");
    if (std::abs(x.corr_len) > 1.0 + 1e-9 || std::abs(x.corr_dim) > 1.0 + 1e-9)
        throw std::domain_error("correlation outside [-1, 1]");
}

void validate(const GradMoment& g) {
    if (!(g.variance >= 0.0)) throw std::domain_error("negative gradient variance");
    if (std::abs(g.corr_len) > 1.0 + 1e-9) throw std::domain_error("gradient correlation outside [-1, 1]");
}

void validate(const ComponentSpec& spec) {
    if (spec.d_in < 1 || spec.d_out < 1 || spec.seq_len < 1) throw std::invalid_argument("dimensions must be >= 1");
    if (!(spec.dropout_p >= 0.0 && spec.dropout_p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
    if (spec.weight_var < 0.0 || spec.value_var < 0.0) throw std::invalid_argument("negative weight variance");
}

double zipf_token_corr(int vocab_size) {
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
    const double l = std::log(static_cast<double>(vocab_size));
    return pi * pi / (6.0 * l * l);
}

// Types are taken in the order token, position, segment. Every table has the
// same variance, so the variance-weighted average is the plain average.
// Positions never repeat (correlation 0); a uniformly placed segment boundary
// gives 2/3.
MomentVector embedding_moments(int vocab_size, int seq_len, int num_types, double weight_var) {
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
    if (seq_len < 2) throw std::invalid_argument("seq_len must be >= 2");
    if (num_types < 1 || num_types > 3) throw std::invalid_argument("num_types must be 1, 2 or 3");
    if (weight_var < 0.0) throw std::invalid_argument("negative weight variance");
    const double per_type[3] = {zipf_token_corr(vocab_size), 0.0, 2.0 / 3.0};
    double sum = 0.0;
    for (int i = 0; i < num_types; ++i) sum += per_type[i];
    MomentVector out;
    out.mean = 0.0;
    out.variance = num_types * weight_var;
    out.corr_len = sum / num_types;
    out.corr_dim = 0.0;
    return out;
}

double relu_corr(double r) {
    r = clamp_corr(r);
    return (pi * r / 2.0 + r * std::asin(r) + std::sqrt(1.0 - r * r) - 1.0) / (pi - 1.0);
}

double relu_corr_poly(double r) { return 0.7 * r + 0.3 * r * r; }

double relu_grad_corr_factor(double r_x) { return 0.5 + std::asin(clamp_corr(r_x)) / pi; }

double gelu_mean(double s) { return s / std::sqrt(2.0 * pi * (s + 1.0)); }

double gelu_variance(double s) {
    const double a = s / (1.0 + s);
    return s / (2.0 * pi) * (pi / 2.0 - a + std::asin(a) + 2.0 * s / ((1.0 + s) * std::sqrt(1.0 + 2.0 * s)));
}

double gelu_cov(double s, double r) {
    r = clamp_corr(r);
    const double rs = r * s;
    const double root = std::sqrt((s + 1.0) * (s + 1.0) - rs * rs);
    return s / (4.0 * pi) *
           (pi * r + 2.0 * r * std::asin(rs / (s + 1.0)) +
            2.0 * s * (s * (1.0 - r * r) + 1.0 + r * r) / ((s + 1.0) * root) - 2.0 * s / (s + 1.0));
}

double gelu_grad_factor(double s) {
    return 0.25 + std::asin(s / (s + 1.0)) / (2.0 * pi) +
           s * (5.0 * s + 3.0) / (2.0 * pi * (s + 1.0) * std::pow(2.0 * s + 1.0, 1.5));
}

double gelu_grad_cov_factor(double s, double r) {
    r = clamp_corr(r);
    const double rs = r * s;
    const double q = (s + 1.0) * (s + 1.0) - rs * rs;
    return 0.25 + std::asin(rs / (s + 1.0)) / (2.0 * pi) +
           rs * ((2.0 * s + 3.0) * (s + 1.0) - 2.0 * rs * rs) / (2.0 * pi * (s + 1.0) * std::pow(q, 1.5));
}

LogNormalApprox softmax_lognormal(int L, double sigma2, double r) {
    const double s = sigma2 * (1.0 - clamp_corr(r));
    LogNormalApprox ln;
    ln.s_plus = (L - 1) * std::exp(s) + 1.0;
    ln.sigma2_z = L > 1 ? s * L / (L - 1.0) : 0.0;
    ln.mu_z = std::log(ln.s_plus) - ln.sigma2_z / 2.0;
    return ln;
}

double softmax_variance(int L, double sigma2, double r) {
    if (L < 2) return 0.0;
    const double s = sigma2 * (1.0 - clamp_corr(r));
    const double z = s * L / (L - 1.0);
    const double den = (L - 1) * std::exp(s) + 1.0;
    return std::expm1(z) * std::exp(2.0 * z) / (den * den);
}

double softmax_variance_simple(int L, double sigma2, double r) {
    return std::expm1((1.0 - clamp_corr(r)) * sigma2) / (static_cast<double>(L) * L);
}

double softmax_grad_factor_simple(int L, double sigma2, double r) {
    return std::exp((1.0 - clamp_corr(r)) * sigma2) / (static_cast<double>(L) * L);
}

ShaMoments sha_full_moments(int d_in, int L, double sigma_qk2, double p, double s, double r) {
    r = clamp_corr(r);
    const double q = 1.0 - r;
    const double d = d_in;
    const double s3 = s * s * s;
    const double e = std::exp(q * d * d * s * s * sigma_qk2);
    ShaMoments m;
    m.variance = (q * q * (L - 1.0) * d * s3 * sigma_qk2 + e * (4.0 * q * q * d * s3 * sigma_qk2 + q * s) / (1.0 - p)) / L +
                 r * s;
    m.cov = r * s + (2.0 * q * q * d * s3 * sigma_qk2 + q * s) / L;
    return m;
}

double layernorm_corr_finite_d(double r, int d) { return r * (1.0 - 1.0 / d); }

bool within_validity(const ComponentSpec& spec, const MomentVector& x) {
    switch (spec.kind) {
        case Kind::Softmax: return (1.0 - x.corr_dim) * x.variance <= kSoftmaxValidity;
        case Kind::ShaFull:
        case Kind::ShaNoV: {
            const double d = spec.d_in;
            return (1.0 - x.corr_len) * d * d * x.variance * x.variance * spec.weight_var <= kSoftmaxValidity;
        }
        default: return true;
    }
}

MomentVector component_forward(const ComponentSpec& spec, const MomentVector& x) {
    validate(spec);
    validate(x);
    const double p = spec.dropout_p;
    MomentVector out;
    switch (spec.kind) {
        case Kind::Embedding:
            return embedding_moments(spec.vocab_size, spec.seq_len, spec.num_embd_types, spec.weight_var);

        case Kind::Linear: {
            const double m2 = x.mean * x.mean;
            const double gain = spec.d_in * spec.weight_var;
            out.mean = 0.0;
            out.variance = gain * (x.variance + m2);
            out.corr_len = safe_ratio(x.cov_len() + m2, x.variance + m2);
            out.corr_dim = 0.0;
            return out;
        }

        case Kind::Dropout: {
            const double m2 = x.mean * x.mean;
            out.mean = x.mean;
            out.variance = (x.variance + p * m2) / (1.0 - p);
            out.corr_len = safe_ratio(x.cov_len(), out.variance);
            out.corr_dim = safe_ratio(x.corr_dim * x.variance, out.variance);
            return out;
        }

        case Kind::ReLU: {
            require_centered(x, "ReLU");
            out.mean = std::sqrt(x.variance / (2.0 * pi));
            out.variance = (pi - 1.0) / (2.0 * pi) * x.variance;
            out.corr_len = relu_corr(x.corr_len);
            out.corr_dim = relu_corr(x.corr_dim);
            return out;
        }

        case Kind::GeLU: {
            require_centered(x, "GeLU");
            const double s = x.variance;
            out.mean = gelu_mean(s);
            out.variance = gelu_variance(s);
            out.corr_len = safe_ratio(gelu_cov(s, x.corr_len), out.variance);
            out.corr_dim = safe_ratio(gelu_cov(s, x.corr_dim), out.variance);
            return out;
        }

        case Kind::LayerNorm: {
            out.mean = 0.0;
            out.variance = 1.0;
            out.corr_len = x.corr_len;
            out.corr_dim = spec.d_in > 1 ? -1.0 / (spec.d_in - 1.0) : 0.0;
            return out;
        }

        case Kind::Softmax: {
            require_centered(x, "Softmax");
            const int L = spec.seq_len;
            out.mean = 1.0 / L;
            out.variance = softmax_variance(L, x.variance, x.corr_dim);
            out.corr_len = 0.0;  // not modelled
            out.corr_dim = L > 1 ? -1.0 / (L - 1.0) : 0.0;
            return out;
        }

        case Kind::ShaNoV: {
            require_centered(x, "ShaNoV");
            out.mean = 0.0;
            out.variance = x.corr_len * x.variance;
            out.corr_len = 1.0;
            out.corr_dim = 0.0;
            if (spec.value_var > 0.0) out.variance *= spec.d_in * spec.value_var;
            return out;
        }

        case Kind::ShaFull: {
            require_centered(x, "ShaFull");
            const ShaMoments m = sha_full_moments(spec.d_in, spec.seq_len, spec.weight_var, p, x.variance, x.corr_len);
            const double v_gain = spec.value_var > 0.0 ? spec.d_in * spec.value_var : 1.0;
            out.mean = 0.0;
            out.variance = m.variance * v_gain;
            out.corr_len = std::clamp(safe_ratio(m.cov, m.variance), -1.0, 1.0);
            out.corr_dim = 0.0;
            return out;
        }
    }
    throw std::logic_error("unhandled component kind");
}

GradMoment component_backward(const ComponentSpec& spec, const MomentVector& x, const GradMoment& g) {
    validate(spec);
    validate(x);
    validate(g);
    const double p = spec.dropout_p;
    GradMoment out;
    switch (spec.kind) {
        case Kind::Embedding:
            throw std::invalid_argument("Embedding has no input gradient");

        case Kind::Linear:
            out.variance = spec.d_out * spec.weight_var * g.variance;
            out.corr_len = g.corr_len;
            return out;

        case Kind::Dropout:
            out.variance = g.variance / (1.0 - p);
            out.corr_len = g.corr_len * (1.0 - p);
            return out;

        case Kind::ReLU:
            require_centered(x, "ReLU");
            out.variance = 0.5 * g.variance;
            out.corr_len = relu_grad_corr_factor(x.corr_len) * g.corr_len;
            return out;

        case Kind::GeLU: {
            require_centered(x, "GeLU");
            const double f = gelu_grad_factor(x.variance);
            out.variance = f * g.variance;
            out.corr_len = safe_ratio(gelu_grad_cov_factor(x.variance, x.corr_len) * g.corr_len, f);
            return out;
        }

        case Kind::LayerNorm:
            if (!(x.variance > 0.0)) throw std::domain_error("LayerNorm backward with zero input variance");
            out.variance = g.variance / x.variance;
            out.corr_len = g.corr_len;
            return out;

        case Kind::Softmax: {
            require_centered(x, "Softmax");
            const int L = spec.seq_len;
            const double mu = 1.0 / L;
            out.variance = (softmax_variance(L, x.variance, x.corr_dim) + mu * mu) * g.variance;
            out.corr_len = 0.0;  // not modelled
            return out;
        }

        case Kind::ShaNoV: {
            const double v_gain = spec.value_var > 0.0 ? spec.d_out * spec.value_var : 1.0;
            out.variance = g.corr_len * g.variance * v_gain;
            out.corr_len = 1.0;
            return out;
        }

        case Kind::ShaFull: {
            const double L = spec.seq_len;
            const double v_gain = spec.value_var > 0.0 ? spec.d_out * spec.value_var : 1.0;
            const double var = g.variance * v_gain * (1.0 + (L - 1.0) * g.corr_len * (1.0 - p)) / (L * (1.0 - p));
            const double cov = g.variance * v_gain * (1.0 + (L - 1.0) * g.corr_len) / L;
            out.variance = var;
            out.corr_len = std::clamp(safe_ratio(cov, var), -1.0, 1.0);
            return out;
        }
    }
    throw std::logic_error("unhandled component kind");
}

}  // namespace sigprop
