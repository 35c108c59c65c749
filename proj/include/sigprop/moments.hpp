#pragma once

#include <string>

namespace sigprop {

// Forward statistics at one point of the network.
// corr_len is the correlation between two tokens at the same hidden index,
// corr_dim the correlation between two hidden indices of the same token.
struct MomentVector {
    double mean = 0.0;
    double variance = 1.0;
    double corr_len = 0.0;
    double corr_dim = 0.0;

    double cov_len() const { return corr_len * variance; }
};

struct GradMoment {
    double variance = 1.0;
    double corr_len = 0.0;

    double cov_len() const { return corr_len * variance; }
};

enum class Kind { Embedding, Linear, Dropout, ReLU, GeLU, LayerNorm, Softmax, ShaNoV, ShaFull };

std::string to_string(Kind k);
Kind kind_from_string(const std::string& s);

// weight_var is sigma_w^2 for Linear/Embedding and sigma_q^2 * sigma_k^2 for attention.
// For ShaFull, value_var > 0 appends the value projection W_V (d_in -> d_out);
// value_var == 0 means the bare attention map O = Dropout(A) X with d_out == d_in.
// For Softmax the normalised axis has length seq_len and its correlation is corr_dim.
struct ComponentSpec {
    Kind kind = Kind::Linear;
    int d_in = 1;
    int d_out = 1;
    int seq_len = 1;
    double weight_var = 0.0;
    double value_var = 0.0;
    double dropout_p = 0.0;
    int vocab_size = 2;
    int num_embd_types = 3;
};

struct LogNormalApprox {
    double s_plus = 1.0;
    double mu_z = 0.0;
    double sigma2_z = 0.0;
};

// Correlations are clamped into this band before asin / sqrt(1 - r^2).
constexpr double kCorrClamp = 1.0 - 1e-12;
double clamp_corr(double r);

void validate(const MomentVector& x);
void validate(const GradMoment& g);
void validate(const ComponentSpec& spec);

MomentVector embedding_moments(int vocab_size, int seq_len, int num_types, double weight_var);

// Token-sharing correlation of a Zipf(|V|) stream, pi^2 / (6 log^2 |V|).
double zipf_token_corr(int vocab_size);

MomentVector component_forward(const ComponentSpec& spec, const MomentVector& x);
GradMoment component_backward(const ComponentSpec& spec, const MomentVector& x, const GradMoment& g);

// False when the log-normal softmax / small-score attention approximations are
// outside the range where they were checked ((1 - r) * score variance > 4).
bool within_validity(const ComponentSpec& spec, const MomentVector& x);
constexpr double kSoftmaxValidity = 4.0;

// Exact ReLU correlation map and its quadratic fit 0.7 r + 0.3 r^2.
double relu_corr(double r);
double relu_corr_poly(double r);

// Factor multiplying r_g in the ReLU backward pass, 1/2 + asin(r_x)/pi.
double relu_grad_corr_factor(double r_x);

// GeLU pieces, s = input variance.
double gelu_mean(double s);
double gelu_variance(double s);
double gelu_cov(double s, double r);
double gelu_grad_factor(double s);
double gelu_grad_cov_factor(double s, double r);

LogNormalApprox softmax_lognormal(int L, double sigma2, double r);
double softmax_variance(int L, double sigma2, double r);
// Large-L forms (e^{(1-r) s} - 1) / L^2 and e^{(1-r) s} / L^2.
double softmax_variance_simple(int L, double sigma2, double r);
double softmax_grad_factor_simple(int L, double sigma2, double r);

// Output variance and token covariance of O = Dropout(softmax(X Wq Wk^T X^T / sqrt(d_k))) X
// for input variance s and correlation r.
struct ShaMoments {
    double variance;
    double cov;
};
ShaMoments sha_full_moments(int d_in, int L, double sigma_qk2, double p, double s, double r);

// LayerNorm correlation with the finite-d factor, r (1 - 1/d).
double layernorm_corr_finite_d(double r, int d);

}  // namespace sigprop
