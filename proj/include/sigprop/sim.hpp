#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sigprop/moments.hpp"
#include "sigprop/sim_ops.hpp"

namespace sigprop {

using Matrix = ops::Mat<double>;
using Vector = ops::Vec<double>;
using Rng = std::mt19937_64;

// Seed of (master, config, trial); no global RNG state anywhere.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t config, std::uint64_t trial);

// X[i, j] = mean + eps_j + delta_ij with eps ~ N(0, r s), delta ~ N(0, (1-r) s).
struct SampleSpec {
    int seq_len = 1;
    int dim = 1;
    double mean = 0.0;
    double variance = 1.0;
    double corr_len = 0.0;
    int trials = 64;
    std::uint64_t seed = 0;
};

Matrix sample_correlated(const SampleSpec& spec, Rng& rng);
Matrix sample_correlated(const SampleSpec& spec);

struct EmpiricalMoments {
    double mean = 0.0;
    double variance = 0.0;
    double cov_len = 0.0;
    double cov_dim = 0.0;
    double corr_len = 0.0;  // cov_len / variance, valid when corr_defined
    double corr_dim = 0.0;
    bool corr_defined = false;
    double se_mean = 0.0;
    double se_variance = 0.0;
    double se_cov_len = 0.0;
    long long count = 0;
    int trials = 0;
};

// Pools per-trial sums. Token-axis second moments use the per-column identity
// ((sum x)^2 - sum x^2) / (L (L-1)); hidden-axis the same per row.
class MomentAccumulator {
public:
    void add(const Matrix& x);
    EmpiricalMoments result() const;
    int trials() const { return static_cast<int>(m1_.size()); }

private:
    bool shifted_ = false;
    double shift_ = 0.0;
    long long count_ = 0;
    std::vector<double> m1_, m2_, pl_, pd_;
};

EmpiricalMoments measure_moments(const Matrix& x);

// One concrete component with fixed weights and dropout masks.
// Softmax takes a (d_in x seq_len) matrix and normalises each row; every
// other kind takes (seq_len x d_in) and returns (seq_len x d_out).
class ComponentOp {
public:
    ComponentOp(const ComponentSpec& spec, std::uint64_t seed);

    Matrix forward(const Matrix& x);
    Matrix backward(const Matrix& g) const;  // uses the cache of the last forward

    const ComponentSpec& spec() const { return spec_; }

private:
    ComponentSpec spec_;
    Matrix w_, wq_, wk_, wv_, mask_;
    Matrix x_, y_;
    ops::LayerNormCache<double> ln_;
    ops::AttentionCache<double> attn_;
};

struct ComponentSimResult {
    EmpiricalMoments input;     // realised input statistics
    EmpiricalMoments grad_out;  // realised injected gradient statistics
    EmpiricalMoments forward;
    EmpiricalMoments backward;
};

// Fresh weights per trial, forward, inject a sampled output gradient, analytic
// backward, pooled over trials. For Softmax, x.corr_len is the correlation
// along the normalised axis and x.dim the number of rows.
ComponentSimResult run_component_sim(const ComponentSpec& spec, const SampleSpec& x, const SampleSpec& g);

// Zipf(|V|) ids with p_i proportional to c / i, c = 1 / (0.58 + ln |V|).
class ZipfSampler {
public:
    explicit ZipfSampler(int vocab_size);
    int operator()(Rng& rng) const;
    double prob(int id) const;  // id is 0-based
    int vocab_size() const { return static_cast<int>(cdf_.size()); }

private:
    std::vector<double> cdf_;
};

// Segment boundary uniform in [1, L-1].
int sample_segment_boundary(int seq_len, Rng& rng);

// Embedding sum tok[zipf] + pos + seg with fresh tables per trial.
EmpiricalMoments run_embedding_sim(int vocab_size, int seq_len, int dim, int num_types, double weight_var, int trials,
                                   std::uint64_t seed);

}  // namespace sigprop
