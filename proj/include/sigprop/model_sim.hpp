#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sigprop/config.hpp"
#include "sigprop/model.hpp"
#include "sigprop/sim.hpp"

namespace sigprop {

struct LayerWeights {
    Matrix wq, wk, wv, wo;  // d x d
    Matrix w1;              // d x 4d
    Matrix w2;              // 4d x d
    Vector ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    double lambda = 1.0, beta = 1.0;
};

// A concrete single-head transformer at init. ln_x is the final LayerNorm for
// Pre-LN and the embedding LayerNorm for Post-LN.
struct WeightSet {
    NormPlacement placement = NormPlacement::PreLN;
    int d = 0;
    int seq_len = 0;
    int num_embd_types = 3;
    double dropout_p = 0.0;
    double ln_eps = 0.0;
    double output_scale = 1.0;
    Matrix tok, pos, seg;
    Vector lnx_gain, lnx_bias;
    std::vector<LayerWeights> layers;

    int num_layers() const { return static_cast<int>(layers.size()); }
};

WeightSet build_weights(const ModelConfig& config, const InitPlan& plan, std::uint64_t seed);

// Dropout masks of one forward pass (empty when p = 0).
struct ModelMasks {
    Matrix embd;
    std::vector<std::array<Matrix, 3>> layer;  // attention probs, attention out, FFN out
};
ModelMasks sample_masks(const WeightSet& w, Rng& rng);

struct LayerCache {
    Matrix x_in, s1, mid, s2;                 // inputs and pre-norm sums
    ops::LayerNormCache<double> ln1, ln2;
    Matrix h1, h2;                            // LayerNorm outputs after gain and bias
    ops::AttentionCache<double> attn;
    Matrix u;                                 // FFN pre-activation
};

struct ModelTrace {
    Matrix x0;
    std::vector<Matrix> x;  // x[n-1] = output of layer n
    std::vector<Matrix> mid;
    std::vector<LayerCache> cache;
    ops::LayerNormCache<double> lnx;
    Matrix y;  // model output (final LayerNorm for Pre-LN, x_N for Post-LN, times output_scale)
};

// Token embedding sum tok[ids] + pos + seg, before the input LayerNorm / dropout.
Matrix embed_tokens(const WeightSet& w, const std::vector<int>& ids, int boundary);
// x0 from the embedding sum: (Post-LN: LayerNorm) then dropout.
Matrix input_stage(const WeightSet& w, const Matrix& e, const ModelMasks& masks);

ModelTrace model_forward(const WeightSet& w, const Matrix& x0, const ModelMasks& masks);

struct ModelGrads {
    Matrix input;            // gradient at x0
    std::vector<Matrix> x;   // x[n-1] = gradient at the output of layer n
};
// seed_at_output: g is dL/dy; otherwise g is dL/dx_N (profiles).
ModelGrads model_backward(const WeightSet& w, const ModelTrace& t, const ModelMasks& masks, const Matrix& g,
                          bool seed_at_output);

struct EmpiricalProfile {
    EmpiricalMoments input, input_grad;
    std::vector<EmpiricalMoments> forward, backward, mid;

    LayerProfile to_layer_profile() const;
};

// Flop estimate of one forward + backward trial.
double model_sim_flops(const ModelConfig& config);

// trials / seed are taken from sample; sample.corr_len etc. are unused unless
// config.input_moments is set, in which case x0 is sampled directly.
EmpiricalProfile run_model_sim(const ModelConfig& config, const InitPlan& plan, const SampleSpec& sample,
                               double flop_budget = 1e14);

// Rewrites every lambda / beta into the output projections (W_O, W_2) and
// returns weights with lambda = beta = 1 and an identical forward function.
WeightSet fold_residual_scaling(const WeightSet& w);

// Text manifest: header line, then per tensor "tensor <name> <rows> <cols>"
// followed by rows x cols values in row-major order.
void save_weights(const WeightSet& w, std::ostream& os);
WeightSet load_weights(std::istream& is);

}  // namespace sigprop
