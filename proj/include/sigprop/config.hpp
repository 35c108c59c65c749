#pragma once

#include <optional>
#include <vector>

#include "sigprop/moments.hpp"

namespace sigprop {

// beta^2 = k / N^alpha, lambda^2 = 1 - beta^2. normalized = false is the
// vanilla residual x + f(x) (lambda = beta = 1).
struct ScalePlan {
    double k = 2.0;
    double alpha = 1.0;
    bool normalized = true;

    static ScalePlan vanilla() { return {1.0, 0.0, false}; }

    double beta2(int N) const;
    double lambda2(int N) const;
};

enum class NormPlacement { PreLN, PostLN };
enum class InitKind { Xavier, FixedStd, Dslm, DslmSimple };

struct InitScheme {
    InitKind kind = InitKind::Xavier;
    double std = 0.02;          // FixedStd only
    double value_scale = 1.0;   // multiplies sigma_v^2 after the scheme is applied
};

struct ModelConfig {
    int num_layers = 12;
    int d = 128;
    int seq_len = 128;
    double dropout_p = 0.1;
    NormPlacement norm_placement = NormPlacement::PreLN;
    InitScheme init;
    ScalePlan scale = ScalePlan::vanilla();
    // Moments entering layer 1. When empty they are derived from the
    // embedding tables (Zipf tokens, positions, segments) followed by dropout.
    std::optional<MomentVector> input_moments;
    int vocab_size = 32000;
    int num_embd_types = 3;
    bool use_full_attention_formula = true;
    GradMoment grad_seed{1.0, 0.0};
    // Scale the final output by 1/sqrt(d) before the LM head.
    bool downscale_output = false;
};

struct LayerInit {
    double sigma_q2 = 0.0, sigma_k2 = 0.0, sigma_v2 = 0.0, sigma_o2 = 0.0;
    double sigma_w1_2 = 0.0, sigma_w2_2 = 0.0;
};

struct InitPlan {
    std::vector<LayerInit> layers;
    double sigma_embd2 = 0.0;
    ScalePlan scale;
    std::vector<double> corr_schedule;  // correlation entering each layer, as planned
    double output_scale = 1.0;
};

void validate(const ModelConfig& config);

}  // namespace sigprop
