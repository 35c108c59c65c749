#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sigprop/blocks.hpp"
#include "sigprop/config.hpp"

namespace sigprop {

struct LayerRecord {
    int index = 0;          // 1..N; record n describes the output of layer n
    MomentVector forward;   // moments of x_n
    GradMoment backward;    // gradient moments at x_n
    MomentVector mid;       // after the attention sub-layer
};

struct LayerProfile {
    MomentVector input;     // x_0, entering layer 1
    GradMoment input_grad;  // gradient at x_0
    std::vector<LayerRecord> layers;

    double final_variance() const;
    // max over layers of gradient variance / min over layers, including x_0
    double grad_ratio_max_min() const;
};

struct DerivedConstants {
    double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0, c5 = 0.0, c6 = 0.0;
    double r_max = 0.0, r_gmax = 0.0;
};

// Block specs of layer n (0-based) under a plan.
BlockSpec attention_spec(const ModelConfig& config, const LayerInit& li);
BlockSpec ffn_spec(const ModelConfig& config, const LayerInit& li);

MomentVector model_input_moments(const ModelConfig& config, const InitPlan& plan);

LayerProfile propagate_theory(const ModelConfig& config, const InitPlan& plan);

DerivedConstants derive_constants(const ModelConfig& config, const InitPlan& plan, double r_min = 0.0);

struct GrowthLaws {
    std::string forward_order;
    std::string backward_order;
    std::string sensitivity_order;
    double c_g = 1.0;  // exponent of the Pre-LN gradient law (N/n)^c_g
};
GrowthLaws growth_laws(const ModelConfig& config, const InitPlan& plan);

// sigma_g,n = sigma_g,N * (N / n)^c_g for n = 1..N.
std::vector<double> predicted_grad_curve(int N, double sigma_g_N, double c_g);

enum class FfnCorrForm { Exact, Polynomial };
struct FixedPoint {
    double r_max = 0.0;
    double r_gmax = 0.0;
    int iterations = 0;
};
FixedPoint correlation_fixed_point(double c1, double c2, double p, FfnCorrForm form = FfnCorrForm::Exact);
// One application of the two fixed-point maps, for plug-back checks.
std::pair<double, double> fixed_point_map(double c1, double c2, double p, double r, double r_g,
                                          FfnCorrForm form = FfnCorrForm::Exact);

struct Sensitivity {
    double gradient_bound = 0.0;    // e^{k N^{1-alpha}}
    double sensitivity_value = 0.0; // k N^{1-alpha}
};
Sensitivity sensitivity(double k, double alpha, int N);

// Simplified-DSLM Pre-LN forward bracket, [1/2 + 1/(2e^4), 3/4 + 1/(4e^4)].
std::pair<double, double> dslm_simple_bracket();

}  // namespace sigprop
