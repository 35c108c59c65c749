#pragma once

#include <vector>

#include "sigprop/config.hpp"

namespace sigprop {

// Planned correlation after each of N layers, starting from r0: the attention
// step r <- l2 r + b2 (1-p), then the FFN step
// r <- l2 r + b2 (1-p)(r + sqrt(1-r^2)/pi - r acos(r)/pi).
std::vector<double> corr_input_layerwise(double r0, int N, double p, const ScalePlan& scale);

// (1/d) sqrt((1-p)/2), the FFN weight variance that gives a unit FFN block.
double dslm_ffn_var(int d, double p);

// Weight variances for every layer under config.init.
// Dslm and DslmSimple fall back to beta^2 = 2/N when config.scale is vanilla.
InitPlan plan_init(const ModelConfig& config);

}  // namespace sigprop
