#include "sigprop/dslm.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sigprop/blocks.hpp"

namespace sigprop {

std::vector<double> corr_input_layerwise(double r0, int N, double p, const ScalePlan& scale) {
    using std::numbers::pi;
    if (!(r0 >= 0.0 && r0 <= 1.0)) throw std::invalid_argument("r0 must be in [0, 1]");
    if (N < 1) throw std::invalid_argument("N must be >= 1");
    const double l2 = scale.lambda2(N), b2 = scale.beta2(N);
    std::vector<double> out;
    out.reserve(N);
    double r = r0;
    for (int n = 0; n < N; ++n) {
        r = l2 * r + b2 * (1.0 - p);
        const double rc = clamp_corr(r);
        r = l2 * r + b2 * (1.0 - p) * (rc + std::sqrt(1.0 - rc * rc) / pi - rc * std::acos(rc) / pi);
        out.push_back(r);
    }
    return out;
}

double dslm_ffn_var(int d, double p) { return std::sqrt((1.0 - p) / 2.0) / d; }

InitPlan plan_init(const ModelConfig& c) {
    validate(c);
    const int N = c.num_layers;
    const double d = c.d, p = c.dropout_p;
    InitPlan plan;
    plan.scale = c.scale;
    plan.layers.resize(N);
    if (c.downscale_output) plan.output_scale = 1.0 / std::sqrt(d);

    switch (c.init.kind) {
    case InitKind::Xavier: {
        const double qkvo = 2.0 / (d + d), ffn = 2.0 / (d + 4.0 * d);
        for (auto& l : plan.layers) l = {qkvo, qkvo, qkvo, qkvo, ffn, ffn};
        plan.sigma_embd2 = 2.0 / (c.vocab_size + d);
        break;
    }
    case InitKind::FixedStd: {
        const double v = c.init.std * c.init.std;
        for (auto& l : plan.layers) l = {v, v, v, v, v, v};
        plan.sigma_embd2 = v;
        break;
    }
    case InitKind::Dslm:
    case InitKind::DslmSimple: {
        if (!plan.scale.normalized) plan.scale = ScalePlan{};
        const double f = dslm_ffn_var(c.d, p);
        plan.sigma_embd2 = (1.0 - p) / c.num_embd_types;
        double r0 = 0.0;
        if (c.input_moments) {
            r0 = c.input_moments->corr_len;
        } else {
            r0 = embedding_moments(c.vocab_size, c.seq_len, c.num_embd_types, plan.sigma_embd2).corr_len * (1.0 - p);
        }
        const auto after = corr_input_layerwise(r0, N, p, plan.scale);
        plan.corr_schedule.resize(N);
        for (int n = 0; n < N; ++n) {
            const double r_in = n == 0 ? r0 : after[n - 1];
            plan.corr_schedule[n] = r_in;
            auto& l = plan.layers[n];
            l.sigma_q2 = l.sigma_k2 = 1.0 / d;
            l.sigma_w1_2 = l.sigma_w2_2 = f;
            if (c.init.kind == InitKind::Dslm) {
                if (!(r_in > 0.0)) throw std::domain_error("planned correlation is 0; attention variance undefined");
                l.sigma_v2 = l.sigma_o2 = std::sqrt((1.0 - p) / r_in) / d;
            } else {
                l.sigma_v2 = l.sigma_o2 = f;
            }
        }
        break;
    }
    }
    for (auto& l : plan.layers) l.sigma_v2 *= c.init.value_scale;
    return plan;
}

}  // namespace sigprop
