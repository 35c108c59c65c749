#include "sigprop/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sigprop {

double ScalePlan::beta2(int N) const {
    if (!normalized) return 1.0;
    return std::min(1.0, k / std::pow(static_cast<double>(N), alpha));
}

double ScalePlan::lambda2(int N) const { return normalized ? 1.0 - beta2(N) : 1.0; }

void validate(const ModelConfig& c) {
    if (c.num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
    if (c.d < 2 || c.seq_len < 2) throw std::invalid_argument("d and seq_len must be >= 2");
    if (!(c.dropout_p >= 0.0 && c.dropout_p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
    if (c.scale.normalized && !(c.scale.k > 0.0 && c.scale.alpha >= 0.0))
        throw std::invalid_argument("scale plan needs k > 0, alpha >= 0");
}

double LayerProfile::final_variance() const {
    return layers.empty() ? input.variance : layers.back().forward.variance;
}

double LayerProfile::grad_ratio_max_min() const {
    double lo = input_grad.variance, hi = input_grad.variance;
    for (const auto& l : layers) {
        lo = std::min(lo, l.backward.variance);
        hi = std::max(hi, l.backward.variance);
    }
    return lo > 0.0 ? hi / lo : INFINITY;
}

BlockSpec attention_spec(const ModelConfig& c, const LayerInit& li) {
    BlockSpec s;
    s.kind = BlockKind::Attention;
    s.d = c.d;
    s.seq_len = c.seq_len;
    s.dropout_p = c.dropout_p;
    s.sigma_q2 = li.sigma_q2;
    s.sigma_k2 = li.sigma_k2;
    s.sigma_v2 = li.sigma_v2;
    s.sigma_o2 = li.sigma_o2;
    s.use_full_attention_formula = c.use_full_attention_formula;
    s.pre_norm = c.norm_placement == NormPlacement::PreLN;
    return s;
}

BlockSpec ffn_spec(const ModelConfig& c, const LayerInit& li) {
    BlockSpec s;
    s.kind = BlockKind::Ffn;
    s.d = c.d;
    s.seq_len = c.seq_len;
    s.dropout_p = c.dropout_p;
    s.sigma_w1_2 = li.sigma_w1_2;
    s.sigma_w2_2 = li.sigma_w2_2;
    s.pre_norm = c.norm_placement == NormPlacement::PreLN;
    return s;
}

namespace {

ComponentSpec layernorm(int d) {
    ComponentSpec c;
    c.kind = Kind::LayerNorm;
    c.d_in = c.d_out = d;
    return c;
}

ComponentSpec dropout(double p) {
    ComponentSpec c;
    c.kind = Kind::Dropout;
    c.dropout_p = p;
    return c;
}

}  // namespace

MomentVector model_input_moments(const ModelConfig& c, const InitPlan& plan) {
    if (c.input_moments) return *c.input_moments;
    MomentVector x = embedding_moments(c.vocab_size, c.seq_len, c.num_embd_types, plan.sigma_embd2);
    if (c.norm_placement == NormPlacement::PostLN) x = component_forward(layernorm(c.d), x);
    if (c.dropout_p > 0.0) x = component_forward(dropout(c.dropout_p), x);
    return x;
}

LayerProfile propagate_theory(const ModelConfig& c, const InitPlan& plan) {
    validate(c);
    const int N = c.num_layers;
    if (static_cast<int>(plan.layers.size()) != N) throw std::invalid_argument("init plan has wrong number of layers");
    const double l2 = plan.scale.lambda2(N), b2 = plan.scale.beta2(N);
    const bool pre = c.norm_placement == NormPlacement::PreLN;
    const ComponentSpec ln = layernorm(c.d);

    LayerProfile prof;
    prof.input = model_input_moments(c, plan);
    prof.layers.resize(N);

    // Forward, keeping every sub-layer input for the backward sweep.
    std::vector<MomentVector> attn_in(N), ffn_in(N), s1(N), s2(N);
    MomentVector x = prof.input;
    for (int n = 0; n < N; ++n) {
        const BlockSpec a = attention_spec(c, plan.layers[n]);
        const BlockSpec f = ffn_spec(c, plan.layers[n]);
        attn_in[n] = x;
        s1[n] = residual_combine(x, block_forward(a, x), l2, b2);
        x = pre ? s1[n] : component_forward(ln, s1[n]);
        prof.layers[n].mid = x;
        ffn_in[n] = x;
        s2[n] = residual_combine(x, block_forward(f, x), l2, b2);
        x = pre ? s2[n] : component_forward(ln, s2[n]);
        prof.layers[n].index = n + 1;
        prof.layers[n].forward = x;
    }

    GradMoment g = c.grad_seed;
    for (int n = N - 1; n >= 0; --n) {
        prof.layers[n].backward = g;
        const BlockSpec a = attention_spec(c, plan.layers[n]);
        const BlockSpec f = ffn_spec(c, plan.layers[n]);
        if (!pre) g = component_backward(ln, s2[n], g);
        g = residual_combine(g, block_backward(f, ffn_in[n], g), l2, b2);
        if (!pre) g = component_backward(ln, s1[n], g);
        g = residual_combine(g, block_backward(a, attn_in[n], g), l2, b2);
    }
    prof.input_grad = g;
    return prof;
}

DerivedConstants derive_constants(const ModelConfig& c, const InitPlan& plan, double r_min) {
    if (plan.layers.empty()) throw std::invalid_argument("empty init plan");
    const LayerInit& li = plan.layers.front();
    const double d = c.d, p = c.dropout_p;
    DerivedConstants k;
    k.c1 = d * d * li.sigma_o2 * li.sigma_v2 / (1.0 - p);
    k.c2 = 2.0 * d * d * li.sigma_w1_2 * li.sigma_w2_2 / (1.0 - p);
    const FixedPoint fp = correlation_fixed_point(k.c1, k.c2, p);
    k.r_max = fp.r_max;
    k.r_gmax = fp.r_gmax;
    k.c3 = k.c1 * k.r_max + k.c2;
    k.c4 = k.c1 * r_min + k.c2;
    k.c5 = (1.0 + k.c1 * k.r_gmax) / (1.0 + k.c1 * k.r_max);
    k.c6 = k.r_max > 0.0 ? k.r_gmax / k.r_max : 0.0;
    return k;
}

GrowthLaws growth_laws(const ModelConfig& c, const InitPlan& plan) {
    GrowthLaws g;
    if (plan.scale.normalized) {
        g.forward_order = "1";
        g.backward_order = "Theta(1)";
        g.sensitivity_order = plan.scale.alpha == 1.0 ? "Theta(1)" : "k N^(1-alpha)";
        g.c_g = 0.0;
        return g;
    }
    if (c.norm_placement == NormPlacement::PostLN) {
        g.forward_order = "Theta(1)";
        g.backward_order = "c^(+-N)";
        g.sensitivity_order = "Theta(N)";
        g.c_g = 0.0;
        return g;
    }
    g.forward_order = "Theta(N)";
    g.backward_order = "Theta(N)";
    g.sensitivity_order = "Theta(log N)";
    // C_g = (attention + FFN gradient gain) / (attention + FFN forward gain),
    // averaged over the tracked correlations of the upper 90% of the stack.
    const DerivedConstants k = derive_constants(c, plan);
    const LayerProfile prof = propagate_theory(c, plan);
    const int N = c.num_layers;
    const double p = c.dropout_p;
    double sum = 0.0;
    int cnt = 0;
    for (int n = std::max(1, N / 10); n <= N; ++n) {
        const auto& rec = prof.layers[n - 1];
        sum += (k.c1 * (1.0 - p) * rec.backward.corr_len + k.c2) / (k.c1 * rec.forward.corr_len + k.c2);
        ++cnt;
    }
    g.c_g = sum / cnt;
    return g;
}

std::vector<double> predicted_grad_curve(int N, double sigma_g_N, double c_g) {
    std::vector<double> out(N);
    for (int n = 1; n <= N; ++n) out[n - 1] = sigma_g_N * std::pow(static_cast<double>(N) / n, c_g);
    return out;
}

std::pair<double, double> fixed_point_map(double c1, double c2, double p, double r, double r_g, FfnCorrForm form) {
    const double ffn = form == FfnCorrForm::Exact ? ffn_block_corr(r, p) : ffn_block_corr_poly(r, p);
    const double rn = (c1 * (1.0 - p) + c2 * ffn) / (c1 + c2);
    const double rgn = (c1 * (1.0 - p) + c2 * (1.0 - p) * relu_grad_corr_factor(r) * r_g) / (c1 + c2);
    return {rn, rgn};
}

FixedPoint correlation_fixed_point(double c1, double c2, double p, FfnCorrForm form) {
    if (!(c1 + c2 > 0.0) || c1 < 0.0 || c2 < 0.0) throw std::invalid_argument("need c1, c2 >= 0 and c1 + c2 > 0");
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
    auto T = [&](double r) { return fixed_point_map(c1, c2, p, r, 0.0, form).first; };

    FixedPoint fp;
    double r = 0.5;
    bool done = false;
    for (int it = 1; it <= 10000; ++it) {
        const double next = std::clamp(0.5 * r + 0.5 * T(r), 0.0, 1.0);
        fp.iterations = it;
        if (std::abs(next - r) < 1e-13) {
            r = next;
            done = true;
            break;
        }
        r = next;
    }
    if (!done) {
        // T(r) - r is decreasing on [0, 1] (T' < 1), so bisect on it.
        double lo = 0.0, hi = 1.0;
        if (T(hi) - hi >= 0.0) {
            r = 1.0;
        } else {
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                (T(mid) - mid > 0.0 ? lo : hi) = mid;
            }
            r = 0.5 * (lo + hi);
        }
    }
    fp.r_max = r;
    const double k = (1.0 - p) * relu_grad_corr_factor(r);
    fp.r_gmax = c1 * (1.0 - p) / (c1 + c2 - c2 * k);
    return fp;
}

Sensitivity sensitivity(double k, double alpha, int N) {
    if (N < 1) throw std::invalid_argument("N must be >= 1");
    Sensitivity s;
    s.sensitivity_value = k * std::pow(static_cast<double>(N), 1.0 - alpha);
    s.gradient_bound = std::exp(s.sensitivity_value);
    return s;
}

std::pair<double, double> dslm_simple_bracket() {
    const double e4 = std::exp(-4.0);
    return {0.5 + 0.5 * e4, 0.75 + 0.25 * e4};
}

}  // namespace sigprop
