#pragma once

#include <vector>

#include "sigprop/moments.hpp"

namespace sigprop {

enum class BlockKind { Attention, Ffn };

// Attention: [LayerNorm] -> SHA (with W_V) -> Linear(W_O) -> Dropout.
// Ffn:       [LayerNorm] -> Linear d->4d -> ReLU -> Linear 4d->d -> Dropout.
// pre_norm = false drops the leading LayerNorm (Post-LN placement, where the
// block sees the previous LayerNorm's output directly).
struct BlockSpec {
    BlockKind kind = BlockKind::Ffn;
    int d = 1;
    int seq_len = 1;
    double dropout_p = 0.0;
    double sigma_q2 = 0.0, sigma_k2 = 0.0, sigma_v2 = 0.0, sigma_o2 = 0.0;
    double sigma_w1_2 = 0.0, sigma_w2_2 = 0.0;
    bool use_full_attention_formula = true;
    bool pre_norm = true;
};

// The component chain a block is made of, in forward order.
std::vector<ComponentSpec> block_components(const BlockSpec& spec);

MomentVector block_forward(const BlockSpec& spec, const MomentVector& x);
GradMoment block_backward(const BlockSpec& spec, const MomentVector& x, const GradMoment& g);

// Closed forms as printed for the whole blocks (used to cross-check the
// composition and to expose the block-level variants).
double ffn_block_corr(double r, double p);        // 2(1-p)(r/4 + sqrt(1-r^2)/(2pi) + r asin r/(2pi))
double ffn_block_corr_poly(double r, double p);   // (1-p)(1/pi + r/2 + (1/2 - 1/pi) r^2)
// Attention block gradient variance with the block-level form
// d^2 s_v s_o s_g (1 + (L-1) r_g (1-p)) / (L (1-p)^2), input LayerNorm excluded.
double attention_backward_blockform(const BlockSpec& spec, const GradMoment& g);

MomentVector residual_combine(const MomentVector& skip, const MomentVector& block_out, double lambda2, double beta2);
GradMoment residual_combine(const GradMoment& skip, const GradMoment& block_in, double lambda2, double beta2);

}  // namespace sigprop
