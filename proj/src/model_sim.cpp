#include "sigprop/model_sim.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>

namespace sigprop {

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double var, Rng& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(std::max(var, 0.0)));
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
}

Matrix mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    if (p <= 0.0) return {};
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(rng) ? s : 0.0;
    return m;
}

Matrix apply(const Matrix& x, const Matrix& m) { return m.size() ? Matrix(x.cwiseProduct(m)) : x; }

Matrix affine(const Matrix& y, const Vector& gain, const Vector& bias) {
    Matrix out = y * gain.asDiagonal();
    out.rowwise() += bias.transpose();
    return out;
}

Matrix norm(const Matrix& x, const Vector& gain, const Vector& bias, ops::LayerNormCache<double>& c, double eps) {
    if (eps != 0.0) throw std::invalid_argument("LayerNorm epsilon must be 0");
    return affine(ops::layernorm_forward<double>(x, c), gain, bias);
}

Matrix norm_back(const Matrix& g, const Vector& gain, const ops::LayerNormCache<double>& c) {
    return ops::layernorm_backward<double>(Matrix(g * gain.asDiagonal()), c);
}

Matrix attn_branch(const LayerWeights& l, const Matrix& h, const std::array<Matrix, 3>& m, LayerCache& c) {
    const Matrix a = ops::attention_forward<double>(h, l.wq, l.wk, &l.wv, m[0].size() ? &m[0] : nullptr, c.attn);
    return apply(a * l.wo, m[1]);
}

Matrix attn_branch_back(const LayerWeights& l, const Matrix& g, const std::array<Matrix, 3>& m, const LayerCache& c) {
    const Matrix ga = apply(g, m[1]) * l.wo.transpose();
    return ops::attention_backward<double>(ga, l.wq, l.wk, &l.wv, m[0].size() ? &m[0] : nullptr, c.attn);
}

Matrix ffn_branch(const LayerWeights& l, const Matrix& h, const std::array<Matrix, 3>& m, LayerCache& c) {
    c.u = h * l.w1;
    return apply(ops::relu(c.u) * l.w2, m[2]);
}

Matrix ffn_branch_back(const LayerWeights& l, const Matrix& g, const std::array<Matrix, 3>& m, const LayerCache& c) {
    const Matrix gr = apply(g, m[2]) * l.w2.transpose();
    return Matrix(ops::relu_backward(c.u, gr)) * l.w1.transpose();
}

}  // namespace

WeightSet build_weights(const ModelConfig& c, const InitPlan& plan, std::uint64_t seed) {
    validate(c);
    const int N = c.num_layers, d = c.d;
    if (static_cast<int>(plan.layers.size()) != N) throw std::invalid_argument("init plan has wrong number of layers");
    if (c.num_embd_types < 1 || c.num_embd_types > 3) throw std::invalid_argument("num_embd_types must be 1, 2 or 3");
    Rng rng(seed);
    WeightSet w;
    w.placement = c.norm_placement;
    w.d = d;
    w.seq_len = c.seq_len;
    w.num_embd_types = c.num_embd_types;
    w.dropout_p = c.dropout_p;
    w.output_scale = plan.output_scale;
    if (!c.input_moments) {
        w.tok = gaussian(c.vocab_size, d, plan.sigma_embd2, rng);
        if (c.num_embd_types >= 2) w.pos = gaussian(c.seq_len, d, plan.sigma_embd2, rng);
        if (c.num_embd_types >= 3) w.seg = gaussian(2, d, plan.sigma_embd2, rng);
    }
    w.lnx_gain = Vector::Ones(d);
    w.lnx_bias = Vector::Zero(d);
    const double lam = std::sqrt(plan.scale.lambda2(N)), bet = std::sqrt(plan.scale.beta2(N));
    w.layers.resize(N);
    for (int n = 0; n < N; ++n) {
        const LayerInit& li = plan.layers[n];
        LayerWeights& l = w.layers[n];
        l.wq = gaussian(d, d, li.sigma_q2, rng);
        l.wk = gaussian(d, d, li.sigma_k2, rng);
        l.wv = gaussian(d, d, li.sigma_v2, rng);
        l.wo = gaussian(d, d, li.sigma_o2, rng);
        l.w1 = gaussian(d, 4 * d, li.sigma_w1_2, rng);
        l.w2 = gaussian(4 * d, d, li.sigma_w2_2, rng);
        l.ln1_gain = l.ln2_gain = Vector::Ones(d);
        l.ln1_bias = l.ln2_bias = Vector::Zero(d);
        l.lambda = lam;
        l.beta = bet;
    }
    return w;
}

ModelMasks sample_masks(const WeightSet& w, Rng& rng) {
    ModelMasks m;
    const double p = w.dropout_p;
    const int L = w.seq_len, d = w.d;
    m.embd = mask(L, d, p, rng);
    m.layer.resize(w.layers.size());
    for (auto& l : m.layer) {
        l[0] = mask(L, L, p, rng);
        l[1] = mask(L, d, p, rng);
        l[2] = mask(L, d, p, rng);
    }
    return m;
}

Matrix embed_tokens(const WeightSet& w, const std::vector<int>& ids, int boundary) {
    const int L = static_cast<int>(ids.size());
    Matrix e(L, w.d);
    for (int i = 0; i < L; ++i) e.row(i) = w.tok.row(ids[i]);
    if (w.num_embd_types >= 2) e += w.pos.topRows(L);
    if (w.num_embd_types >= 3)
        for (int i = 0; i < L; ++i) e.row(i) += w.seg.row(i < boundary ? 0 : 1);
    return e;
}

Matrix input_stage(const WeightSet& w, const Matrix& e, const ModelMasks& masks) {
    Matrix x = e;
    if (w.placement == NormPlacement::PostLN) {
        ops::LayerNormCache<double> c;
        x = norm(e, w.lnx_gain, w.lnx_bias, c, w.ln_eps);
    }
    return apply(x, masks.embd);
}

ModelTrace model_forward(const WeightSet& w, const Matrix& x0, const ModelMasks& masks) {
    const int N = w.num_layers();
    ModelTrace t;
    t.x0 = x0;
    t.x.resize(N);
    t.mid.resize(N);
    t.cache.resize(N);
    Matrix x = x0;
    for (int n = 0; n < N; ++n) {
        const LayerWeights& l = w.layers[n];
        const auto& m = masks.layer[n];
        LayerCache& c = t.cache[n];
        c.x_in = x;
        if (w.placement == NormPlacement::PreLN) {
            c.h1 = norm(x, l.ln1_gain, l.ln1_bias, c.ln1, w.ln_eps);
            c.s1 = l.lambda * x + l.beta * attn_branch(l, c.h1, m, c);
            c.mid = c.s1;
            c.h2 = norm(c.mid, l.ln2_gain, l.ln2_bias, c.ln2, w.ln_eps);
            c.s2 = l.lambda * c.mid + l.beta * ffn_branch(l, c.h2, m, c);
            x = c.s2;
        } else {
            c.s1 = l.lambda * x + l.beta * attn_branch(l, x, m, c);
            c.mid = norm(c.s1, l.ln1_gain, l.ln1_bias, c.ln1, w.ln_eps);
            c.s2 = l.lambda * c.mid + l.beta * ffn_branch(l, c.mid, m, c);
            x = norm(c.s2, l.ln2_gain, l.ln2_bias, c.ln2, w.ln_eps);
        }
        t.mid[n] = c.mid;
        t.x[n] = x;
    }
    if (w.placement == NormPlacement::PreLN)
        t.y = w.output_scale * norm(x, w.lnx_gain, w.lnx_bias, t.lnx, w.ln_eps);
    else
        t.y = w.output_scale * x;
    return t;
}

ModelGrads model_backward(const WeightSet& w, const ModelTrace& t, const ModelMasks& masks, const Matrix& g,
                          bool seed_at_output) {
    const int N = w.num_layers();
    ModelGrads out;
    out.x.resize(N);
    Matrix gx = g;
    if (seed_at_output) {
        gx = w.output_scale * g;
        if (w.placement == NormPlacement::PreLN) gx = norm_back(gx, w.lnx_gain, t.lnx);
    }
    for (int n = N - 1; n >= 0; --n) {
        out.x[n] = gx;
        const LayerWeights& l = w.layers[n];
        const auto& m = masks.layer[n];
        const LayerCache& c = t.cache[n];
        if (w.placement == NormPlacement::PreLN) {
            Matrix gmid = l.lambda * gx;
            gmid += norm_back(ffn_branch_back(l, l.beta * gx, m, c), l.ln2_gain, c.ln2);
            Matrix gin = l.lambda * gmid;
            gin += norm_back(attn_branch_back(l, l.beta * gmid, m, c), l.ln1_gain, c.ln1);
            gx = std::move(gin);
        } else {
            const Matrix gs2 = norm_back(gx, l.ln2_gain, c.ln2);
            const Matrix gmid = l.lambda * gs2 + ffn_branch_back(l, l.beta * gs2, m, c);
            const Matrix gs1 = norm_back(gmid, l.ln1_gain, c.ln1);
            gx = l.lambda * gs1 + attn_branch_back(l, l.beta * gs1, m, c);
        }
    }
    out.input = std::move(gx);
    return out;
}

LayerProfile EmpiricalProfile::to_layer_profile() const {
    auto fwd = [](const EmpiricalMoments& e) {
        MomentVector m;
        m.mean = e.mean;
        m.variance = e.variance;
        m.corr_len = e.corr_len;
        m.corr_dim = e.corr_dim;
        return m;
    };
    auto bwd = [](const EmpiricalMoments& e) { return GradMoment{e.variance, e.corr_len}; };
    LayerProfile p;
    p.input = fwd(input);
    p.input_grad = bwd(input_grad);
    p.layers.resize(forward.size());
    for (std::size_t n = 0; n < forward.size(); ++n) {
        p.layers[n].index = static_cast<int>(n) + 1;
        p.layers[n].forward = fwd(forward[n]);
        p.layers[n].backward = bwd(backward[n]);
        p.layers[n].mid = fwd(mid[n]);
    }
    return p;
}

double model_sim_flops(const ModelConfig& c) {
    const double L = c.seq_len, d = c.d;
    return 3.0 * c.num_layers * 2.0 * L * d * (12.0 * d + 2.0 * L);
}

EmpiricalProfile run_model_sim(const ModelConfig& c, const InitPlan& plan, const SampleSpec& s, double flop_budget) {
    validate(c);
    if (s.trials < 1) throw std::invalid_argument("trials must be >= 1");
    const double flops = model_sim_flops(c) * s.trials;
    if (flops > flop_budget)
        throw std::runtime_error("model simulation needs " + std::to_string(flops) + " flops, budget is " +
                                 std::to_string(flop_budget));
    const int N = c.num_layers, L = c.seq_len, d = c.d;
    std::unique_ptr<ZipfSampler> zipf;
    if (!c.input_moments) zipf = std::make_unique<ZipfSampler>(c.vocab_size);

    MomentAccumulator in, in_g;
    std::vector<MomentAccumulator> f(N), b(N), mid(N);
    for (int t = 0; t < s.trials; ++t) {
        Rng rng(mix_seed(s.seed, 0x3a0de1, t));
        const WeightSet w = build_weights(c, plan, rng());
        const ModelMasks masks = sample_masks(w, rng);
        Matrix x0;
        if (c.input_moments) {
            SampleSpec xs{L, d, c.input_moments->mean, c.input_moments->variance, c.input_moments->corr_len, 1, 0};
            x0 = sample_correlated(xs, rng);
        } else {
            std::vector<int> ids(L);
            for (int& id : ids) id = (*zipf)(rng);
            const int boundary = sample_segment_boundary(L, rng);
            x0 = input_stage(w, embed_tokens(w, ids, boundary), masks);
        }
        const ModelTrace tr = model_forward(w, x0, masks);
        SampleSpec gs{L, d, 0.0, c.grad_seed.variance, c.grad_seed.corr_len, 1, 0};
        const ModelGrads gr = model_backward(w, tr, masks, sample_correlated(gs, rng), false);
        in.add(x0);
        in_g.add(gr.input);
        for (int n = 0; n < N; ++n) {
            f[n].add(tr.x[n]);
            mid[n].add(tr.mid[n]);
            b[n].add(gr.x[n]);
        }
    }
    EmpiricalProfile p;
    p.input = in.result();
    p.input_grad = in_g.result();
    for (int n = 0; n < N; ++n) {
        p.forward.push_back(f[n].result());
        p.backward.push_back(b[n].result());
        p.mid.push_back(mid[n].result());
    }
    return p;
}

WeightSet fold_residual_scaling(const WeightSet& w) {
    if (w.ln_eps != 0.0) throw std::invalid_argument("folding is exact only for LayerNorm without epsilon");
    WeightSet out = w;
    if (w.placement == NormPlacement::PreLN) {
        // x_n = c_n x~_n with c_n = c_{n-1} lambda; every LayerNorm is scale invariant.
        double c = 1.0;
        for (auto& l : out.layers) {
            if (!(l.lambda > 0.0)) throw std::invalid_argument("cannot fold a zero skip scale");
            c *= l.lambda;
            l.wo *= l.beta / c;
            c *= l.lambda;
            l.w2 *= l.beta / c;
            l.lambda = l.beta = 1.0;
        }
    } else {
        // LN(lambda x + beta f) = LN(x + (beta / lambda) f).
        for (auto& l : out.layers) {
            if (!(l.lambda > 0.0)) throw std::invalid_argument("cannot fold a zero skip scale");
            l.wo *= l.beta / l.lambda;
            l.w2 *= l.beta / l.lambda;
            l.lambda = l.beta = 1.0;
        }
    }
    return out;
}

namespace {

void put(std::ostream& os, const std::string& name, const Matrix& m) {
    os << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
        os << '\n';
    }
}

void put(std::ostream& os, const std::string& name, double v) { put(os, name, Matrix::Constant(1, 1, v)); }

}  // namespace

void save_weights(const WeightSet& w, std::ostream& os) {
    const auto prec = os.precision(std::numeric_limits<double>::max_digits10);
    os << "sigprop-weights 1 " << (w.placement == NormPlacement::PreLN ? "PreLN" : "PostLN") << ' ' << w.d << ' '
       << w.seq_len << ' ' << w.num_embd_types << ' ' << w.dropout_p << ' ' << w.ln_eps << ' ' << w.output_scale
       << ' ' << w.num_layers() << '\n';
    put(os, "tok", w.tok);
    put(os, "pos", w.pos);
    put(os, "seg", w.seg);
    put(os, "lnx_gain", w.lnx_gain);
    put(os, "lnx_bias", w.lnx_bias);
    for (int n = 0; n < w.num_layers(); ++n) {
        const auto& l = w.layers[n];
        const std::string p = "layer" + std::to_string(n) + ".";
        put(os, p + "wq", l.wq);
        put(os, p + "wk", l.wk);
        put(os, p + "wv", l.wv);
        put(os, p + "wo", l.wo);
        put(os, p + "w1", l.w1);
        put(os, p + "w2", l.w2);
        put(os, p + "ln1_gain", l.ln1_gain);
        put(os, p + "ln1_bias", l.ln1_bias);
        put(os, p + "ln2_gain", l.ln2_gain);
        put(os, p + "ln2_bias", l.ln2_bias);
        put(os, p + "lambda", l.lambda);
        put(os, p + "beta", l.beta);
    }
    os.precision(prec);
}

WeightSet load_weights(std::istream& is) {
    std::string magic, placement;
    int version = 0, N = 0;
    WeightSet w;
    is >> magic >> version >> placement >> w.d >> w.seq_len >> w.num_embd_types >> w.dropout_p >> w.ln_eps >>
        w.output_scale >> N;
    if (!is || magic != "sigprop-weights" || version != 1) throw std::runtime_error("not a weight manifest");
    if (placement == "PreLN") w.placement = NormPlacement::PreLN;
    else if (placement == "PostLN") w.placement = NormPlacement::PostLN;
    else throw std::runtime_error("bad placement in manifest: " + placement);

    std::map<std::string, Matrix> t;
    std::string tag, name;
    Eigen::Index rows = 0, cols = 0;
    while (is >> tag) {
        if (tag != "tensor") throw std::runtime_error("malformed manifest near '" + tag + "'");
        is >> name >> rows >> cols;
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) is >> m(i, j);
        if (!is) throw std::runtime_error("truncated tensor " + name);
        t[name] = std::move(m);
    }
    auto get = [&](const std::string& n) -> Matrix& {
        auto it = t.find(n);
        if (it == t.end()) throw std::runtime_error("manifest is missing " + n);
        return it->second;
    };
    w.tok = get("tok");
    w.pos = get("pos");
    w.seg = get("seg");
    w.lnx_gain = get("lnx_gain");
    w.lnx_bias = get("lnx_bias");
    w.layers.resize(N);
    for (int n = 0; n < N; ++n) {
        auto& l = w.layers[n];
        const std::string p = "layer" + std::to_string(n) + ".";
        l.wq = get(p + "wq");
        l.wk = get(p + "wk");
        l.wv = get(p + "wv");
        l.wo = get(p + "wo");
        l.w1 = get(p + "w1");
        l.w2 = get(p + "w2");
        l.ln1_gain = get(p + "ln1_gain");
        l.ln1_bias = get(p + "ln1_bias");
        l.ln2_gain = get(p + "ln2_gain");
        l.ln2_bias = get(p + "ln2_bias");
        l.lambda = get(p + "lambda")(0, 0);
        l.beta = get(p + "beta")(0, 0);
    }
    return w;
}

}  // namespace sigprop
