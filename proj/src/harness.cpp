#include "sigprop/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sigprop/dslm.hpp"
#include "sigprop/model_sim.hpp"

namespace sigprop {

namespace {

const std::vector<std::string> kComponents = {"Linear", "ReLU", "GeLU", "LayerNorm", "Dropout", "Softmax", "ShaFull"};

template <class T>
T pick(const std::vector<T>& v, Rng& rng) {
    if (v.empty()) throw std::invalid_argument("empty sweep grid");
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

bool centered_kind(Kind k) {
    return k == Kind::ReLU || k == Kind::GeLU || k == Kind::Softmax || k == Kind::ShaNoV || k == Kind::ShaFull;
}

int auto_trials(const SweepConfig& s, int d_in, int d_out) {
    if (s.trials > 0) return s.trials;
    const int m = std::max(1, std::min(d_in, d_out));
    return std::clamp((8192 + m - 1) / m, s.min_trials, s.max_trials);
}

double num(const ordered_json& j, const char* key, double fallback) {
    return j.contains(key) ? j.at(key).get<double>() : fallback;
}

template <class T>
std::vector<T> list(const ordered_json& j, const char* key, const std::vector<T>& fallback) {
    return j.contains(key) ? j.at(key).get<std::vector<T>>() : fallback;
}

ordered_json finite_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

std::string placement_name(NormPlacement p) { return p == NormPlacement::PreLN ? "PreLN" : "PostLN"; }

std::string init_name(InitKind k) {
    switch (k) {
        case InitKind::Xavier: return "Xavier";
        case InitKind::FixedStd: return "FixedStd";
        case InitKind::Dslm: return "Dslm";
        case InitKind::DslmSimple: return "DslmSimple";
    }
    return "?";
}

InitKind init_from_name(const std::string& s) {
    for (InitKind k : {InitKind::Xavier, InitKind::FixedStd, InitKind::Dslm, InitKind::DslmSimple})
        if (init_name(k) == s) return k;
    throw std::invalid_argument("unknown init scheme: " + s);
}

}  // namespace

SweepConfig default_sweep() {
    SweepConfig s;
    s.components = kComponents;
    const std::vector<double> means{-10.0, -3.0, 0.0, 3.0, 10.0};
    const std::vector<double> vars{0.1, 0.3, 1.0, 3.0, 10.0};
    const std::vector<double> corrs{0.0, 0.3, 0.6, 0.9};
    const std::vector<int> lens{100, 200, 400};

    ComponentGrid lin;
    lin.mean = means;
    lin.var_x = lin.var_g = vars;
    lin.r_x = lin.r_g = corrs;
    lin.d_in = lin.d_out = {10, 50, 250};
    lin.seq_len = lens;
    lin.weight_gain = {0.01, 0.1, 1.0, 10.0, 100.0};
    s.grids["Linear"] = lin;

    ComponentGrid act;
    act.var_x = act.var_g = vars;
    act.r_x = act.r_g = corrs;
    act.d_in = act.d_out = {16, 64, 256};
    act.seq_len = lens;
    s.grids["ReLU"] = act;
    s.grids["GeLU"] = act;

    ComponentGrid ln = act;
    ln.mean = means;
    ln.d_in = ln.d_out = {100, 200, 400};
    s.grids["LayerNorm"] = ln;
    ComponentGrid drop = ln;
    drop.dropout_p = {0.0, 0.1, 0.25, 0.5};
    s.grids["Dropout"] = drop;

    ComponentGrid sm;
    sm.var_x = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    sm.var_g = vars;
    sm.r_x = corrs;
    sm.d_in = {16, 64};
    sm.seq_len = {300, 1000, 3000};
    s.grids["Softmax"] = sm;

    ComponentGrid sha;
    sha.var_x = {1.0};
    sha.var_g = vars;
    sha.r_x = sha.r_g = corrs;
    sha.d_in = {100, 200, 400};
    sha.d_out = {32, 64, 128, 256};
    sha.seq_len = {300, 500};
    sha.dropout_p = {0.0, 0.25, 0.5};
    sha.score_var = {0.01, 0.02, 0.05, 0.1};
    s.grids["ShaFull"] = sha;
    return s;
}

std::vector<SweepPoint> sweep_points(const SweepConfig& s) {
    std::vector<SweepPoint> out;
    for (std::size_t ci = 0; ci < s.components.size(); ++ci) {
        const std::string& name = s.components[ci];
        const Kind kind = kind_from_string(name);
        if (kind == Kind::Embedding || kind == Kind::ShaNoV)
            throw std::invalid_argument("component not part of the verification sweep: " + name);
        const auto git = s.grids.find(name);
        if (git == s.grids.end()) throw std::invalid_argument("no grid for component " + name);
        const ComponentGrid& g = git->second;
        for (int i = 0; i < s.points_per_component; ++i) {
            Rng rng(mix_seed(s.master_seed, 0x9e1d + ci, i));
            SweepPoint p;
            p.component = name;
            p.index = i;
            ComponentSpec& c = p.spec;
            c.kind = kind;
            c.seq_len = pick(g.seq_len, rng);
            c.d_in = pick(g.d_in, rng);
            c.d_out = (kind == Kind::Linear || kind == Kind::ShaFull) ? pick(g.d_out, rng) : c.d_in;
            c.dropout_p = (kind == Kind::Dropout || kind == Kind::ShaFull) ? pick(g.dropout_p, rng) : 0.0;
            if (kind == Kind::Linear) c.weight_var = pick(g.weight_gain, rng) / c.d_in;
            if (kind == Kind::ShaFull) {
                c.weight_var = pick(g.score_var, rng) / (static_cast<double>(c.d_in) * c.d_in);
                c.value_var = 1.0 / c.d_in;
            }
            const double mean = centered_kind(kind) ? 0.0 : pick(g.mean, rng);
            const double vx = pick(g.var_x, rng), vg = pick(g.var_g, rng);
            const double rx = pick(g.r_x, rng);
            const double rg = kind == Kind::Softmax ? 0.0 : pick(g.r_g, rng);
            const int trials = kind == Kind::Softmax ? s.min_trials : auto_trials(s, c.d_in, c.d_out);
            const std::uint64_t seed = mix_seed(s.master_seed, 1000 * (ci + 1) + i, 0);
            p.x = SampleSpec{c.seq_len, c.d_in, mean, vx, rx, trials, seed};
            p.g = SampleSpec{c.seq_len, c.d_out, 0.0, vg, rg, trials, seed ^ 0x6a09e667f3bcc909ULL};
            p.r_g = rg;
            out.push_back(p);
        }
    }
    return out;
}

double relative_error(double emp, double theory, double scale) {
    const double den = std::max(std::abs(theory), scale);
    if (den > 0.0) return std::abs(emp - theory) / den;
    return emp == theory ? 0.0 : INFINITY;
}

double percentile(std::vector<double> v, double q) {
    if (v.empty()) return NAN;
    std::sort(v.begin(), v.end());
    const double pos = q * (v.size() - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

PointResult evaluate_point(const SweepPoint& p) {
    PointResult r;
    r.point = p;
    r.emp = run_component_sim(p.spec, p.x, p.g);
    const bool softmax = p.spec.kind == Kind::Softmax;
    MomentVector x;
    x.mean = centered_kind(p.spec.kind) ? 0.0 : r.emp.input.mean;
    x.variance = r.emp.input.variance;
    x.corr_len = softmax ? 0.0 : std::clamp(r.emp.input.corr_len, -1.0, 1.0);
    x.corr_dim = softmax ? std::clamp(r.emp.input.corr_dim, -1.0, 1.0) : 0.0;
    GradMoment g{r.emp.grad_out.variance, softmax ? 0.0 : std::clamp(r.emp.grad_out.corr_len, -1.0, 1.0)};
    r.theory_fwd = component_forward(p.spec, x);
    r.theory_bwd = component_backward(p.spec, x, g);
    return r;
}

void parallel_for(int n, int threads, const std::function<void(int)>& f) {
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, std::max(n, 1));
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto work = [&] {
        for (int i; (i = next++) < n;) {
            try {
                f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

VerificationReport cmd_verify(const SweepConfig& sweep) {
    const auto points = sweep_points(sweep);
    VerificationReport rep;
    rep.points.resize(points.size());
    parallel_for(static_cast<int>(points.size()), sweep.threads,
                 [&](int i) { rep.points[i] = evaluate_point(points[i]); });

    for (const std::string& name : sweep.components) {
        ComponentReport cr;
        cr.component = name;
        const bool softmax = name == "Softmax";
        const bool sha = name == "ShaFull";
        std::vector<std::string> qs = {"mean", "variance", "grad_variance"};
        if (!softmax) {
            qs.push_back("cov_len");
            qs.push_back("grad_cov_len");
        }
        for (const auto& q : qs) {
            QuantityReport qr;
            qr.name = q;
            qr.gate_p99 = !(sha && q == "grad_variance");
            for (const auto& r : rep.points) {
                if (r.point.component != name) continue;
                const auto& tf = r.theory_fwd;
                const auto& tb = r.theory_bwd;
                const auto& ef = r.emp.forward;
                const auto& eb = r.emp.backward;
                double e = 0.0;
                if (q == "mean") e = relative_error(ef.mean, tf.mean, std::sqrt(tf.variance));
                else if (q == "variance") e = relative_error(ef.variance, tf.variance, 0.0);
                else if (q == "grad_variance") e = relative_error(eb.variance, tb.variance, 0.0);
                else if (q == "cov_len") e = relative_error(ef.cov_len, tf.cov_len(), tf.variance);
                else e = relative_error(eb.cov_len, tb.cov_len(), tb.variance);
                qr.errors.push_back(e);
            }
            qr.p50 = percentile(qr.errors, 0.50);
            qr.p90 = percentile(qr.errors, 0.90);
            qr.p99 = percentile(qr.errors, 0.99);
            qr.pass = qr.p50 <= kMedianCap && (!qr.gate_p99 || qr.p99 <= kP99Cap);
            rep.max_p50 = std::max(rep.max_p50, qr.p50);
            if (qr.gate_p99) rep.max_p99_gated = std::max(rep.max_p99_gated, qr.p99);
            rep.pass = rep.pass && qr.pass;
            cr.points = static_cast<int>(qr.errors.size());
            cr.quantities.push_back(std::move(qr));
        }
        rep.components.push_back(std::move(cr));
    }
    return rep;
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line needs two equal-length series");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxx > 0 ? sxy / sxx : 0.0;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (f.intercept + f.slope * x[i]);
        sse += e * e;
    }
    f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
    return f;
}

ProfileTable cmd_profile(const ModelConfig& config, const ProfileOptions& opt) {
    ProfileTable t;
    t.config = config;
    t.plan = plan_init(config);
    const LayerProfile th = propagate_theory(config, t.plan);
    const int N = config.num_layers;
    t.rows.resize(N + 1);
    for (int n = 0; n <= N; ++n) {
        ProfileRow& r = t.rows[n];
        r.layer = n;
        const MomentVector& f = n == 0 ? th.input : th.layers[n - 1].forward;
        const GradMoment& b = n == 0 ? th.input_grad : th.layers[n - 1].backward;
        r.fwd_theory = f.variance;
        r.r_fwd_theory = f.corr_len;
        r.bwd_theory = b.variance;
        r.r_bwd_theory = b.corr_len;
    }
    if (opt.empirical) {
        SampleSpec s;
        s.trials = opt.trials;
        s.seed = opt.seed;
        const EmpiricalProfile e = run_model_sim(config, t.plan, s, opt.flop_budget);
        for (int n = 0; n <= N; ++n) {
            ProfileRow& r = t.rows[n];
            const EmpiricalMoments& f = n == 0 ? e.input : e.forward[n - 1];
            const EmpiricalMoments& b = n == 0 ? e.input_grad : e.backward[n - 1];
            r.fwd_emp = f.variance;
            r.r_fwd_emp = f.corr_defined ? f.corr_len : NAN;
            r.bwd_emp = b.variance;
            r.r_bwd_emp = b.corr_defined ? b.corr_len : NAN;
        }
    }
    return t;
}

std::vector<std::string> preset_names() {
    return {"pre-ln-xavier", "post-ln-xavier", "dslm", "dslm-post-ln", "dslm-simple", "rank-collapse",
            "xavier-dropout"};
}

ModelConfig preset_config(const std::string& name, int N) {
    ModelConfig c;
    c.num_layers = N;
    c.d = 128;
    c.seq_len = 128;
    c.dropout_p = 0.1;
    if (name == "pre-ln-xavier" || name == "xavier-dropout" || name == "post-ln-xavier") {
        if (name == "post-ln-xavier") c.norm_placement = NormPlacement::PostLN;
        // Gradient entering the stack at its stationary correlation.
        c.grad_seed = {1.0, derive_constants(c, plan_init(c)).r_gmax};
    } else if (name == "dslm" || name == "dslm-post-ln" || name == "dslm-simple") {
        c.init.kind = name == "dslm-simple" ? InitKind::DslmSimple : InitKind::Dslm;
        c.scale = ScalePlan{};
        if (name == "dslm-post-ln") c.norm_placement = NormPlacement::PostLN;
    } else if (name == "rank-collapse") {
        // No dropout, value projection at 1/fan_out of a 12-head layer.
        c.dropout_p = 0.0;
        c.init.value_scale = 12.0;
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    return c;
}

FoldCheck cmd_fold_check(const ModelConfig& config, int batches, std::uint64_t seed) {
    const InitPlan plan = plan_init(config);
    ModelConfig c = config;
    if (!c.input_moments) c.input_moments = MomentVector{0.0, 1.0, 0.2, 0.0};
    const WeightSet w = build_weights(c, plan, mix_seed(seed, 0xf01d, 0));
    const WeightSet wf = fold_residual_scaling(w);
    FoldCheck out;
    out.batches = batches;
    for (int b = 0; b < batches; ++b) {
        Rng rng(mix_seed(seed, 0xf01d, b + 1));
        const ModelMasks masks = sample_masks(w, rng);
        SampleSpec xs{c.seq_len, c.d, c.input_moments->mean, c.input_moments->variance, c.input_moments->corr_len, 1, 0};
        const Matrix x0 = sample_correlated(xs, rng);
        SampleSpec gs{c.seq_len, c.d, 0.0, 1.0, 0.0, 1, 0};
        const Matrix g = sample_correlated(gs, rng);
        const ModelTrace t1 = model_forward(w, x0, masks);
        const ModelTrace t2 = model_forward(wf, x0, masks);
        const Matrix g1 = model_backward(w, t1, masks, g, true).input;
        const Matrix g2 = model_backward(wf, t2, masks, g, true).input;
        out.max_forward_rel = std::max(out.max_forward_rel, (t1.y - t2.y).norm() / t1.y.norm());
        out.max_grad_rel = std::max(out.max_grad_rel, (g1 - g2).norm() / g1.norm());
    }
    return out;
}

ordered_json to_json(const ModelConfig& c) {
    ordered_json j;
    j["num_layers"] = c.num_layers;
    j["d"] = c.d;
    j["seq_len"] = c.seq_len;
    j["dropout_p"] = c.dropout_p;
    j["norm_placement"] = placement_name(c.norm_placement);
    j["init"] = {{"kind", init_name(c.init.kind)}, {"std", c.init.std}, {"value_scale", c.init.value_scale}};
    j["scale"] = {{"k", c.scale.k}, {"alpha", c.scale.alpha}, {"normalized", c.scale.normalized}};
    if (c.input_moments)
        j["input_moments"] = {{"mean", c.input_moments->mean},
                              {"variance", c.input_moments->variance},
                              {"corr_len", c.input_moments->corr_len},
                              {"corr_dim", c.input_moments->corr_dim}};
    j["vocab_size"] = c.vocab_size;
    j["num_embd_types"] = c.num_embd_types;
    j["use_full_attention_formula"] = c.use_full_attention_formula;
    j["grad_seed"] = {{"variance", c.grad_seed.variance}, {"corr_len", c.grad_seed.corr_len}};
    j["downscale_output"] = c.downscale_output;
    return j;
}

ModelConfig model_config_from_json(const ordered_json& j, ModelConfig c) {
    if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
    if (j.contains("preset")) c = preset_config(j.at("preset").get<std::string>(), j.value("num_layers", c.num_layers));
    c.num_layers = j.value("num_layers", c.num_layers);
    c.d = j.value("d", c.d);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    if (j.contains("norm_placement")) {
        const auto s = j.at("norm_placement").get<std::string>();
        if (s == "PreLN") c.norm_placement = NormPlacement::PreLN;
        else if (s == "PostLN") c.norm_placement = NormPlacement::PostLN;
        else throw std::invalid_argument("norm_placement must be PreLN or PostLN");
    }
    if (j.contains("init")) {
        const auto& i = j.at("init");
        if (i.contains("kind")) c.init.kind = init_from_name(i.at("kind").get<std::string>());
        c.init.std = num(i, "std", c.init.std);
        c.init.value_scale = num(i, "value_scale", c.init.value_scale);
    }
    if (j.contains("scale")) {
        const auto& s = j.at("scale");
        c.scale.k = num(s, "k", c.scale.k);
        c.scale.alpha = num(s, "alpha", c.scale.alpha);
        c.scale.normalized = s.value("normalized", c.scale.normalized);
    }
    if (j.contains("input_moments")) {
        const auto& m = j.at("input_moments");
        MomentVector v;
        v.mean = num(m, "mean", 0.0);
        v.variance = num(m, "variance", 1.0);
        v.corr_len = num(m, "corr_len", 0.0);
        v.corr_dim = num(m, "corr_dim", 0.0);
        c.input_moments = v;
    }
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.num_embd_types = j.value("num_embd_types", c.num_embd_types);
    c.use_full_attention_formula = j.value("use_full_attention_formula", c.use_full_attention_formula);
    if (j.contains("grad_seed")) {
        c.grad_seed.variance = num(j.at("grad_seed"), "variance", c.grad_seed.variance);
        c.grad_seed.corr_len = num(j.at("grad_seed"), "corr_len", c.grad_seed.corr_len);
    }
    c.downscale_output = j.value("downscale_output", c.downscale_output);
    validate(c);
    return c;
}

ordered_json to_json(const InitPlan& p) {
    ordered_json j;
    j["sigma_embd2"] = p.sigma_embd2;
    j["scale"] = {{"k", p.scale.k}, {"alpha", p.scale.alpha}, {"normalized", p.scale.normalized}};
    j["output_scale"] = p.output_scale;
    ordered_json layers = ordered_json::array();
    for (std::size_t n = 0; n < p.layers.size(); ++n) {
        const auto& l = p.layers[n];
        ordered_json e;
        e["layer"] = n + 1;
        e["sigma_q2"] = l.sigma_q2;
        e["sigma_k2"] = l.sigma_k2;
        e["sigma_v2"] = l.sigma_v2;
        e["sigma_o2"] = l.sigma_o2;
        e["sigma_w1_2"] = l.sigma_w1_2;
        e["sigma_w2_2"] = l.sigma_w2_2;
        if (n < p.corr_schedule.size()) e["corr_in"] = p.corr_schedule[n];
        layers.push_back(e);
    }
    j["layers"] = layers;
    return j;
}

ordered_json to_json(const SweepConfig& s) {
    ordered_json j;
    j["components"] = s.components;
    j["points_per_component"] = s.points_per_component;
    j["trials"] = s.trials;
    j["min_trials"] = s.min_trials;
    j["max_trials"] = s.max_trials;
    j["master_seed"] = s.master_seed;
    ordered_json grids;
    for (const auto& name : s.components) {
        const auto it = s.grids.find(name);
        if (it == s.grids.end()) continue;
        const auto& g = it->second;
        grids[name] = {{"mean", g.mean},       {"var_x", g.var_x},         {"var_g", g.var_g},
                       {"r_x", g.r_x},         {"r_g", g.r_g},             {"d_in", g.d_in},
                       {"d_out", g.d_out},     {"seq_len", g.seq_len},     {"dropout_p", g.dropout_p},
                       {"weight_gain", g.weight_gain}, {"score_var", g.score_var}};
    }
    j["grids"] = grids;
    return j;
}

SweepConfig sweep_config_from_json(const ordered_json& j, SweepConfig s) {
    if (!j.is_object()) throw std::invalid_argument("sweep config must be a JSON object");
    s.components = list(j, "components", s.components);
    s.points_per_component = j.value("points_per_component", s.points_per_component);
    s.trials = j.value("trials", s.trials);
    s.min_trials = j.value("min_trials", s.min_trials);
    s.max_trials = j.value("max_trials", s.max_trials);
    s.master_seed = j.value("master_seed", s.master_seed);
    s.threads = j.value("threads", s.threads);
    if (j.contains("grids")) {
        for (const auto& [name, g] : j.at("grids").items()) {
            ComponentGrid& c = s.grids[name];
            c.mean = list(g, "mean", c.mean);
            c.var_x = list(g, "var_x", c.var_x);
            c.var_g = list(g, "var_g", c.var_g);
            c.r_x = list(g, "r_x", c.r_x);
            c.r_g = list(g, "r_g", c.r_g);
            c.d_in = list(g, "d_in", c.d_in);
            c.d_out = list(g, "d_out", c.d_out);
            c.seq_len = list(g, "seq_len", c.seq_len);
            c.dropout_p = list(g, "dropout_p", c.dropout_p);
            c.weight_gain = list(g, "weight_gain", c.weight_gain);
            c.score_var = list(g, "score_var", c.score_var);
        }
    }
    if (s.points_per_component < 1) throw std::invalid_argument("points_per_component must be >= 1");
    return s;
}

ordered_json to_json(const VerificationReport& r, bool with_points) {
    ordered_json j;
    j["pass"] = r.pass;
    j["max_p50"] = r.max_p50;
    j["max_p99_gated"] = r.max_p99_gated;
    j["caps"] = {{"p50", kMedianCap}, {"p99", kP99Cap}};
    ordered_json comps = ordered_json::array();
    for (const auto& c : r.components) {
        ordered_json cj;
        cj["component"] = c.component;
        cj["points"] = c.points;
        ordered_json qs = ordered_json::array();
        for (const auto& q : c.quantities)
            qs.push_back({{"quantity", q.name},
                          {"p50", finite_or_null(q.p50)},
                          {"p90", finite_or_null(q.p90)},
                          {"p99", finite_or_null(q.p99)},
                          {"gate_p99", q.gate_p99},
                          {"pass", q.pass}});
        cj["quantities"] = qs;
        comps.push_back(cj);
    }
    j["components"] = comps;
    if (with_points) {
        ordered_json pts = ordered_json::array();
        for (const auto& p : r.points) {
            const auto& s = p.point.spec;
            pts.push_back({{"component", p.point.component},
                           {"index", p.point.index},
                           {"d_in", s.d_in},
                           {"d_out", s.d_out},
                           {"seq_len", s.seq_len},
                           {"dropout_p", s.dropout_p},
                           {"weight_var", s.weight_var},
                           {"value_var", s.value_var},
                           {"mean_x", p.point.x.mean},
                           {"var_x", p.point.x.variance},
                           {"r_x", p.point.x.corr_len},
                           {"var_g", p.point.g.variance},
                           {"r_g", p.point.r_g},
                           {"trials", p.point.x.trials},
                           {"theory",
                            {{"mean", p.theory_fwd.mean},
                             {"variance", p.theory_fwd.variance},
                             {"cov_len", p.theory_fwd.cov_len()},
                             {"grad_variance", p.theory_bwd.variance},
                             {"grad_cov_len", p.theory_bwd.cov_len()}}},
                           {"empirical",
                            {{"mean", p.emp.forward.mean},
                             {"variance", p.emp.forward.variance},
                             {"cov_len", finite_or_null(p.emp.forward.cov_len)},
                             {"grad_variance", p.emp.backward.variance},
                             {"grad_cov_len", finite_or_null(p.emp.backward.cov_len)}}}});
        }
        j["points"] = pts;
    }
    return j;
}

ordered_json to_json(const ProfileTable& t) {
    ordered_json j;
    j["config"] = to_json(t.config);
    ordered_json rows = ordered_json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"layer", r.layer},
                        {"sigma2_fwd_theory", r.fwd_theory},
                        {"sigma2_fwd_emp", finite_or_null(r.fwd_emp)},
                        {"sigma2_bwd_theory", r.bwd_theory},
                        {"sigma2_bwd_emp", finite_or_null(r.bwd_emp)},
                        {"r_fwd_theory", r.r_fwd_theory},
                        {"r_fwd_emp", finite_or_null(r.r_fwd_emp)},
                        {"r_bwd_theory", r.r_bwd_theory},
                        {"r_bwd_emp", finite_or_null(r.r_bwd_emp)}});
    j["rows"] = rows;
    return j;
}

ordered_json header_block(std::uint64_t seed, const ordered_json& config) {
    ordered_json h;
    h["tool"] = kToolName;
    h["version"] = kToolVersion;
    h["seed"] = seed;
    h["config"] = config;
    return h;
}

std::string profile_csv(const ProfileTable& t, const ordered_json& header) {
    std::ostringstream os;
    for (const auto& [k, v] : header.items()) os << "# " << k << ": " << v.dump() << '\n';
    os << "layer,sigma2_fwd_theory,sigma2_fwd_emp,sigma2_bwd_theory,sigma2_bwd_emp,r_fwd_theory,r_fwd_emp,"
          "r_bwd_theory,r_bwd_emp\n";
    char buf[64];
    auto cell = [&](double v) -> std::string {
        if (!std::isfinite(v)) return "";
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return buf;
    };
    for (const auto& r : t.rows)
        os << r.layer << ',' << cell(r.fwd_theory) << ',' << cell(r.fwd_emp) << ',' << cell(r.bwd_theory) << ','
           << cell(r.bwd_emp) << ',' << cell(r.r_fwd_theory) << ',' << cell(r.r_fwd_emp) << ','
           << cell(r.r_bwd_theory) << ',' << cell(r.r_bwd_emp) << '\n';
    return os.str();
}

}  // namespace sigprop
