#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "sigprop/dslm.hpp"
#include "sigprop/harness.hpp"
#include "sigprop/model_sim.hpp"

using namespace sigprop;

namespace {

ordered_json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return ordered_json::parse(in);
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << text;
        return;
    }
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write " + out);
    os << text;
}

struct ModelArgs {
    std::string config;
    std::string preset = "pre-ln-xavier";
    std::optional<int> layers;

    void add(CLI::App* app) {
        app->add_option("--config", config, "model config JSON");
        app->add_option("--preset", preset, "named configuration")
            ->check(CLI::IsMember(preset_names()));
        app->add_option("--layers", layers, "number of layers")->check(CLI::PositiveNumber);
    }

    ModelConfig resolve() const {
        ModelConfig c = preset_config(preset, layers.value_or(12));
        if (!config.empty()) c = model_config_from_json(read_json(config), c);
        if (layers) c.num_layers = *layers;
        validate(c);
        return c;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Moment propagation and Monte Carlo checks for transformer signal propagation"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(kToolVersion));

    std::uint64_t seed = 20240601;
    std::string out, format = "json";
    app.add_option("--seed", seed, "master seed")->envname("SIGPROP_SEED");
    app.add_option("--out", out, "output file (default stdout)");
    app.add_option("--format", format, "output format")->check(CLI::IsMember({"json", "csv"}));

    // verify-components
    auto* verify = app.add_subcommand("verify-components", "Monte Carlo sweep of every component");
    std::string sweep_path;
    int trials = 0, points = 0, threads = 0;
    bool with_points = false;
    verify->add_option("--config", sweep_path, "sweep config JSON");
    verify->add_option("--trials", trials, "trials per point (0: automatic)");
    verify->add_option("--points", points, "points per component");
    verify->add_option("--threads", threads, "worker threads (0: all cores)");
    verify->add_flag("--with-points", with_points, "include per-point results");

    // profile-model
    auto* profile = app.add_subcommand("profile-model", "layer-wise theory and simulated moments");
    ModelArgs profile_args;
    profile_args.add(profile);
    int profile_trials = 4;
    double budget = 1e14;
    bool theory_only = false;
    profile->add_option("--trials", profile_trials, "simulated batches")->check(CLI::PositiveNumber);
    profile->add_option("--budget", budget, "FLOP budget for the simulation");
    profile->add_flag("--theory-only", theory_only, "skip the simulation");

    // plan-init
    auto* plan = app.add_subcommand("plan-init", "per-layer initialisation variances");
    ModelArgs plan_args;
    plan_args.add(plan);
    std::string weights_path;
    plan->add_option("--save-weights", weights_path, "sample weights and write a manifest");

    // fixed-point
    auto* fixed = app.add_subcommand("fixed-point", "correlation fixed point and growth constants");
    ModelArgs fixed_args;
    fixed_args.add(fixed);
    std::optional<double> c1, c2, fp_p;
    fixed->add_option("--c1", c1, "c1 (with --c2, --p skips the model)");
    fixed->add_option("--c2", c2);
    fixed->add_option("--p", fp_p);

    // fold-check
    auto* fold = app.add_subcommand("fold-check", "fold residual scaling into weights and compare");
    ModelArgs fold_args;
    fold_args.add(fold);
    int batches = 10;
    fold->add_option("--batches", batches)->check(CLI::PositiveNumber);

    // sensitivity
    auto* sens = app.add_subcommand("sensitivity", "gradient bound for a residual scaling");
    double k = 2.0, alpha = 1.0;
    int sens_layers = 12;
    sens->add_option("--k", k);
    sens->add_option("--alpha", alpha);
    sens->add_option("--layers", sens_layers)->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*verify) {
            SweepConfig s = default_sweep();
            if (!sweep_path.empty()) s = sweep_config_from_json(read_json(sweep_path), s);
            s.master_seed = seed;
            if (trials > 0) s.trials = trials;
            if (points > 0) s.points_per_component = points;
            s.threads = threads;
            const VerificationReport r = cmd_verify(s);
            ordered_json j = header_block(seed, to_json(s));
            j["report"] = to_json(r, with_points);
            if (format == "csv") {
                std::ostringstream os;
                for (const auto& [key, v] : header_block(seed, to_json(s)).items())
                    os << "# " << key << ": " << v.dump() << '\n';
                os << "component,quantity,p50,p90,p99,gate_p99,pass\n";
                for (const auto& c : r.components)
                    for (const auto& q : c.quantities)
                        os << c.component << ',' << q.name << ',' << q.p50 << ',' << q.p90 << ',' << q.p99 << ','
                           << q.gate_p99 << ',' << q.pass << '\n';
                emit(os.str(), out);
            } else {
                emit(j.dump(2) + "\n", out);
            }
            for (const auto& c : r.components)
                for (const auto& q : c.quantities)
                    std::fprintf(stderr, "%-10s %-14s p50 %.4f  p99 %.4f  %s\n", c.component.c_str(),
                                 q.name.c_str(), q.p50, q.p99, q.pass ? "ok" : "FAIL");
            return r.pass ? 0 : 1;
        }
        if (*profile) {
            const ModelConfig c = profile_args.resolve();
            ProfileOptions opt;
            opt.empirical = !theory_only;
            opt.trials = profile_trials;
            opt.seed = seed;
            opt.flop_budget = budget;
            const ProfileTable t = cmd_profile(c, opt);
            const ordered_json h = header_block(seed, to_json(c));
            if (format == "csv") {
                emit(profile_csv(t, h), out);
            } else {
                ordered_json j = h;
                j["profile"] = to_json(t);
                emit(j.dump(2) + "\n", out);
            }
            return 0;
        }
        if (*plan) {
            const ModelConfig c = plan_args.resolve();
            const InitPlan p = plan_init(c);
            ordered_json j = header_block(seed, to_json(c));
            j["plan"] = to_json(p);
            emit(j.dump(2) + "\n", out);
            if (!weights_path.empty()) {
                std::ofstream os(weights_path);
                if (!os) throw std::runtime_error("cannot write " + weights_path);
                save_weights(build_weights(c, p, seed), os);
            }
            return 0;
        }
        if (*fixed) {
            ordered_json j;
            if (c1 && c2 && fp_p) {
                const FixedPoint fp = correlation_fixed_point(*c1, *c2, *fp_p);
                j = header_block(seed, {{"c1", *c1}, {"c2", *c2}, {"p", *fp_p}});
                j["r_max"] = fp.r_max;
                j["r_gmax"] = fp.r_gmax;
                j["iterations"] = fp.iterations;
            } else {
                const ModelConfig c = fixed_args.resolve();
                const InitPlan p = plan_init(c);
                const DerivedConstants d = derive_constants(c, p);
                const GrowthLaws g = growth_laws(c, p);
                j = header_block(seed, to_json(c));
                j["constants"] = {{"c1", d.c1}, {"c2", d.c2}, {"c3", d.c3}, {"c4", d.c4},
                                  {"c5", d.c5}, {"c6", d.c6}, {"r_max", d.r_max}, {"r_gmax", d.r_gmax}};
                j["growth"] = {{"forward", g.forward_order},
                               {"backward", g.backward_order},
                               {"sensitivity", g.sensitivity_order},
                               {"c_g", g.c_g}};
            }
            emit(j.dump(2) + "\n", out);
            return 0;
        }
        if (*fold) {
            const ModelConfig c = fold_args.resolve();
            const FoldCheck f = cmd_fold_check(c, batches, seed);
            ordered_json j = header_block(seed, to_json(c));
            j["batches"] = f.batches;
            j["max_forward_rel"] = f.max_forward_rel;
            j["max_grad_rel"] = f.max_grad_rel;
            j["pass"] = f.max_forward_rel <= 1e-6 && f.max_grad_rel <= 1e-6;
            emit(j.dump(2) + "\n", out);
            return j["pass"].get<bool>() ? 0 : 1;
        }
        if (*sens) {
            const Sensitivity s = sensitivity(k, alpha, sens_layers);
            ordered_json j = header_block(seed, {{"k", k}, {"alpha", alpha}, {"num_layers", sens_layers}});
            j["sensitivity"] = s.sensitivity_value;
            j["gradient_bound"] = s.gradient_bound;
            emit(j.dump(2) + "\n", out);
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "sigprop: %s\n", e.what());
        return 2;
    }
    return 0;
}
