#include <cmath>

#include "doctest.h"
#include "sigprop/dslm.hpp"
#include "sigprop/harness.hpp"

using namespace sigprop;
using doctest::Approx;

namespace {

SweepConfig small_sweep(const std::string& component, int points) {
    SweepConfig s = default_sweep();
    s.components = {component};
    s.points_per_component = points;
    s.max_trials = 16;
    s.min_trials = 8;
    auto& g = s.grids[component];
    g.d_in = g.d_out = {16, 32};
    g.seq_len = {32, 64};
    return s;
}

}  // namespace

TEST_CASE("percentiles and relative error") {
    const std::vector<double> v{5, 1, 4, 2, 3};
    CHECK(percentile(v, 0.5) == 3.0);
    CHECK(percentile(v, 0.0) == 1.0);
    CHECK(percentile(v, 1.0) == 5.0);
    CHECK(percentile(v, 0.25) == 2.0);
    CHECK(percentile({7.0}, 0.99) == 7.0);
    CHECK(std::isnan(percentile({}, 0.5)));
    CHECK(relative_error(1.1, 1.0, 0.0) == Approx(0.1));
    CHECK(relative_error(0.1, 0.0, 2.0) == Approx(0.05));
    CHECK(relative_error(0.0, 0.0, 0.0) == 0.0);
}

TEST_CASE("line fit") {
    const auto f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
    CHECK(f.slope == Approx(2.0));
    CHECK(f.intercept == Approx(1.0));
    CHECK(f.r2 == Approx(1.0));
    CHECK_THROWS(fit_line({1}, {1}));
}

TEST_CASE("sweep points are reproducible") {
    const SweepConfig s = default_sweep();
    const auto a = sweep_points(s), b = sweep_points(s);
    REQUIRE(a.size() == s.components.size() * s.points_per_component);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x.seed == b[i].x.seed);
        CHECK(a[i].spec.d_in == b[i].spec.d_in);
        CHECK(a[i].x.variance == b[i].x.variance);
    }
    SweepConfig t = s;
    t.master_seed += 1;
    CHECK(sweep_points(t)[0].x.seed != a[0].x.seed);
}

TEST_CASE("dropout without dropping has zero error") {
    SweepConfig s = small_sweep("Dropout", 4);
    s.grids["Dropout"].dropout_p = {0.0};
    const auto r = cmd_verify(s);
    for (const auto& q : r.components[0].quantities) {
        INFO(q.name);
        CHECK(q.p99 == 0.0);
    }
    CHECK(r.pass);
}

TEST_CASE("report percentiles are monotone") {
    const auto r = cmd_verify(small_sweep("GeLU", 12));
    for (const auto& c : r.components)
        for (const auto& q : c.quantities) {
            CHECK(q.p50 <= q.p90);
            CHECK(q.p90 <= q.p99);
            CHECK(q.errors.size() == 12);
        }
}

TEST_CASE("reports do not depend on scheduling") {
    SweepConfig s = small_sweep("Linear", 6);
    s.threads = 1;
    const std::string one = to_json(cmd_verify(s), true).dump();
    s.threads = 3;
    const std::string three = to_json(cmd_verify(s), true).dump();
    CHECK(one == three);
}

TEST_CASE("unknown components are rejected") {
    SweepConfig s = default_sweep();
    s.components = {"Embedding"};
    CHECK_THROWS(sweep_points(s));
    s.components = {"Conv"};
    CHECK_THROWS(sweep_points(s));
}

TEST_CASE("config json round trip") {
    ModelConfig c = preset_config("dslm", 24);
    c.input_moments = MomentVector{0, 2.0, 0.3, 0};
    const ModelConfig r = model_config_from_json(to_json(c));
    CHECK(to_json(r).dump() == to_json(c).dump());
    CHECK_THROWS(model_config_from_json(ordered_json::parse(R"({"norm_placement": "Mid"})")));
    CHECK_THROWS(model_config_from_json(ordered_json::parse(R"({"dropout_p": 1.5})")));

    const SweepConfig s = sweep_config_from_json(ordered_json::parse(R"({"components": ["ReLU"], "trials": 5})"));
    CHECK(s.components == std::vector<std::string>{"ReLU"});
    CHECK(s.trials == 5);
    CHECK(sweep_config_from_json(to_json(s)).grids.at("ReLU").d_in == s.grids.at("ReLU").d_in);
}

TEST_CASE("profile with one layer") {
    ModelConfig c = preset_config("pre-ln-xavier", 1);
    ProfileOptions o;
    o.empirical = false;
    const ProfileTable t = cmd_profile(c, o);
    REQUIRE(t.rows.size() == 2);
    const LayerProfile th = propagate_theory(c, t.plan);
    const MomentVector x0 = th.input;
    const BlockSpec a = attention_spec(c, t.plan.layers[0]), f = ffn_spec(c, t.plan.layers[0]);
    const MomentVector mid = residual_combine(x0, block_forward(a, x0), 1.0, 1.0);
    const MomentVector out = residual_combine(mid, block_forward(f, mid), 1.0, 1.0);
    CHECK(t.rows[0].fwd_theory == Approx(x0.variance));
    CHECK(t.rows[1].fwd_theory == Approx(out.variance));
    CHECK(t.rows[1].r_fwd_theory == Approx(out.corr_len));
    CHECK(std::isnan(t.rows[1].fwd_emp));
}

TEST_CASE("dslm profile is flat") {
    ModelConfig c = preset_config("dslm", 96);
    c.use_full_attention_formula = false;
    ProfileOptions o;
    o.empirical = false;
    for (const auto& r : cmd_profile(c, o).rows)
        if (r.layer > 0) CHECK(r.fwd_theory == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("profile csv carries a header") {
    ModelConfig c = preset_config("post-ln-xavier", 3);
    ProfileOptions o;
    o.empirical = false;
    const auto t = cmd_profile(c, o);
    const std::string csv = profile_csv(t, header_block(99, to_json(c)));
    CHECK(csv.rfind("# tool: \"sigprop\"", 0) == 0);
    CHECK(csv.find("# seed: 99") != std::string::npos);
    CHECK(csv.find("layer,sigma2_fwd_theory,sigma2_fwd_emp,sigma2_bwd_theory") != std::string::npos);
}

TEST_CASE("presets") {
    for (const auto& name : preset_names()) CHECK_NOTHROW(validate(preset_config(name, 12)));
    CHECK_THROWS(preset_config("nope", 12));
    const ModelConfig pre = preset_config("pre-ln-xavier", 12);
    CHECK(pre.grad_seed.corr_len > 0.8);
    CHECK(preset_config("rank-collapse", 12).dropout_p == 0.0);
}

TEST_CASE("fold check on a toy model") {
    ModelConfig c = preset_config("dslm", 4);
    c.d = 32;
    c.seq_len = 16;
    const FoldCheck f = cmd_fold_check(c, 3, 5);
    CHECK(f.batches == 3);
    CHECK(f.max_forward_rel <= 1e-6);
    CHECK(f.max_grad_rel <= 1e-6);
}

TEST_CASE("parallel_for surfaces errors") {
    std::vector<int> hits(20, 0);
    parallel_for(20, 4, [&](int i) { hits[i] = i; });
    for (int i = 0; i < 20; ++i) CHECK(hits[i] == i);
    CHECK_THROWS(parallel_for(5, 2, [](int i) {
        if (i == 3) throw std::runtime_error("boom");
    }));
}
