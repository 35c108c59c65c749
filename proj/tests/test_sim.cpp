#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fd_cases.hpp"
#include "oracles.hpp"
#include "sigprop/dslm.hpp"
#include "sigprop/model.hpp"
#include "sigprop/model_sim.hpp"
#include "sigprop/sim.hpp"

using namespace sigprop;
using doctest::Approx;

TEST_CASE("correlated sampler") {
    SampleSpec s{512, 512, 0.0, 2.0, 0.5, 64, 7};
    MomentAccumulator acc;
    Rng rng(mix_seed(7, 0, 0));
    for (int t = 0; t < s.trials; ++t) acc.add(sample_correlated(s, rng));
    const auto m = acc.result();
    CHECK(m.corr_len == Approx(0.5).epsilon(0.04));
    CHECK(m.variance == Approx(2.0).epsilon(0.05));

    const SampleSpec z{16, 8, 1.5, 0.0, 0.0, 1, 3};
    const Matrix c = sample_correlated(z);
    CHECK((c.array() == 1.5).all());
}

TEST_CASE("sampled correlation is consistent with its standard error") {
    SampleSpec s{256, 64, 0.0, 1.0, 0.3, 64, 9};
    MomentAccumulator acc;
    Rng rng(mix_seed(9, 1, 0));
    for (int t = 0; t < s.trials; ++t) acc.add(sample_correlated(s, rng));
    const auto m = acc.result();
    CHECK(std::abs(m.cov_len - 0.3) <= 3 * m.se_cov_len + 1e-3);
}

TEST_CASE("moment estimator edge cases") {
    const auto k = measure_moments(Matrix::Constant(8, 8, 3.0));
    CHECK(k.variance == Approx(0.0).epsilon(1e-15));
    CHECK_FALSE(k.corr_defined);
    Matrix pm(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) pm(i, j) = ((i + j) % 2) ? 1.0 : -1.0;
    CHECK(measure_moments(pm).mean == Approx(0.0));
}

TEST_CASE("seeds are deterministic and distinct") {
    CHECK(mix_seed(1, 2, 3) == mix_seed(1, 2, 3));
    CHECK(mix_seed(1, 2, 3) != mix_seed(1, 2, 4));
    CHECK(mix_seed(1, 2, 3) != mix_seed(2, 2, 3));
    const SampleSpec s{8, 8, 0.0, 1.0, 0.2, 1, 42};
    CHECK(sample_correlated(s) == sample_correlated(s));
}

TEST_CASE("linear forward variance") {
    ComponentSpec s;
    s.kind = Kind::Linear;
    s.d_in = 512;
    s.d_out = 64;
    s.seq_len = 64;
    s.weight_var = 1.0 / 512;
    const auto r = run_component_sim(s, SampleSpec{64, 512, 0, 1, 0, 64, 1}, SampleSpec{64, 64, 0, 1, 0, 64, 2});
    CHECK(std::abs(r.forward.variance - 1.0) < 4 * r.forward.se_variance + 1e-3);
}

TEST_CASE("relu halves gradient variance") {
    ComponentSpec s;
    s.kind = Kind::ReLU;
    s.d_in = s.d_out = 64;
    s.seq_len = 128;
    const auto r = run_component_sim(s, SampleSpec{128, 64, 0, 1, 0, 64, 3}, SampleSpec{128, 64, 0, 1, 0, 64, 4});
    CHECK(r.backward.variance / r.grad_out.variance == Approx(0.5).epsilon(0.02));
}

TEST_CASE("gelu covariance against simulation") {
    ComponentSpec s;
    s.kind = Kind::GeLU;
    s.d_in = s.d_out = 128;
    s.seq_len = 128;
    const auto r = run_component_sim(s, SampleSpec{128, 128, 0, 1, 0.5, 128, 5}, SampleSpec{128, 128, 0, 1, 0, 8, 6});
    CHECK(r.forward.cov_len == Approx(gelu_cov(1.0, 0.5)).epsilon(0.05));
}

TEST_CASE("analytic backward passes match finite differences") {
    for (const auto& c : fd::all_cases()) {
        INFO(c.name);
        CHECK(c.rel_error <= 1e-4);
    }
}

TEST_CASE("zipf sampler") {
    ZipfSampler z(32000);
    double sum = 0.0;
    for (int i = 0; i < 32000; ++i) sum += z.prob(i);
    CHECK(sum == Approx(1.0).epsilon(1e-9));
    CHECK(z.prob(0) / z.prob(9) == Approx(10.0));
    Rng rng(1);
    int ones = 0;
    for (int i = 0; i < 100000; ++i) ones += z(rng) == 0;
    CHECK(ones / 100000.0 == Approx(z.prob(0)).epsilon(0.03));
    for (int i = 0; i < 1000; ++i) {
        const int b = sample_segment_boundary(256, rng);
        CHECK(b >= 1);
        CHECK(b <= 255);
    }
}

TEST_CASE("embedding correlation in simulation") {
    const auto e = run_embedding_sim(32000, 256, 64, 3, 0.01, 256, 17);
    const double th = embedding_moments(32000, 256, 3, 0.01).corr_len;
    CHECK(e.corr_len == Approx(th).epsilon(0.03));
}

TEST_CASE("fold residual scaling") {
    ModelConfig c;
    c.num_layers = 4;
    c.d = 32;
    c.seq_len = 16;
    c.init.kind = InitKind::Dslm;
    c.input_moments = MomentVector{0, 1, 0.2, 0};
    const InitPlan plan = plan_init(c);
    const WeightSet w = build_weights(c, plan, 3);
    const WeightSet f = fold_residual_scaling(w);
    for (const auto& l : f.layers) {
        CHECK(l.lambda == 1.0);
        CHECK(l.beta == 1.0);
    }
    Rng rng(5);
    const ModelMasks m = sample_masks(w, rng);
    const Matrix x = fd::normal(16, 32, rng);
    const Matrix y0 = model_forward(w, x, m).y, y1 = model_forward(f, x, m).y;
    CHECK((y0 - y1).norm() / y0.norm() < 1e-10);

    c.scale = ScalePlan::vanilla();
    c.init.kind = InitKind::Xavier;
    const WeightSet v = build_weights(c, plan_init(c), 3);
    const WeightSet vf = fold_residual_scaling(v);
    CHECK((vf.layers[0].wo - v.layers[0].wo).norm() == 0.0);

    WeightSet eps = w;
    eps.ln_eps = 1e-5;
    CHECK_THROWS(fold_residual_scaling(eps));
}

TEST_CASE("weight manifest round trip") {
    ModelConfig c;
    c.num_layers = 2;
    c.d = 8;
    c.seq_len = 8;
    c.vocab_size = 50;
    const WeightSet w = build_weights(c, plan_init(c), 9);
    std::stringstream ss;
    save_weights(w, ss);
    const WeightSet r = load_weights(ss);
    REQUIRE(r.num_layers() == 2);
    CHECK(r.layers[1].w2 == w.layers[1].w2);
    CHECK(r.layers[0].lambda == w.layers[0].lambda);
    CHECK(r.lnx_gain == w.lnx_gain);
    CHECK(r.dropout_p == w.dropout_p);
    std::stringstream bad("not a manifest");
    CHECK_THROWS(load_weights(bad));
}

TEST_CASE("model simulation budget guard") {
    ModelConfig c;
    c.num_layers = 192;
    c.d = 1024;
    c.seq_len = 1024;
    SampleSpec s;
    s.trials = 4;
    CHECK_THROWS(run_model_sim(c, plan_init(c), s, 1e12));
}

TEST_CASE("small model matches theory") {
    ModelConfig c;
    c.num_layers = 4;
    c.d = 64;
    c.seq_len = 64;
    c.init.kind = InitKind::Dslm;
    c.input_moments = MomentVector{0, 1, 0.3, 0};
    const InitPlan plan = plan_init(c);
    SampleSpec s;
    s.trials = 32;
    s.seed = 11;
    const auto e = run_model_sim(c, plan, s);
    const auto th = propagate_theory(c, plan);
    for (int n = 0; n < 4; ++n) {
        CHECK(e.forward[n].variance == Approx(th.layers[n].forward.variance).epsilon(0.1));
        CHECK(e.forward[n].corr_len == Approx(th.layers[n].forward.corr_len).epsilon(0.1));
    }
}
