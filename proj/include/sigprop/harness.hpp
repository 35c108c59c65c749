#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sigprop/config.hpp"
#include "sigprop/model.hpp"
#include "sigprop/sim.hpp"

namespace sigprop {

using ordered_json = nlohmann::ordered_json;

inline constexpr const char* kToolName = "sigprop";
inline constexpr const char* kToolVersion = "1.0.0";

// Candidate values per swept parameter. weight_gain is d_in * sigma_w^2 for
// Linear; score_var is d_in^2 * sigma_q^2 sigma_k^2 for attention; rows is the
// number of softmax rows.
struct ComponentGrid {
    std::vector<double> mean{0.0};
    std::vector<double> var_x{1.0};
    std::vector<double> var_g{1.0};
    std::vector<double> r_x{0.0};
    std::vector<double> r_g{0.0};
    std::vector<int> d_in{64};
    std::vector<int> d_out{64};
    std::vector<int> seq_len{128};
    std::vector<double> dropout_p{0.0};
    std::vector<double> weight_gain{1.0};
    std::vector<double> score_var{0.1};
};

struct SweepConfig {
    std::vector<std::string> components;
    std::map<std::string, ComponentGrid> grids;
    int points_per_component = 40;
    int trials = 0;         // 0: ceil(8192 / min(d_in, d_out)) clamped to [min_trials, max_trials]
    int min_trials = 64;
    int max_trials = 512;
    std::uint64_t master_seed = 20240601;
    int threads = 0;        // 0: hardware concurrency
};

SweepConfig default_sweep();

struct SweepPoint {
    std::string component;
    int index = 0;
    ComponentSpec spec;
    SampleSpec x, g;
    double r_g = 0.0;
};

std::vector<SweepPoint> sweep_points(const SweepConfig& sweep);

struct QuantityReport {
    std::string name;
    std::vector<double> errors;  // relative errors, one per point, point order
    double p50 = 0.0, p90 = 0.0, p99 = 0.0;
    bool gate_p99 = true;
    bool pass = true;
};

struct ComponentReport {
    std::string component;
    int points = 0;
    std::vector<QuantityReport> quantities;
};

struct PointResult {
    SweepPoint point;
    MomentVector theory_fwd;
    GradMoment theory_bwd;
    ComponentSimResult emp;
};

struct VerificationReport {
    std::vector<ComponentReport> components;
    std::vector<PointResult> points;
    double max_p50 = 0.0;
    double max_p99_gated = 0.0;
    bool pass = true;
};

inline constexpr double kMedianCap = 0.05;
inline constexpr double kP99Cap = 0.10;

// |emp - theory| / max(|theory|, scale).
double relative_error(double emp, double theory, double scale);
// Linear interpolation between order statistics.
double percentile(std::vector<double> v, double q);

// Theory evaluated at the realised input / gradient statistics of the run.
PointResult evaluate_point(const SweepPoint& p);
VerificationReport cmd_verify(const SweepConfig& sweep);

struct LineFit {
    double slope = 0.0, intercept = 0.0, r2 = 0.0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct ProfileOptions {
    bool empirical = true;
    int trials = 4;
    std::uint64_t seed = 20240601;
    double flop_budget = 1e14;
};

struct ProfileRow {
    int layer = 0;
    double fwd_theory = 0.0, fwd_emp = NAN;
    double bwd_theory = 0.0, bwd_emp = NAN;
    double r_fwd_theory = 0.0, r_fwd_emp = NAN;
    double r_bwd_theory = 0.0, r_bwd_emp = NAN;
};

struct ProfileTable {
    ModelConfig config;
    InitPlan plan;
    std::vector<ProfileRow> rows;  // layer 0 is the model input
};

ProfileTable cmd_profile(const ModelConfig& config, const ProfileOptions& opt);

// Named model configurations used by the profile figures.
ModelConfig preset_config(const std::string& name, int num_layers);
std::vector<std::string> preset_names();

struct FoldCheck {
    int batches = 0;
    double max_forward_rel = 0.0;
    double max_grad_rel = 0.0;
};
FoldCheck cmd_fold_check(const ModelConfig& config, int batches, std::uint64_t seed);

// Config / report (de)serialisation.
ordered_json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const ordered_json& j, ModelConfig base = {});
ordered_json to_json(const InitPlan& p);
ordered_json to_json(const SweepConfig& s);
SweepConfig sweep_config_from_json(const ordered_json& j, SweepConfig base = default_sweep());
ordered_json to_json(const VerificationReport& r, bool with_points);
ordered_json to_json(const ProfileTable& t);

ordered_json header_block(std::uint64_t seed, const ordered_json& config);
std::string profile_csv(const ProfileTable& t, const ordered_json& header);

// Runs f(i) for i in [0, n) on a worker pool; f must not share mutable state.
void parallel_for(int n, int threads, const std::function<void(int)>& f);

}  // namespace sigprop
