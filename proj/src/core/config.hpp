#pragma once

// Run configuration: one nested document shared by every command. Each leaf
// carries a tag saying whether its default is a paper value or our choice.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "denoiser.hpp"
#include "diffusion.hpp"
#include "inference.hpp"
#include "masks.hpp"
#include "ns_simulator.hpp"
#include "training.hpp"

namespace solid::config {

struct SimSection {
  int grid_n = 64;
  int n_traj = 1000;
  double reynolds = 100.0;
  double dt = 1e-3;
  int snapshot_stride = 40;
  int n_frames = 50;
  bool forcing = true;
  double grf_alpha = 2.5;
  double grf_tau = 3.0;
};

struct ScenarioSection {
  std::string pattern = "random";
  double density = 0.10;
  int n_blocks = 2;
  std::string regime = "instance";
  double overlap_fraction = 0.0;
  double forecast_fraction = 0.5;  // share of instances that predict the next saved frame
  int test_traj = 100;             // trailing trajectories held out for evaluation
  int test_instances = 50;
};

struct DiffusionSection {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int ddim_steps = 50;
  bool clamp_x0 = true;
  double clamp_limit = 6.0;
};

struct NetSection {
  int base_dim = 64;
  std::vector<int> dim_mults{1, 2, 2, 2};
  int res_blocks = 2;
  double dropout = 0.1;
  int norm_groups = 8;
};

struct OptimizerSection {
  double lr = 2e-4;
  double lr_min_ratio = 0.02;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 64;
  int steps = 600000;
  int micro_batch = 0;
  double lambda = 0.05;
  std::string fill = "mean";
  int log_every = 100;
  int checkpoint_every = 1000;
};

struct EvalSection {
  int K = 100;
  int horizon = 3;
  std::string recondition = "member";
  int distance_bins = 8;
  double rbf_length = 0.0;  // 0 selects the median sensor spacing per instance
};

struct RunConfig {
  std::string preset = "paper-ns";
  std::uint64_t seed = 0;
  SimSection sim;
  ScenarioSection scenario;
  DiffusionSection diffusion;
  NetSection net;
  OptimizerSection optimizer;
  EvalSection eval;

  void validate() const;

  ns::NSConfig ns_config() const;
  ns::GRFSpec grf_spec() const;
  masks::ScenarioSpec scenario_spec() const;
  diffusion::NoiseSchedule schedule() const;
  diffusion::DDIMPlan ddim_plan() const;
  diffusion::SamplerOptions sampler_options() const;
  net::DenoiserConfig denoiser_config() const;
  train::OptimConfig optim_config() const;
  train::LossConfig loss_config() const;
  train::FillRule fill_rule() const;
  infer::RolloutConfig rollout_config() const;
};

/// 64x64, 1000 trajectories, appendix hyperparameters.
RunConfig preset_paper_ns();
/// 16x16, 200 trajectories, 5k steps, K = 20.
RunConfig preset_toy();
RunConfig preset(const std::string& name);

/// Plain form: {"section": {"key": value}}. Annotated form wraps every leaf as
/// {"value", "tag", "why"}.
nlohmann::json to_json(const RunConfig& cfg, bool annotated = false);

/// Starts from the preset named in the document (default paper-ns) and
/// applies every key. Unknown sections or keys are a Usage error. Accepts
/// both the plain and the annotated form.
RunConfig from_json(const nlohmann::json& doc);

/// Applies one "section.key" override given as JSON text (strings may be bare).
void set_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

struct KeyInfo {
  std::string section;
  std::string key;
  std::string tag;  // "paper" or "chosen"
  std::string why;
};

std::vector<KeyInfo> key_table();

}  // namespace solid::config
