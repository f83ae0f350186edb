#include "config.hpp"

#include <functional>
#include <map>
#include <type_traits>

namespace solid::config {

using nlohmann::json;

namespace {

struct Entry {
  KeyInfo info;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class Ref>
Entry entry(const char* section, const char* key, const char* tag, const char* why, Ref ref) {
  Entry e;
  e.info = {section, key, tag, why};
  e.get = [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); };
  e.set = [ref, section, key](RunConfig& c, const json& v) {
    auto& slot = ref(c);
    using V = std::decay_t<decltype(slot)>;
    try {
      if constexpr (std::is_same_v<V, double>) {
        if (!v.is_number()) throw std::invalid_argument("not a number");
      } else if constexpr (std::is_integral_v<V> && !std::is_same_v<V, bool>) {
        if (!v.is_number_integer()) throw std::invalid_argument("not an integer");
      }
      slot = v.get<V>();
    } catch (const std::exception&) {
      fail(ErrorKind::Usage, std::string("config ") + section + "." + key + ": wrong type (" + v.dump() + ")");
    }
  };
  return e;
}

#define SOLID_KEY(sec, name, tag, why) \
  entry(#sec, #name, tag, why, [](RunConfig& c) -> auto& { return c.sec.name; })

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      SOLID_KEY(sim, grid_n, "paper", "image size 64 in the appendix hyperparameter table"),
      SOLID_KEY(sim, n_traj, "paper", "1000 trajectories as the working set; the appendix's 100,000 is out of desk scale"),
      SOLID_KEY(sim, reynolds, "paper", "Re = 100 in the data-generation appendix"),
      SOLID_KEY(sim, dt, "chosen", "solver substep; the paper gives none, 1e-3 keeps the Courant number well below 1"),
      SOLID_KEY(sim, snapshot_stride, "chosen", "substeps per saved frame; 0.04 time units per frame, horizon 2.0"),
      SOLID_KEY(sim, n_frames, "paper", "T = 50 saved frames per trajectory"),
      SOLID_KEY(sim, forcing, "paper", "f = -4 cos(4 x2)"),
      SOLID_KEY(sim, grf_alpha, "paper", "GRF smoothness alpha = 2.5"),
      SOLID_KEY(sim, grf_tau, "paper", "GRF inverse correlation length tau = 3.0"),
      SOLID_KEY(scenario, pattern, "paper", "random scattered sensors are the default setting"),
      SOLID_KEY(scenario, density, "paper", "10% observed entries by default"),
      SOLID_KEY(scenario, n_blocks, "paper", "smallest block scenario (two 8x8 blocks)"),
      SOLID_KEY(scenario, regime, "paper", "fixed, instance-specific masks by default"),
      SOLID_KEY(scenario, overlap_fraction, "chosen", "disjoint conditioning and target sets; the overlap term is then inactive"),
      SOLID_KEY(scenario, forecast_fraction, "chosen", "even split between reconstruction and one-step forecasting"),
      SOLID_KEY(scenario, test_traj, "chosen", "last 10% of trajectories held out; evaluation uses their odd frames"),
      SOLID_KEY(scenario, test_instances, "chosen", "50 held-out instances per evaluation"),
      SOLID_KEY(diffusion, steps, "paper", "DDPM with 1000 diffusion steps"),
      SOLID_KEY(diffusion, beta_start, "chosen", "canonical linear DDPM schedule start"),
      SOLID_KEY(diffusion, beta_end, "chosen", "canonical linear DDPM schedule end"),
      SOLID_KEY(diffusion, ddim_steps, "paper", "50 DDIM sampling steps"),
      SOLID_KEY(diffusion, clamp_x0, "chosen", "clip the x0 estimate during sampling to suppress early-step excursions"),
      SOLID_KEY(diffusion, clamp_limit, "chosen", "six standard deviations in normalized units"),
      SOLID_KEY(net, base_dim, "paper", "UNet base dim 64"),
      SOLID_KEY(net, dim_mults, "paper", "dim multipliers (1, 2, 2, 2)"),
      SOLID_KEY(net, res_blocks, "paper", "2 ResNet blocks per stage"),
      SOLID_KEY(net, dropout, "paper", "dropout 0.1"),
      SOLID_KEY(net, norm_groups, "chosen", "group count for group norm, capped by channel count"),
      SOLID_KEY(optimizer, lr, "paper", "learning rate 2e-4 in the appendix table"),
      SOLID_KEY(optimizer, lr_min_ratio, "chosen", "cosine floor; the paper states annealing without a floor for this dataset"),
      SOLID_KEY(optimizer, weight_decay, "paper", "AdamW weight decay 1e-4"),
      SOLID_KEY(optimizer, grad_clip, "paper", "gradient clipping at max-norm 1.0"),
      SOLID_KEY(optimizer, beta1, "chosen", "Adam default"),
      SOLID_KEY(optimizer, beta2, "chosen", "Adam default"),
      SOLID_KEY(optimizer, adam_eps, "chosen", "Adam default"),
      SOLID_KEY(optimizer, batch, "paper", "batch size 64 in the appendix table"),
      SOLID_KEY(optimizer, steps, "paper", "600,000 training steps in the appendix table"),
      SOLID_KEY(optimizer, micro_batch, "chosen", "samples per tape; 0 keeps the whole batch on one tape"),
      SOLID_KEY(optimizer, lambda, "paper", "overlap weight at the low end of the reported [0.05, 0.1] range"),
      SOLID_KEY(optimizer, fill, "chosen", "unsupervised pixels of x0 set to the normalized mean before noising"),
      SOLID_KEY(optimizer, log_every, "chosen", "progress record cadence"),
      SOLID_KEY(optimizer, checkpoint_every, "chosen", "checkpoint cadence for resumable training"),
      SOLID_KEY(eval, K, "paper", "K = 100 conditional samples per query"),
      SOLID_KEY(eval, horizon, "chosen", "rollout depth used for the uncertainty-growth probe"),
      SOLID_KEY(eval, recondition, "chosen", "each member conditions on its own previous prediction"),
      SOLID_KEY(eval, distance_bins, "chosen", "equal-count bins for the distance profile"),
      SOLID_KEY(eval, rbf_length, "chosen", "0 selects the median nearest-sensor spacing per instance"),
  };
  return table;
}

#undef SOLID_KEY

const json& leaf_value(const json& v) {
  if (v.is_object() && v.contains("value")) return v.at("value");
  return v;
}

}  // namespace

std::vector<KeyInfo> key_table() {
  std::vector<KeyInfo> out;
  for (const auto& e : entries()) out.push_back(e.info);
  return out;
}

void RunConfig::validate() const {
  ns_config().validate();
  grf_spec().validate();
  scenario_spec().validate(sim.grid_n);
  denoiser_config().validate();
  denoiser_config().validate_spatial(sim.grid_n, sim.grid_n);
  optim_config().validate();
  loss_config().validate();
  rollout_config().validate();
  (void)fill_rule();
  require(sim.n_traj >= 2, ErrorKind::Validation, "config: sim.n_traj must be >= 2");
  require(scenario.test_traj >= 1 && scenario.test_traj < sim.n_traj, ErrorKind::Validation,
          "config: scenario.test_traj must lie in [1, n_traj)");
  require(scenario.test_instances >= 1, ErrorKind::Validation, "config: scenario.test_instances must be >= 1");
  require(scenario.forecast_fraction >= 0.0 && scenario.forecast_fraction <= 1.0, ErrorKind::Validation,
          "config: scenario.forecast_fraction must lie in [0,1]");
  require(diffusion.steps >= 1 && diffusion.beta_start > 0.0 && diffusion.beta_end < 1.0 &&
              diffusion.beta_start <= diffusion.beta_end,
          ErrorKind::Validation, "config: diffusion schedule out of range");
  require(diffusion.ddim_steps >= 1 && diffusion.ddim_steps <= diffusion.steps, ErrorKind::Validation,
          "config: diffusion.ddim_steps must lie in [1, steps]");
  require(diffusion.clamp_limit > 0.0, ErrorKind::Validation, "config: diffusion.clamp_limit must be positive");
  require(eval.K >= 2, ErrorKind::Validation, "config: eval.K must be >= 2");
  require(eval.distance_bins >= 1, ErrorKind::Validation, "config: eval.distance_bins must be >= 1");
  require(eval.rbf_length >= 0.0, ErrorKind::Validation, "config: eval.rbf_length must be >= 0");
  require(optimizer.log_every >= 1 && optimizer.checkpoint_every >= 1, ErrorKind::Validation,
          "config: optimizer cadences must be >= 1");
}

ns::NSConfig RunConfig::ns_config() const {
  ns::NSConfig c;
  c.grid_n = sim.grid_n;
  c.reynolds = sim.reynolds;
  c.dt = sim.dt;
  c.snapshot_stride = sim.snapshot_stride;
  c.n_frames = sim.n_frames;
  c.forcing = sim.forcing;
  return c;
}

ns::GRFSpec RunConfig::grf_spec() const { return {sim.grf_alpha, sim.grf_tau, seed}; }

masks::ScenarioSpec RunConfig::scenario_spec() const {
  masks::ScenarioSpec s;
  s.pattern = masks::parse_pattern(scenario.pattern);
  s.density = scenario.density;
  s.n_blocks = scenario.n_blocks;
  s.regime = masks::parse_regime(scenario.regime);
  s.overlap_fraction = scenario.overlap_fraction;
  s.seed = seed;
  return s;
}

diffusion::NoiseSchedule RunConfig::schedule() const {
  return {diffusion.steps, diffusion.beta_start, diffusion.beta_end};
}

diffusion::DDIMPlan RunConfig::ddim_plan() const {
  return diffusion::make_ddim_plan(schedule(), diffusion.ddim_steps);
}

diffusion::SamplerOptions RunConfig::sampler_options() const {
  return {diffusion.clamp_x0, diffusion.clamp_limit};
}

net::DenoiserConfig RunConfig::denoiser_config() const {
  net::DenoiserConfig c;
  c.base_dim = net.base_dim;
  c.dim_mults = net.dim_mults;
  c.res_blocks_per_stage = net.res_blocks;
  c.dropout = net.dropout;
  c.max_norm_groups = net.norm_groups;
  return c;
}

train::OptimConfig RunConfig::optim_config() const {
  train::OptimConfig o;
  o.lr = optimizer.lr;
  o.lr_min_ratio = optimizer.lr_min_ratio;
  o.weight_decay = optimizer.weight_decay;
  o.grad_clip = optimizer.grad_clip;
  o.beta1 = optimizer.beta1;
  o.beta2 = optimizer.beta2;
  o.adam_eps = optimizer.adam_eps;
  o.batch = optimizer.batch;
  o.steps = optimizer.steps;
  o.micro_batch = optimizer.micro_batch;
  return o;
}

train::LossConfig RunConfig::loss_config() const { return {optimizer.lambda}; }

train::FillRule RunConfig::fill_rule() const { return train::parse_fill_rule(optimizer.fill); }

infer::RolloutConfig RunConfig::rollout_config() const {
  infer::RolloutConfig r;
  r.horizon = eval.horizon;
  r.K = eval.K;
  if (eval.recondition == "member") {
    r.recondition = infer::Recondition::Member;
  } else if (eval.recondition == "mean") {
    r.recondition = infer::Recondition::Mean;
  } else {
    fail(ErrorKind::Usage, "config eval.recondition: expected member|mean, got '" + eval.recondition + "'");
  }
  return r;
}

RunConfig preset_paper_ns() {
  RunConfig c;
  c.preset = "paper-ns";
  c.optimizer.micro_batch = 4;
  return c;
}

RunConfig preset_toy() {
  RunConfig c;
  c.preset = "toy";
  c.sim.grid_n = 16;
  c.sim.n_traj = 200;
  c.scenario.test_traj = 20;
  c.net.base_dim = 32;
  c.optimizer.batch = 32;
  c.optimizer.steps = 5000;
  c.optimizer.micro_batch = 8;
  c.optimizer.checkpoint_every = 500;
  c.eval.K = 20;
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "toy") return preset_toy();
  if (name == "paper-ns") return preset_paper_ns();
  fail(ErrorKind::Usage, "unknown preset '" + name + "' (expected toy|paper-ns)");
}

json to_json(const RunConfig& cfg, bool annotated) {
  json doc;
  doc["preset"] = cfg.preset;
  doc["seed"] = cfg.seed;
  for (const auto& e : entries()) {
    json v = e.get(cfg);
    if (annotated) v = json{{"value", v}, {"tag", e.info.tag}, {"why", e.info.why}};
    doc[e.info.section][e.info.key] = std::move(v);
  }
  return doc;
}

RunConfig from_json(const json& doc) {
  if (!doc.is_object()) fail(ErrorKind::Usage, "config: top level must be an object");
  RunConfig cfg = preset(doc.contains("preset") ? leaf_value(doc.at("preset")).get<std::string>() : "paper-ns");
  std::map<std::string, std::map<std::string, const Entry*>> index;
  for (const auto& e : entries()) index[e.info.section][e.info.key] = &e;
  for (const auto& [name, value] : doc.items()) {
    if (name == "preset") continue;
    if (name == "seed") {
      const json& s = leaf_value(value);
      if (!s.is_number_unsigned() && !s.is_number_integer()) fail(ErrorKind::Usage, "config seed: wrong type");
      cfg.seed = s.get<std::uint64_t>();
      continue;
    }
    const auto sec = index.find(name);
    if (sec == index.end()) fail(ErrorKind::Usage, "config: unknown section '" + name + "'");
    if (!value.is_object()) fail(ErrorKind::Usage, "config: section '" + name + "' must be an object");
    for (const auto& [key, v] : value.items()) {
      const auto it = sec->second.find(key);
      if (it == sec->second.end()) fail(ErrorKind::Usage, "config: unknown key '" + name + "." + key + "'");
      it->second->set(cfg, leaf_value(v));
    }
  }
  cfg.validate();
  return cfg;
}

void set_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dotted_key == "seed") {
    cfg.seed = std::stoull(value);
    return;
  }
  if (dot == std::string::npos) fail(ErrorKind::Usage, "override '" + dotted_key + "': expected section.key");
  const std::string sec = dotted_key.substr(0, dot), key = dotted_key.substr(dot + 1);
  for (const auto& e : entries()) {
    if (e.info.section != sec || e.info.key != key) continue;
    json v = json::parse(value, nullptr, false);
    if (v.is_discarded()) v = value;  // bare string
    e.set(cfg, v);
    return;
  }
  fail(ErrorKind::Usage, "override: unknown key '" + dotted_key + "'");
}

}  // namespace solid::config
