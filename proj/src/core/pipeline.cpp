#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "image.hpp"

namespace solid::pipeline {

using nlohmann::json;

namespace {

// Stream salts keep unrelated random draws independent under one master seed.
constexpr std::uint64_t kTaskSalt = 0x7A51;
constexpr std::uint64_t kTestSalt = 0x7E57;
constexpr std::uint64_t kBatchSalt = 0xBA7C;
constexpr std::uint64_t kStepSalt = 0x57E9;
constexpr std::uint64_t kInitSalt = 0x1417;
constexpr std::uint64_t kSampleSalt = 0x5A3B;
constexpr std::uint64_t kRolloutSalt = 0x4011;

std::uint64_t stream(const config::RunConfig& cfg, std::uint64_t salt) { return derive_seed(cfg.seed, salt); }

const char* task_name(train::Task t) { return t == train::Task::Forecast ? "forecast" : "reconstruction"; }

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

infer::Ensemble ensemble_at(const io::Container& c, std::size_t row, std::size_t first, std::size_t K) {
  infer::Ensemble e;
  for (std::size_t k = 0; k < K; ++k) e.members.push_back(c.frame(row, first + k));
  return e;
}

void check_ensembles(const std::vector<Instance>& tests, const io::Container& ens, const char* what) {
  if (ens.n_traj != tests.size() || ens.masks.size() != tests.size()) {
    fail(ErrorKind::Data, std::string(what) + ": ensemble container holds " + std::to_string(ens.n_traj) +
                              " instances, config enumerates " + std::to_string(tests.size()));
  }
  for (std::size_t q = 0; q < tests.size(); ++q) {
    if (ens.masks[q].instance_id != tests[q].id) {
      fail(ErrorKind::Data, std::string(what) + ": instance id mismatch at row " + std::to_string(q));
    }
  }
}

train::TrainExample make_example(const Model& m, const io::Container& data, const Instance& in,
                                 const io::MaskRecord& rec) {
  train::TrainExample ex;
  ex.input = train::zscore(data.frame(std::size_t(in.traj), std::size_t(in.t_in)), m.norm);
  ex.target = train::zscore(data.frame(std::size_t(in.traj), std::size_t(in.t_out)), m.norm);
  ex.masks = {rec.m_i, rec.m_o, m.cfg.scenario_spec(), rec.instance_id};
  ex.task = in.task;
  return ex;
}

diffusion::EpsPredictor predictor(const Model& m) {
  return [&m](const Field& x, const Field& c, const Mask& mi, int tau) { return m.net.predict(x, c, mi, tau); };
}

std::string csv_join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s + '\n';
}

}  // namespace

std::vector<Instance> train_instances(const config::RunConfig& cfg) {
  const int n_train = cfg.sim.n_traj - cfg.scenario.test_traj;
  const auto frames = ns::train_frame_indices(cfg.sim.n_frames);
  std::vector<Instance> out;
  out.reserve(std::size_t(n_train) * frames.size());
  const std::uint64_t salt = stream(cfg, kTaskSalt);
  for (int t = 0; t < n_train; ++t) {
    for (std::size_t j = 0; j < frames.size(); ++j) {
      Instance in;
      in.id = std::uint64_t(t) * frames.size() + j;
      in.traj = t;
      in.t_in = in.t_out = frames[j];
      const double u = double(derive_seed(salt, in.id) >> 11) * 0x1.0p-53;
      if (j + 1 < frames.size() && u < cfg.scenario.forecast_fraction) {
        in.task = train::Task::Forecast;
        in.t_out = frames[j + 1];
      }
      out.push_back(in);
    }
  }
  return out;
}

std::vector<Instance> test_instances(const config::RunConfig& cfg) {
  const int first = cfg.sim.n_traj - cfg.scenario.test_traj;
  const auto frames = ns::heldout_frame_indices(cfg.sim.n_frames);
  const int room = int(frames.size()) - cfg.eval.horizon;
  if (!(room >= 1)) fail(ErrorKind::Validation, "test instances: too few held-out frames for eval.horizon");
  std::vector<Instance> out;
  for (int q = 0; q < cfg.scenario.test_instances; ++q) {
    Rng rng = make_rng(stream(cfg, kTestSalt), std::uint64_t(q));
    Instance in;
    in.id = kTestIdBase + std::uint64_t(q);
    in.traj = first + q % cfg.scenario.test_traj;
    // Alternate tasks; a forecast_fraction of 0 or 1 collapses to one task.
    const bool forecast = cfg.scenario.forecast_fraction >= 1.0 ||
                          (cfg.scenario.forecast_fraction > 0.0 && q % 2 == 1);
    if (forecast) {
      const auto j = std::size_t(uniform_int(rng, 0, std::uint64_t(room - 1)));
      in.task = train::Task::Forecast;
      in.t_in = frames[j];
      in.t_out = frames[j + 1];
    } else {
      const auto j = std::size_t(uniform_int(rng, 0, frames.size() - 1));
      in.t_in = in.t_out = frames[j];
    }
    out.push_back(in);
  }
  return out;
}

json to_json(const Instance& in) {
  return {{"id", in.id}, {"traj", in.traj}, {"t_in", in.t_in}, {"t_out", in.t_out}, {"task", task_name(in.task)}};
}

json deviations() {
  return {{"solver", "pseudo-spectral on [-pi, pi]^2; integrating factor for diffusion, Heun for advection and "
                     "forcing; 2/3-rule dealiasing"},
          {"attention_omitted", true},
          {"ensemble_members_sampled_one_at_a_time", true},
          {"zero_baseline", "constant normalized-zero field, i.e. the training mean in physical units"}};
}

io::Container simulate(const config::RunConfig& cfg) {
  const auto ds = ns::simulate_dataset(cfg.sim.n_traj, cfg.ns_config(), cfg.grf_spec(), cfg.seed);
  const auto n = std::uint32_t(cfg.sim.grid_n);
  auto c = io::Container::with_shape(std::uint32_t(cfg.sim.n_traj), std::uint32_t(cfg.sim.n_frames), n, n);
  for (std::size_t t = 0; t < ds.trajectories.size(); ++t)
    for (std::size_t f = 0; f < ds.trajectories[t].frames.size(); ++f) c.set_frame(t, f, ds.trajectories[t].frames[f]);
  return c;
}

io::Container make_masks(const config::RunConfig& cfg) {
  const auto spec = cfg.scenario_spec();
  io::Container c;
  c.rows = c.cols = std::uint32_t(cfg.sim.grid_n);
  auto add = [&](const std::vector<Instance>& list) {
    for (const auto& in : list) {
      auto pair = masks::make_pair(spec, cfg.sim.grid_n, in.id);
      c.masks.push_back({in.id, std::move(pair.m_i), std::move(pair.m_o)});
    }
  };
  add(train_instances(cfg));
  add(test_instances(cfg));
  return c;
}

MaskIndex::MaskIndex(const io::Container& masks) : src_(&masks) {
  sorted_.reserve(masks.masks.size());
  for (std::size_t i = 0; i < masks.masks.size(); ++i) sorted_.emplace_back(masks.masks[i].instance_id, i);
  std::sort(sorted_.begin(), sorted_.end());
}

const io::MaskRecord& MaskIndex::at(std::uint64_t id) const {
  const auto it = std::lower_bound(sorted_.begin(), sorted_.end(), std::make_pair(id, std::size_t(0)));
  if (it == sorted_.end() || it->first != id) fail(ErrorKind::Data, "mask set has no pair for instance " + std::to_string(id));
  return src_->masks[it->second];
}

void check_dataset(const config::RunConfig& cfg, const io::Container& data) {
  const auto n = std::uint32_t(cfg.sim.grid_n);
  if (data.n_traj != std::uint32_t(cfg.sim.n_traj) || data.n_frames != std::uint32_t(cfg.sim.n_frames) ||
      data.rows != n || data.cols != n) {
    fail(ErrorKind::Data, "dataset shape " + std::to_string(data.n_traj) + "x" + std::to_string(data.n_frames) + "x" +
                              std::to_string(data.rows) + "x" + std::to_string(data.cols) +
                              " does not match the config");
  }
}

train::NormStats training_norm(const config::RunConfig& cfg, const io::Container& data, const MaskIndex& masks) {
  check_dataset(cfg, data);
  const auto list = train_instances(cfg);
  std::vector<Field> fields;
  std::vector<Mask> observed;
  fields.reserve(2 * list.size());
  observed.reserve(2 * list.size());
  for (const auto& in : list) {
    const auto& rec = masks.at(in.id);
    fields.push_back(data.frame(std::size_t(in.traj), std::size_t(in.t_in)));
    observed.push_back(rec.m_i);
    fields.push_back(data.frame(std::size_t(in.traj), std::size_t(in.t_out)));
    observed.push_back(rec.m_o);
  }
  return train::normalize_stats(fields, observed);
}

Model init_model(const config::RunConfig& cfg, const io::Container& data, const MaskIndex& masks) {
  Model m{net::Denoiser<float>::initialize(cfg.denoiser_config(), stream(cfg, kInitSalt)), {},
          training_norm(cfg, data, masks), cfg};
  m.adam.m.assign(m.net.param_count(), 0.0f);
  m.adam.v.assign(m.net.param_count(), 0.0f);
  return m;
}

void adopt_config(Model& m, const config::RunConfig& cfg) {
  cfg.validate();
  json have = config::to_json(m.cfg), want = config::to_json(cfg);
  for (auto* doc : {&have, &want}) {
    doc->erase("eval");
    doc->erase("preset");
    for (const char* k : {"ddim_steps", "clamp_x0", "clamp_limit"}) (*doc)["diffusion"].erase(k);
  }
  if (have != want) {
    const json diff = json::diff(have, want);
    fail(ErrorKind::Data, "config disagrees with the model at " + diff.at(0).at("path").get<std::string>() +
                              "; only eval and sampler keys may change after training");
  }
  m.cfg = cfg;
}

io::Checkpoint to_checkpoint(const Model& m) {
  json meta = {{"format", "solid-checkpoint"},
               {"step", m.adam.step},
               {"norm", {{"mu", m.norm.mu}, {"sigma", m.norm.sigma}}},
               {"param_count", m.net.param_count()},
               {"config", config::to_json(m.cfg)}};
  io::Checkpoint c;
  c.meta = meta.dump();
  c.params.assign(m.net.flat().begin(), m.net.flat().end());
  c.adam_m = m.adam.m;
  c.adam_v = m.adam.v;
  return c;
}

Model from_checkpoint(const io::Checkpoint& c) {
  const json meta = json::parse(c.meta, nullptr, false);
  if (meta.is_discarded() || !meta.contains("config")) fail(ErrorKind::Data, "checkpoint: malformed metadata");
  const auto cfg = config::from_json(meta.at("config"));
  if (net::count_params(cfg.denoiser_config()) != c.params.size()) {
    fail(ErrorKind::Data, "checkpoint: parameter count disagrees with its config");
  }
  Model m{net::Denoiser<float>(cfg.denoiser_config(), c.params), {}, {}, cfg};
  m.adam.m = c.adam_m;
  m.adam.v = c.adam_v;
  m.adam.step = meta.at("step").get<std::int64_t>();
  m.norm = {meta.at("norm").at("mu").get<double>(), meta.at("norm").at("sigma").get<double>()};
  return m;
}

void train_until(Model& model, const io::Container& data, const MaskIndex& masks, std::int64_t until,
                 const Progress& progress) {
  const auto& cfg = model.cfg;
  check_dataset(cfg, data);
  const auto list = train_instances(cfg);
  const auto optim = cfg.optim_config();
  const auto schedule = cfg.schedule();
  const auto loss = cfg.loss_config();
  const auto fill = cfg.fill_rule();
  std::vector<train::TrainExample> batch(std::size_t(optim.batch));
  while (model.adam.step < until) {
    const auto s = std::uint64_t(model.adam.step);
    Rng pick = make_rng(stream(cfg, kBatchSalt), s);
    for (auto& ex : batch) {
      const auto& in = list[std::size_t(uniform_int(pick, 0, list.size() - 1))];
      ex = make_example(model, data, in, masks.at(in.id));
    }
    const auto metrics = train::train_step(model.net, batch, schedule, loss, optim, model.adam,
                                           derive_seed(stream(cfg, kStepSalt), s), fill);
    if (progress) progress(metrics);
  }
}

Field conditioning(const Model& model, const io::Container& data, const Instance& in, const Mask& m_i) {
  return masks::restrict(train::zscore(data.frame(std::size_t(in.traj), std::size_t(in.t_in)), model.norm), m_i);
}

io::Container sample(const Model& model, const io::Container& data, const io::Container& masks) {
  const auto& cfg = model.cfg;
  check_dataset(cfg, data);
  const MaskIndex index(masks);
  const auto tests = test_instances(cfg);
  const int K = cfg.eval.K;
  auto out = io::Container::with_shape(std::uint32_t(tests.size()), std::uint32_t(K), data.rows, data.cols);
  const auto schedule = cfg.schedule();
  const auto plan = cfg.ddim_plan();
  const auto pred = predictor(model);
  for (std::size_t q = 0; q < tests.size(); ++q) {
    const auto& rec = index.at(tests[q].id);
    const Field x_c = conditioning(model, data, tests[q], rec.m_i);
    auto ens = infer::sample_ensemble(pred, x_c, rec.m_i, schedule, plan, K,
                                      derive_seed(stream(cfg, kSampleSalt), tests[q].id), cfg.sampler_options());
    ens = infer::affine(ens, model.norm.sigma, model.norm.mu);
    for (int k = 0; k < K; ++k) out.set_frame(q, std::size_t(k), ens.members[std::size_t(k)]);
    out.masks.push_back(rec);
  }
  return out;
}

std::vector<Instance> forecast_subset(const std::vector<Instance>& all) {
  std::vector<Instance> out;
  for (const auto& in : all)
    if (in.task == train::Task::Forecast) out.push_back(in);
  return out;
}

io::Container rollout(const Model& model, const io::Container& data, const io::Container& masks) {
  const auto& cfg = model.cfg;
  check_dataset(cfg, data);
  const MaskIndex index(masks);
  const auto tests = forecast_subset(test_instances(cfg));
  require(!tests.empty(), ErrorKind::Validation, "rollout: no forecast instances in the test set");
  const auto rc = cfg.rollout_config();
  auto out = io::Container::with_shape(std::uint32_t(tests.size()), std::uint32_t(rc.K * rc.horizon), data.rows,
                                       data.cols);
  const auto schedule = cfg.schedule();
  const auto plan = cfg.ddim_plan();
  const auto pred = predictor(model);
  for (std::size_t q = 0; q < tests.size(); ++q) {
    const auto& rec = index.at(tests[q].id);
    const Field x_c = conditioning(model, data, tests[q], rec.m_i);
    const auto steps = infer::rollout(pred, x_c, rec.m_i, schedule, plan, rc,
                                      derive_seed(stream(cfg, kRolloutSalt), tests[q].id), cfg.sampler_options());
    for (int h = 0; h < rc.horizon; ++h) {
      const auto phys = infer::affine(steps[std::size_t(h)], model.norm.sigma, model.norm.mu);
      for (int k = 0; k < rc.K; ++k) out.set_frame(q, std::size_t(h * rc.K + k), phys.members[std::size_t(k)]);
    }
    out.masks.push_back(rec);
  }
  return out;
}

Report evaluate(const config::RunConfig& cfg, const io::Container& data, const io::Container& ensembles) {
  check_dataset(cfg, data);
  const auto tests = test_instances(cfg);
  check_ensembles(tests, ensembles, "evaluate");
  const std::size_t K = ensembles.n_frames;
  Report rep;
  rep.csv = csv_join({"instance_id", "traj", "t_in", "t_out", "task", "K", "crps", "crps_anchor", "crps_target_only",
                      "crps_conditioned", "crps_void", "crps_full", "mse_mean", "mae_mean", "mean_sigma_target"});
  std::vector<double> crps, full, cond, only, mse, mae;
  std::vector<double> crps_by_task[2];
  double max_void_sigma = 0.0;
  for (std::size_t q = 0; q < tests.size(); ++q) {
    const auto& in = tests[q];
    const auto& rec = ensembles.masks[q];
    const auto ens = ensemble_at(ensembles, q, 0, K);
    const Field truth = data.frame(std::size_t(in.traj), std::size_t(in.t_out));
    const auto r = metrics::region_crps(ens, truth, rec.m_i, rec.m_o, metrics::Truth::Dense);
    const Field mean = infer::ensemble_mean(ens);
    const double e2 = metrics::masked_mse(mean, truth, rec.m_o);
    const double e1 = metrics::masked_mae(mean, truth, rec.m_o);
    double sig = 0.0;
    if (K >= 2) {
      const auto u = infer::uncertainty_map(ens);
      std::size_t n = 0;
      for (std::size_t i = 0; i < u.sigma.size(); ++i) {
        if (rec.m_o[i]) {
          sig += u.sigma[i];
          ++n;
        }
        if (!rec.m_i[i] && !rec.m_o[i]) max_void_sigma = std::max(max_void_sigma, u.sigma[i]);
      }
      sig /= double(n);
    }
    crps.push_back(r.target);
    crps_by_task[in.task == train::Task::Forecast].push_back(r.target);
    if (r.full) full.push_back(*r.full);
    if (r.conditioned) cond.push_back(*r.conditioned);
    if (r.target_only) only.push_back(*r.target_only);
    mse.push_back(e2);
    mae.push_back(e1);
    rep.csv += csv_join({std::to_string(in.id), std::to_string(in.traj), std::to_string(in.t_in),
                         std::to_string(in.t_out), task_name(in.task), std::to_string(K), fmt(r.target),
                         fmt(r.anchor), fmt(r.target_only), fmt(r.conditioned), fmt(r.void_px), fmt(r.full),
                         fmt(e2), fmt(e1), K >= 2 ? fmt(sig) : std::string()});
  }
  rep.summary = {{"instances", tests.size()},
                 {"K", K},
                 {"crps_mean", mean_of(crps)},
                 {"crps_reconstruction", mean_of(crps_by_task[0])},
                 {"crps_forecast", mean_of(crps_by_task[1])},
                 {"crps_conditioned", mean_of(cond)},
                 {"crps_target_only", mean_of(only)},
                 {"crps_full", mean_of(full)},
                 {"mse_mean", mean_of(mse)},
                 {"mae_mean", mean_of(mae)},
                 {"max_void_sigma", max_void_sigma}};
  return rep;
}

Report baseline(const config::RunConfig& cfg, const io::Container& data, const io::Container& masks,
                const train::NormStats& norm, const Model* untrained_model) {
  check_dataset(cfg, data);
  const MaskIndex index(masks);
  const auto tests = test_instances(cfg);
  Report rep;
  rep.csv = csv_join({"method", "instance_id", "task", "crps", "crps_conditioned", "crps_target_only", "crps_full"});
  std::vector<std::string> names{"nn", "rbf", "persistence", "zero"};
  if (untrained_model) names.push_back("untrained");
  std::vector<std::vector<double>> crps(names.size()), full(names.size()), cond(names.size()), only(names.size());
  for (const auto& in : tests) {
    const auto& rec = index.at(in.id);
    const Field frame = data.frame(std::size_t(in.traj), std::size_t(in.t_in));
    const Field truth = data.frame(std::size_t(in.traj), std::size_t(in.t_out));
    const Field x_c = masks::restrict(frame, rec.m_i);
    for (std::size_t m = 0; m < names.size(); ++m) {
      infer::Ensemble ens;
      const std::string& name = names[m];
      if (name == "nn") {
        ens.members = {metrics::preinterp_nn(x_c, rec.m_i)};
      } else if (name == "rbf") {
        const double s = cfg.eval.rbf_length > 0.0 ? cfg.eval.rbf_length : metrics::median_sensor_spacing(rec.m_i);
        ens.members = {metrics::preinterp_rbf(x_c, rec.m_i, s)};
      } else if (name == "persistence") {
        ens.members = {metrics::persistence_baseline(x_c, rec.m_i)};
      } else if (name == "zero") {
        ens.members = {Field(truth.rows, truth.cols, norm.mu)};
      } else {
        const auto& um = *untrained_model;
        ens = infer::sample_ensemble(predictor(um), conditioning(um, data, in, rec.m_i), rec.m_i, um.cfg.schedule(),
                                     um.cfg.ddim_plan(), um.cfg.eval.K,
                                     derive_seed(stream(um.cfg, kSampleSalt), in.id), um.cfg.sampler_options());
        ens = infer::affine(ens, um.norm.sigma, um.norm.mu);
      }
      const auto r = metrics::region_crps(ens, truth, rec.m_i, rec.m_o, metrics::Truth::Dense);
      crps[m].push_back(r.target);
      full[m].push_back(*r.full);
      if (r.conditioned) cond[m].push_back(*r.conditioned);
      if (r.target_only) only[m].push_back(*r.target_only);
      rep.csv += csv_join({name, std::to_string(in.id), task_name(in.task), fmt(r.target), fmt(r.conditioned),
                           fmt(r.target_only), fmt(r.full)});
    }
  }
  rep.summary = json::object();
  rep.summary["instances"] = tests.size();
  for (std::size_t m = 0; m < names.size(); ++m) {
    rep.summary["methods"][names[m]] = {{"crps_mean", mean_of(crps[m])},
                                        {"crps_conditioned", mean_of(cond[m])},
                                        {"crps_target_only", mean_of(only[m])},
                                        {"crps_full", mean_of(full[m])}};
  }
  return rep;
}

CalibrationOutput calibrate(const config::RunConfig& cfg, const io::Container& data, const io::Container& ensembles,
                            int n_maps) {
  check_dataset(cfg, data);
  const auto tests = test_instances(cfg);
  check_ensembles(tests, ensembles, "calibrate");
  const std::size_t K = ensembles.n_frames;
  require(K >= 2, ErrorKind::Validation, "calibrate: needs K >= 2 members");
  std::vector<infer::Ensemble> ens;
  std::vector<Field> truths;
  for (std::size_t q = 0; q < tests.size(); ++q) {
    ens.push_back(ensemble_at(ensembles, q, 0, K));
    truths.push_back(data.frame(std::size_t(tests[q].traj), std::size_t(tests[q].t_out)));
  }
  std::vector<metrics::CalibrationInstance> inst;
  for (std::size_t q = 0; q < tests.size(); ++q)
    inst.push_back({&ens[q], &truths[q], &ensembles.masks[q].m_i, &ensembles.masks[q].m_o});
  const auto cal = metrics::calibration(inst, cfg.eval.distance_bins);

  CalibrationOutput out;
  out.report.csv = csv_join({"instance_id", "mean_sigma_target", "crps"});
  for (std::size_t q = 0; q < tests.size(); ++q)
    out.report.csv += csv_join({std::to_string(tests[q].id), fmt(cal.instance_sigma[q]), fmt(cal.instance_crps[q])});
  json profile = json::array();
  std::vector<double> bar;
  for (const auto& b : cal.profile) {
    profile.push_back({{"d_lo", b.d_lo}, {"d_hi", b.d_hi}, {"mean_distance", b.mean_distance},
                       {"mean_sigma", b.mean_sigma}, {"count", b.count}});
    bar.push_back(b.mean_sigma);
  }
  out.report.summary = {{"instances", tests.size()},
                        {"K", K},
                        {"pixel_pearson", opt(cal.pixel_pearson)},
                        {"pixel_spearman", opt(cal.pixel_spearman)},
                        {"instance_pearson", opt(cal.instance_pearson)},
                        {"instance_spearman", opt(cal.instance_spearman)},
                        {"profile_trend_spearman", opt(cal.profile_trend)},
                        {"distance_profile", profile}};

  for (int q = 0; q < std::min<int>(n_maps, int(tests.size())); ++q) {
    const auto u = infer::uncertainty_map(ens[std::size_t(q)]);
    Field err(u.mean.rows, u.mean.cols);
    for (std::size_t i = 0; i < err.size(); ++i) err[i] = std::abs(u.mean[i] - truths[std::size_t(q)][i]);
    const std::string id = "test" + std::to_string(tests[std::size_t(q)].id - kTestIdBase);
    const auto rs = image::value_range(u.sigma), re = image::value_range(err);
    out.figures.push_back({"sigma_" + id, image::encode_png16(u.sigma, rs), image::colorbar(rs, "sigma", "vorticity")});
    out.figures.push_back({"abs_error_" + id, image::encode_png16(err, re), image::colorbar(re, "|mean - truth|", "vorticity")});
  }
  const Field chart = image::bar_chart(bar);
  out.figures.push_back({"distance_profile", image::encode_png16(chart, {0.0, 1.0}),
                         image::colorbar({0.0, 1.0}, "bar mask (height = mean sigma per distance bin)", "")});
  return out;
}

Report rollout_report(const config::RunConfig& cfg, const io::Container& data, const io::Container& rollouts) {
  check_dataset(cfg, data);
  const auto tests = forecast_subset(test_instances(cfg));
  check_ensembles(tests, rollouts, "rollout report");
  const int H = cfg.eval.horizon;
  if (rollouts.n_frames % std::uint32_t(H) != 0) fail(ErrorKind::Data, "rollout report: frame count not a multiple of horizon");
  const std::size_t K = rollouts.n_frames / std::uint32_t(H);
  require(K >= 2, ErrorKind::Validation, "rollout report: needs K >= 2 members");
  Report rep;
  std::vector<std::string> head{"instance_id"};
  for (int h = 1; h <= H; ++h) {
    head.push_back("mean_sigma_h" + std::to_string(h));
    head.push_back("crps_h" + std::to_string(h));
  }
  rep.csv = csv_join(head);
  int grew = 0;
  std::vector<std::vector<double>> sig_h(static_cast<std::size_t>(H)), crps_h(static_cast<std::size_t>(H));
  for (std::size_t q = 0; q < tests.size(); ++q) {
    std::vector<std::string> row{std::to_string(tests[q].id)};
    std::vector<double> s(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      const auto ens = ensemble_at(rollouts, q, std::size_t(h) * K, K);
      const auto u = infer::uncertainty_map(ens);
      double m = 0.0;
      for (double v : u.sigma.data) m += v;
      s[std::size_t(h)] = m / double(u.sigma.size());
      const Field truth = data.frame(std::size_t(tests[q].traj), std::size_t(tests[q].t_out + 2 * h));
      const double c = metrics::crps_mc(ens, truth, rollouts.masks[q].m_o);
      sig_h[std::size_t(h)].push_back(s[std::size_t(h)]);
      crps_h[std::size_t(h)].push_back(c);
      row.push_back(fmt(s[std::size_t(h)]));
      row.push_back(fmt(c));
    }
    grew += s.back() > s.front();
    rep.csv += csv_join(row);
  }
  json per_h = json::array();
  for (int h = 0; h < H; ++h)
    per_h.push_back({{"horizon", h + 1}, {"mean_sigma", mean_of(sig_h[std::size_t(h)])},
                     {"crps_mean", mean_of(crps_h[std::size_t(h)])}});
  rep.summary = {{"instances", tests.size()},
                 {"K", K},
                 {"horizon", H},
                 {"per_horizon", per_h},
                 {"sigma_growth_rate", double(grew) / double(tests.size())}};
  return rep;
}

}  // namespace solid::pipeline
