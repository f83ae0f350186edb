#pragma once

// Glue between the modules: instance enumeration, the training loop, and the
// evaluation passes behind each command. Pure functions over in-memory
// artifacts; callers own all file I/O.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "container.hpp"
#include "metrics.hpp"

namespace solid::pipeline {

/// One supervised or evaluated query: condition on frame t_in, score frame t_out.
struct Instance {
  std::uint64_t id = 0;
  int traj = 0;
  int t_in = 0;
  int t_out = 0;
  train::Task task = train::Task::Reconstruction;
};

/// Test ids start here so they never collide with training ids.
inline constexpr std::uint64_t kTestIdBase = std::uint64_t(1) << 40;

/// Every even frame of the training trajectories; forecast instances predict
/// the next even frame.
std::vector<Instance> train_instances(const config::RunConfig& cfg);
/// Odd frames of the held-out trajectories; tasks alternate so the mix is
/// exact, and forecast inputs leave room for eval.horizon further frames.
std::vector<Instance> test_instances(const config::RunConfig& cfg);

nlohmann::json to_json(const Instance& in);

/// Deviation flags and solver notes recorded in every artifact's metadata.
nlohmann::json deviations();

// ---- artifacts -------------------------------------------------------------

io::Container simulate(const config::RunConfig& cfg);

/// Mask pairs for every train and test instance, in enumeration order.
io::Container make_masks(const config::RunConfig& cfg);

/// Looks up pairs by instance id.
class MaskIndex {
 public:
  explicit MaskIndex(const io::Container& masks);
  const io::MaskRecord& at(std::uint64_t id) const;

 private:
  std::vector<std::pair<std::uint64_t, std::size_t>> sorted_;
  const io::Container* src_;
};

/// Throws Data when the dataset does not match the configured shape.
void check_dataset(const config::RunConfig& cfg, const io::Container& data);

struct Model {
  net::Denoiser<float> net;
  train::AdamWState adam;
  train::NormStats norm;
  config::RunConfig cfg;  // the config the model was trained under
};

/// Mean and spread over the observed pixels of every training instance.
train::NormStats training_norm(const config::RunConfig& cfg, const io::Container& data, const MaskIndex& masks);

/// Fresh model with zeroed optimizer state and normalization from the
/// training instances' observed pixels.
Model init_model(const config::RunConfig& cfg, const io::Container& data, const MaskIndex& masks);

io::Checkpoint to_checkpoint(const Model& m);

/// Replaces the model's config with `cfg`. Only the eval section and the
/// sampler keys (diffusion.ddim_steps, clamp_x0, clamp_limit) may differ;
/// anything else is a Data error naming the first differing key.
void adopt_config(Model& m, const config::RunConfig& cfg);
Model from_checkpoint(const io::Checkpoint& c);

using Progress = std::function<void(const train::StepMetrics&)>;

/// Runs optimizer steps until adam.step == until. Batch indices and all
/// per-step randomness derive from (cfg.seed, step), so a resumed run matches
/// an uninterrupted one bit for bit.
void train_until(Model& model, const io::Container& data, const MaskIndex& masks, std::int64_t until,
                 const Progress& progress = {});

/// Normalized conditioning field m_i ⊙ z(frame t_in).
Field conditioning(const Model& model, const io::Container& data, const Instance& in, const Mask& m_i);

/// K physical-unit members per test instance; frames are members. Mask
/// records of the test instances are embedded.
io::Container sample(const Model& model, const io::Container& data, const io::Container& masks);

/// Forecast test instances only; frame h * K + k is member k at step h + 1.
io::Container rollout(const Model& model, const io::Container& data, const io::Container& masks);

std::vector<Instance> forecast_subset(const std::vector<Instance>& all);

// ---- reports ---------------------------------------------------------------

struct Report {
  std::string csv;
  nlohmann::json summary;
};

/// Per-instance CRPS (target mask and region breakdown), ensemble-mean MSE/MAE.
Report evaluate(const config::RunConfig& cfg, const io::Container& data, const io::Container& ensembles);

/// Deterministic predictors scored as K = 1 ensembles: nn, rbf, persistence,
/// zero (normalized mean). untrained_model, when given, is sampled like the
/// trained one.
Report baseline(const config::RunConfig& cfg, const io::Container& data, const io::Container& masks,
                const train::NormStats& norm, const Model* untrained_model = nullptr);

struct Figure {
  std::string name;
  std::string png;
  nlohmann::json colorbar;
};

struct CalibrationOutput {
  Report report;
  std::vector<Figure> figures;
};

CalibrationOutput calibrate(const config::RunConfig& cfg, const io::Container& data,
                            const io::Container& ensembles, int n_maps = 4);

/// Mean sigma per horizon for each forecast instance and the share with
/// sigma(h = H) > sigma(h = 1).
Report rollout_report(const config::RunConfig& cfg, const io::Container& data, const io::Container& rollouts);

}  // namespace solid::pipeline
