#include "inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "masks.hpp"

namespace solid::infer {

using diffusion::DDIMPlan;
using diffusion::EpsPredictor;
using diffusion::NoiseSchedule;
using diffusion::SamplerOptions;

std::uint64_t member_seed(std::uint64_t seed, int k) { return derive_seed(seed, std::uint64_t(k)); }

std::uint64_t rollout_seed(std::uint64_t seed, int k, int h) {
  const std::uint64_t s = member_seed(seed, k);
  return h == 0 ? s : derive_seed(s, std::uint64_t(h));
}

namespace {

Field sample_one(const EpsPredictor& denoiser, const Field& x_c, const Mask& m_i,
                 const NoiseSchedule& schedule, const DDIMPlan& plan, std::uint64_t seed,
                 const SamplerOptions& opts, const std::string& where) {
  Rng rng(seed);
  try {
    return diffusion::ddim_sample(denoiser, x_c, m_i, schedule, plan, rng, opts);
  } catch (const Error& e) {
    fail(e.kind(), where + ": " + e.what());
  }
}

}  // namespace

Ensemble sample_members(const EpsPredictor& denoiser, const Field& x_c, const Mask& m_i,
                        const NoiseSchedule& schedule, const DDIMPlan& plan,
                        std::span<const std::uint64_t> seeds, const SamplerOptions& opts) {
  require(!seeds.empty(), ErrorKind::Validation, "sample_members: no seeds");
  Ensemble ens;
  ens.seeds.assign(seeds.begin(), seeds.end());
  ens.members.reserve(seeds.size());
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    ens.members.push_back(
        sample_one(denoiser, x_c, m_i, schedule, plan, seeds[k], opts, "member " + std::to_string(k)));
  }
  return ens;
}

Ensemble sample_ensemble(const EpsPredictor& denoiser, const Field& x_c, const Mask& m_i,
                         const NoiseSchedule& schedule, const DDIMPlan& plan, int K,
                         std::uint64_t seed, const SamplerOptions& opts) {
  require(K >= 1, ErrorKind::Validation, "sample_ensemble: K must be >= 1");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) seeds[std::size_t(k)] = member_seed(seed, k);
  return sample_members(denoiser, x_c, m_i, schedule, plan, seeds, opts);
}

Field ensemble_mean(const Ensemble& ensemble) {
  require(ensemble.size() >= 1, ErrorKind::Validation, "ensemble_mean: empty ensemble");
  const Field& first = ensemble.members.front();
  Field mean(first.rows, first.cols);
  for (const Field& m : ensemble.members) {
    require_same_shape(m, first, "ensemble_mean: member");
    for (std::size_t i = 0; i < m.size(); ++i) mean[i] += m[i];
  }
  const double inv = 1.0 / ensemble.size();
  for (auto& v : mean.data) v *= inv;
  return mean;
}

// Welford updates per pixel: exact zero spread when members agree.
UncertaintyMap uncertainty_map(const Ensemble& ensemble) {
  require(ensemble.size() >= 2, ErrorKind::Validation, "uncertainty_map: K must be >= 2");
  const Field& first = ensemble.members.front();
  Field mean(first.rows, first.cols);
  Field m2(first.rows, first.cols);
  double n = 0.0;
  for (const Field& m : ensemble.members) {
    require_same_shape(m, first, "uncertainty_map: member");
    n += 1.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double d = m[i] - mean[i];
      mean[i] += d / n;
      m2[i] += d * (m[i] - mean[i]);
    }
  }
  Field sigma(first.rows, first.cols);
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = std::sqrt(std::max(m2[i], 0.0) / (n - 1.0));
  return {std::move(sigma), std::move(mean)};
}

Ensemble affine(const Ensemble& ensemble, double scale, double shift) {
  Ensemble out = ensemble;
  for (Field& m : out.members) {
    for (auto& v : m.data) v = v * scale + shift;
  }
  return out;
}

void RolloutConfig::validate() const {
  require(horizon >= 1, ErrorKind::Validation, "rollout: horizon must be >= 1");
  require(K >= 1, ErrorKind::Validation, "rollout: K must be >= 1");
}

std::vector<Ensemble> rollout(const EpsPredictor& denoiser, const Field& x_c, const Mask& m_i,
                              const NoiseSchedule& schedule, const DDIMPlan& plan,
                              const RolloutConfig& cfg, std::uint64_t seed,
                              const SamplerOptions& opts) {
  cfg.validate();
  require_same_shape(x_c, m_i, "rollout: x_c vs m_i");
  std::vector<Ensemble> out;
  out.reserve(std::size_t(cfg.horizon));
  for (int h = 0; h < cfg.horizon; ++h) {
    Ensemble ens;
    Field shared;
    if (h > 0 && cfg.recondition == Recondition::Mean) {
      shared = masks::restrict(ensemble_mean(out.back()), m_i);
    }
    for (int k = 0; k < cfg.K; ++k) {
      const std::uint64_t s = rollout_seed(seed, k, h);
      Field cond;
      const Field* c = &x_c;
      if (h > 0) {
        if (cfg.recondition == Recondition::Mean) {
          c = &shared;
        } else {
          cond = masks::restrict(out.back().members[std::size_t(k)], m_i);
          c = &cond;
        }
      }
      const std::string where = "member " + std::to_string(k) + ", horizon " + std::to_string(h + 1);
      ens.members.push_back(sample_one(denoiser, *c, m_i, schedule, plan, s, opts, where));
      ens.seeds.push_back(s);
    }
    out.push_back(std::move(ens));
  }
  return out;
}

}  // namespace solid::infer
