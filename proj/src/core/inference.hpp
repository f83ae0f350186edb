#pragma once

// Conditional ensembles, per-pixel spread and autoregressive rollouts.
// Members are sampled one at a time from their own seed, so every statistic
// is independent of evaluation order.

#include <cstdint>
#include <span>
#include <vector>

#include "diffusion.hpp"
#include "grid.hpp"

namespace solid::infer {

struct Ensemble {
  std::vector<Field> members;
  std::vector<std::uint64_t> seeds;  // seeds[k] produced members[k]

  int size() const { return int(members.size()); }
};

struct UncertaintyMap {
  Field sigma;  // sample std, K - 1 denominator
  Field mean;
};

/// Seed of member k under a master seed.
std::uint64_t member_seed(std::uint64_t seed, int k);

/// One DDIM chain per seed, all under the same (x_c, m_i).
Ensemble sample_members(const diffusion::EpsPredictor& denoiser, const Field& x_c, const Mask& m_i,
                        const diffusion::NoiseSchedule& schedule, const diffusion::DDIMPlan& plan,
                        std::span<const std::uint64_t> seeds,
                        const diffusion::SamplerOptions& opts = {});

/// K members with seeds member_seed(seed, k).
Ensemble sample_ensemble(const diffusion::EpsPredictor& denoiser, const Field& x_c, const Mask& m_i,
                         const diffusion::NoiseSchedule& schedule, const diffusion::DDIMPlan& plan,
                         int K, std::uint64_t seed, const diffusion::SamplerOptions& opts = {});

UncertaintyMap uncertainty_map(const Ensemble& ensemble);

/// Pixelwise ensemble mean; K >= 1.
Field ensemble_mean(const Ensemble& ensemble);

/// Affine map of every member, e.g. back to physical units: v * scale + shift.
Ensemble affine(const Ensemble& ensemble, double scale, double shift);

enum class Recondition {
  Member,  // each member conditions on its own previous prediction
  Mean,    // all members condition on the previous ensemble mean
};

struct RolloutConfig {
  int horizon = 1;
  int K = 100;
  Recondition recondition = Recondition::Member;

  void validate() const;
};

/// Seed of member k at horizon step h (0-based). Step 0 matches member_seed.
std::uint64_t rollout_seed(std::uint64_t seed, int k, int h);

/// Ensembles for steps 1..horizon. Step h conditions on m_i ⊙ (step h-1 output);
/// the mask never changes.
std::vector<Ensemble> rollout(const diffusion::EpsPredictor& denoiser, const Field& x_c,
                              const Mask& m_i, const diffusion::NoiseSchedule& schedule,
                              const diffusion::DDIMPlan& plan, const RolloutConfig& cfg,
                              std::uint64_t seed, const diffusion::SamplerOptions& opts = {});

}  // namespace solid::infer
