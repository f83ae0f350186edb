#pragma once

#include <functional>
#include <vector>

#include "grid.hpp"
#include "rng.hpp"

namespace solid::diffusion {

/// Linear beta schedule. Steps are 1-based: tau in [1, T]; tau = 0 is the clean state.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(int steps, double beta_start, double beta_end);

  int steps() const { return int(beta_.size()); }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  double beta(int tau) const { return beta_.at(index(tau)); }
  double alpha(int tau) const { return 1.0 - beta(tau); }
  /// Cumulative product; alpha_bar(0) == 1.
  double alpha_bar(int tau) const { return tau == 0 ? 1.0 : alpha_bar_.at(index(tau)); }

 private:
  std::size_t index(int tau) const;

  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

/// beta from 1e-4 to 0.02, the canonical DDPM endpoints.
NoiseSchedule linear_beta_schedule(int steps);

/// Strided descending subset of [1, T]; the reverse chain ends at tau = 0.
struct DDIMPlan {
  std::vector<int> taus;
  double eta = 0.0;

  int n_steps() const { return int(taus.size()); }
};

DDIMPlan make_ddim_plan(const NoiseSchedule& schedule, int n_steps);

struct Noised {
  Field x_tau;
  Field eps;
};

/// x_tau = sqrt(abar) x0 + sqrt(1 - abar) eps, returning the eps drawn.
Noised forward_noise(const Field& x0, int tau, const NoiseSchedule& schedule, Rng& rng);

/// Same closed form with a caller-supplied eps.
Field noise_with(const Field& x0, const Field& eps, int tau, const NoiseSchedule& schedule);

/// (x_tau - sqrt(1 - abar) eps_hat) / sqrt(abar)
Field predict_x0(const Field& x_tau, const Field& eps_hat, int tau, const NoiseSchedule& schedule);

/// eps_hat(x_tau, x_c, m_i, tau): the conditional noise predictor.
using EpsPredictor = std::function<Field(const Field& x_tau, const Field& x_c, const Mask& m_i, int tau)>;

struct SamplerOptions {
  bool clamp_x0 = false;
  double clamp_limit = 6.0;
};

/// Deterministic (eta = 0) DDIM from x_T ~ N(0, I) drawn from `rng`. The
/// conditioning pair is fed to the predictor at every step.
Field ddim_sample(const EpsPredictor& denoiser, const Field& x_c, const Mask& m_i,
                  const NoiseSchedule& schedule, const DDIMPlan& plan, Rng& rng,
                  const SamplerOptions& opts = {});

/// Same chain from a given x_T.
Field ddim_from(const EpsPredictor& denoiser, Field x_t, const Field& x_c, const Mask& m_i,
                const NoiseSchedule& schedule, const DDIMPlan& plan,
                const SamplerOptions& opts = {});

Field standard_normal(int rows, int cols, Rng& rng);

}  // namespace solid::diffusion
