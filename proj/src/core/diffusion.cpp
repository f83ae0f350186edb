#include "diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace solid::diffusion {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : beta_start_(beta_start), beta_end_(beta_end) {
  require(steps >= 1, ErrorKind::Validation, "schedule: T must be >= 1");
  require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, ErrorKind::Validation,
          "schedule: need 0 < beta_start <= beta_end < 1");
  beta_.resize(std::size_t(steps));
  alpha_bar_.resize(std::size_t(steps));
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : double(i) / double(steps - 1);
    beta_[std::size_t(i)] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - beta_[std::size_t(i)];
    alpha_bar_[std::size_t(i)] = prod;
  }
}

std::size_t NoiseSchedule::index(int tau) const {
  if (!(tau >= 1 && tau <= steps())) fail(ErrorKind::Validation, "schedule: tau " + std::to_string(tau) + " outside [1, " + std::to_string(steps()) + "]");
  return std::size_t(tau - 1);
}

NoiseSchedule linear_beta_schedule(int steps) { return NoiseSchedule(steps, 1e-4, 0.02); }

DDIMPlan make_ddim_plan(const NoiseSchedule& schedule, int n_steps) {
  const int T = schedule.steps();
  require(n_steps >= 1 && n_steps <= T, ErrorKind::Validation,
          "ddim: n_steps must lie in [1, T]");
  DDIMPlan plan;
  plan.taus.reserve(std::size_t(n_steps));
  for (int j = n_steps; j >= 1; --j) {
    plan.taus.push_back(int(std::lround(double(j) * T / n_steps)));
  }
  return plan;
}

Field standard_normal(int rows, int cols, Rng& rng) {
  Gaussian gauss;
  Field out(rows, cols);
  for (auto& v : out.data) v = gauss(rng);
  return out;
}

Field noise_with(const Field& x0, const Field& eps, int tau, const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "noise_with");
  const double ab = schedule.alpha_bar(tau);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Field out(x0.rows, x0.cols);
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Noised forward_noise(const Field& x0, int tau, const NoiseSchedule& schedule, Rng& rng) {
  Field eps = standard_normal(x0.rows, x0.cols, rng);
  Field x_tau = noise_with(x0, eps, tau, schedule);
  return {std::move(x_tau), std::move(eps)};
}

Field predict_x0(const Field& x_tau, const Field& eps_hat, int tau, const NoiseSchedule& schedule) {
  require_same_shape(x_tau, eps_hat, "predict_x0");
  const double ab = schedule.alpha_bar(tau);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Field out(x_tau.rows, x_tau.cols);
  for (std::size_t i = 0; i < x_tau.size(); ++i) out[i] = (x_tau[i] - b * eps_hat[i]) / a;
  return out;
}

Field ddim_from(const EpsPredictor& denoiser, Field x, const Field& x_c, const Mask& m_i,
                const NoiseSchedule& schedule, const DDIMPlan& plan, const SamplerOptions& opts) {
  require_same_shape(x, x_c, "ddim_sample x_T vs x_c");
  require_same_shape(x, m_i, "ddim_sample x_T vs m_i");
  require(!plan.taus.empty(), ErrorKind::Validation, "ddim: empty plan");
  Field x0;
  for (std::size_t s = 0; s < plan.taus.size(); ++s) {
    const int tau = plan.taus[s];
    const int prev = s + 1 < plan.taus.size() ? plan.taus[s + 1] : 0;
    const Field eps_hat = denoiser(x, x_c, m_i, tau);
    require_same_shape(eps_hat, x, "ddim: denoiser output");
    x0 = predict_x0(x, eps_hat, tau, schedule);
    if (opts.clamp_x0) {
      for (auto& v : x0.data) v = std::clamp(v, -opts.clamp_limit, opts.clamp_limit);
    }
    const double ab_prev = schedule.alpha_bar(prev);
    const double a = std::sqrt(ab_prev), b = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = a * x0[i] + b * eps_hat[i];
      if (!std::isfinite(x[i])) {
        fail(ErrorKind::Numerical, "ddim: non-finite state at step " + std::to_string(s) +
                                       " (tau=" + std::to_string(tau) + ")");
      }
    }
  }
  return x0;
}

Field ddim_sample(const EpsPredictor& denoiser, const Field& x_c, const Mask& m_i,
                  const NoiseSchedule& schedule, const DDIMPlan& plan, Rng& rng,
                  const SamplerOptions& opts) {
  Field x_t = standard_normal(x_c.rows, x_c.cols, rng);
  return ddim_from(denoiser, std::move(x_t), x_c, m_i, schedule, plan, opts);
}

}  // namespace solid::diffusion
