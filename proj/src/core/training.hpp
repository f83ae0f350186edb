#pragma once

// Dual-masked denoising objective and the optimization loop.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "diffusion.hpp"
#include "masks.hpp"

namespace solid::train {

struct LossConfig {
  double lambda = 0.05;  // overlap (anchor) weight
  void validate() const;
};

enum class Task { Reconstruction, Forecast };

/// How unobserved target pixels are completed before noising. None of these
/// values is ever supervised: the loss only sees M_o.
enum class FillRule { Mean, Conditioning, Noise };

const char* to_string(FillRule f);
FillRule parse_fill_rule(const std::string& s);

/// One supervised pair, already in normalized units.
struct TrainExample {
  Field input;   // U^{t_i}
  Field target;  // U^{t_o}
  masks::MaskPair masks;
  Task task = Task::Reconstruction;
};

struct NormStats {
  double mu = 0.0;
  double sigma = 1.0;
};

/// Mean and (population) std over the observed pixels of each field.
NormStats normalize_stats(std::span<const Field> fields, std::span<const Mask> observed);
Field zscore(const Field& f, const NormStats& s);
Field unscore(const Field& f, const NormStats& s);

/// M~ = M_o ⊙ (1 + lambda M_i).
Field loss_weights(const Mask& m_i, const Mask& m_o, double lambda);

/// sum M~ (eps - eps_hat)^2 / sum M~, recorded on the tape for eps_hat of shape [1,H,W].
template <class T>
tensor::Var dual_masked_loss(tensor::Tape<T>& tape, tensor::Var eps_hat, const Field& eps,
                             const Mask& m_i, const Mask& m_o, double lambda);

/// Batch mean of the per-sample objective for eps_hat of shape [B,1,H,W].
template <class T>
tensor::Var batch_masked_loss(tensor::Tape<T>& tape, tensor::Var eps_hat, std::span<const Field> eps,
                              std::span<const masks::MaskPair> masks, double lambda);

/// Value-only evaluation of the same objective.
double dual_masked_loss(const Field& eps, const Field& eps_hat, const Mask& m_i, const Mask& m_o,
                        double lambda);

/// x_0 used for noising: target on M_o, the fill rule elsewhere.
Field fill_target(const Field& target, const Field& x_c, const Mask& m_o, FillRule rule, Rng& rng);

struct OptimConfig {
  double lr = 2e-4;
  double lr_min_ratio = 0.02;  // cosine floor as a fraction of lr
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 64;
  int steps = 600000;
  int micro_batch = 0;  // samples per tape; 0 runs the whole batch on one tape

  void validate() const;
};

/// Cosine annealing from lr to lr * lr_min_ratio over `steps`.
double cosine_lr(const OptimConfig& cfg, std::int64_t step);

struct AdamWState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t step = 0;
};

/// Scales `grad` in place so its global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(std::span<float> grad, double max_norm);
double global_norm(std::span<const float> grad);

/// Decoupled weight decay followed by a bias-corrected Adam step.
void adamw_update(std::span<float> params, std::span<const float> grad, AdamWState& state,
                  double lr, const OptimConfig& cfg);

/// Diffusion inputs for one example: tau, then fill noise, then eps, all from `rng`.
struct NoisedExample {
  Field x_tau;
  Field x_c;
  Field eps;
  int tau = 0;
};

NoisedExample prepare_example(const TrainExample& ex, const diffusion::NoiseSchedule& schedule,
                              FillRule fill, Rng& rng);

struct ExampleResult {
  double loss = 0.0;
  int tau = 0;
};

/// Forward (and, if grad_out is non-empty, backward scaled by grad_scale) for one example.
/// tau, eps, fill noise and dropout are all drawn from `rng`.
ExampleResult example_loss(const net::Denoiser<float>& model, const TrainExample& ex,
                           const diffusion::NoiseSchedule& schedule, const LossConfig& loss_cfg,
                           FillRule fill, Rng& rng, bool train, float grad_scale,
                           std::span<float> grad_out);

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
};

/// One optimizer step on `batch`. Example slot b prepares its inputs from
/// derive_seed(step_seed, b); dropout in micro-batch j draws from derive_seed(step_seed, B + j).
/// Results depend on micro_batch only through floating-point summation order.
StepMetrics train_step(net::Denoiser<float>& model, std::span<const TrainExample> batch,
                       const diffusion::NoiseSchedule& schedule, const LossConfig& loss_cfg,
                       const OptimConfig& optim, AdamWState& state, std::uint64_t step_seed,
                       FillRule fill = FillRule::Mean);

}  // namespace solid::train
