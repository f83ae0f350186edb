#pragma once

// Conditional noise predictor: a compact UNet over [x_tau, X_c, M_i] with a
// sinusoidal time embedding injected into every residual block.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "grid.hpp"
#include "tensor.hpp"

namespace solid::net {

struct DenoiserConfig {
  int base_dim = 32;
  std::vector<int> dim_mults{1, 2, 2, 2};
  int res_blocks_per_stage = 2;
  double dropout = 0.1;
  int max_norm_groups = 8;

  static constexpr int in_channels = 3;
  static constexpr int out_channels = 1;

  int time_embed_dim() const { return 4 * base_dim; }
  /// Spatial extents must be divisible by this.
  int spatial_multiple() const { return 1 << (dim_mults.size() - 1); }
  void validate() const;
  void validate_spatial(int rows, int cols) const;
};

bool operator==(const DenoiserConfig& a, const DenoiserConfig& b);

/// Sinusoidal features [sin(tau f_0..f_{h-1}), cos(tau f_0..f_{h-1})], log-spaced f.
std::vector<double> time_features(int tau, int dim);

struct ParamInfo {
  std::string name;
  tensor::Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Named views into the flat parameter vector. A pure function of the config.
class ParamLayout {
 public:
  explicit ParamLayout(const DenoiserConfig& cfg);

  const std::vector<ParamInfo>& entries() const { return entries_; }
  std::size_t total() const { return total_; }
  std::size_t find(const std::string& name) const;

 private:
  friend class LayoutBuilder;
  std::vector<ParamInfo> entries_;
  std::size_t total_ = 0;
};

std::size_t count_params(const DenoiserConfig& cfg);

template <class T>
class Denoiser {
 public:
  Denoiser(DenoiserConfig cfg, std::vector<T> flat);

  /// Fan-in uniform init; the output conv starts at zero so eps_hat == 0.
  static Denoiser initialize(const DenoiserConfig& cfg, std::uint64_t seed);

  const DenoiserConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return *layout_; }
  std::size_t param_count() const { return flat_->size(); }
  std::span<const T> flat() const { return *flat_; }
  /// Exclusive access for optimizer updates; no tape may be live.
  std::vector<T>& mutable_flat() { return *flat_; }

  template <class U>
  Denoiser<U> cast() const;

  /// Adds every parameter to the tape as a leaf viewing the flat storage.
  std::vector<tensor::Var> bind(tensor::Tape<T>& tape, bool requires_grad) const;
  /// Binds with gradients accumulating straight into `grad_sink` (layout order, size total()).
  std::vector<tensor::Var> bind_into(tensor::Tape<T>& tape, std::span<T> grad_sink) const;

  /// Stacks [x_tau, X_c, M_i] into a [3,H,W] constant.
  tensor::Var input(tensor::Tape<T>& tape, const Field& x_tau, const Field& x_c,
                    const Mask& m_i) const;

  struct Options {
    bool train = false;
    Rng* rng = nullptr;  // dropout stream, required when training with dropout
  };

  /// Stacks B triples into a [B,3,H,W] constant.
  tensor::Var input_batch(tensor::Tape<T>& tape, std::span<const Field> x_tau,
                          std::span<const Field> x_c, std::span<const Mask> m_i) const;

  /// [3,H,W] -> [1,H,W].
  tensor::Var forward(tensor::Tape<T>& tape, const std::vector<tensor::Var>& params,
                      tensor::Var input, int tau, const Options& opts) const;
  /// [B,3,H,W] -> [B,1,H,W] with one diffusion step per sample.
  tensor::Var forward(tensor::Tape<T>& tape, const std::vector<tensor::Var>& params,
                      tensor::Var input, std::span<const int> taus, const Options& opts) const;

  /// Inference-mode eps_hat.
  Field predict(const Field& x_tau, const Field& x_c, const Mask& m_i, int tau) const;
  std::vector<Field> predict_batch(std::span<const Field> x_tau, std::span<const Field> x_c,
                                   std::span<const Mask> m_i, std::span<const int> taus) const;

 private:
  DenoiserConfig cfg_;
  std::shared_ptr<const ParamLayout> layout_;
  std::shared_ptr<std::vector<T>> flat_;
};

/// Adds `scale` * grad of each bound leaf into `out` (flat layout order).
template <class T>
void gather_grads(const tensor::Tape<T>& tape, const std::vector<tensor::Var>& params,
                  const ParamLayout& layout, T scale, std::span<T> out);

}  // namespace solid::net
