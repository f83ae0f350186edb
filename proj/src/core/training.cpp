#include "training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace solid::train {

using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

void LossConfig::validate() const {
  require(lambda >= 0.0, ErrorKind::Validation, "loss: lambda must be >= 0");
}

const char* to_string(FillRule f) {
  switch (f) {
    case FillRule::Mean: return "mean";
    case FillRule::Conditioning: return "conditioning";
    case FillRule::Noise: return "noise";
  }
  return "mean";
}

FillRule parse_fill_rule(const std::string& s) {
  if (s == "mean") return FillRule::Mean;
  if (s == "conditioning") return FillRule::Conditioning;
  if (s == "noise") return FillRule::Noise;
  fail(ErrorKind::Usage, "unknown fill rule '" + s + "' (expected mean|conditioning|noise)");
}

NormStats normalize_stats(std::span<const Field> fields, std::span<const Mask> observed) {
  require(fields.size() == observed.size(), ErrorKind::Usage,
          "normalize_stats: fields and masks differ in count");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    require_same_shape(fields[k], observed[k], "normalize_stats");
    for (std::size_t i = 0; i < fields[k].size(); ++i) {
      if (observed[k][i]) {
        sum += fields[k][i];
        ++n;
      }
    }
  }
  require(n > 0, ErrorKind::Data, "normalize_stats: no observed pixels");
  const double mu = sum / double(n);
  double ss = 0.0;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    for (std::size_t i = 0; i < fields[k].size(); ++i) {
      if (observed[k][i]) {
        const double d = fields[k][i] - mu;
        ss += d * d;
      }
    }
  }
  const double sigma = std::sqrt(ss / double(n));
  require(sigma > 0.0, ErrorKind::Data, "normalize_stats: observed values have zero variance");
  return {mu, sigma};
}

Field zscore(const Field& f, const NormStats& s) {
  Field out(f.rows, f.cols);
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = (f[i] - s.mu) / s.sigma;
  return out;
}

Field unscore(const Field& f, const NormStats& s) {
  Field out(f.rows, f.cols);
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] * s.sigma + s.mu;
  return out;
}

Field loss_weights(const Mask& m_i, const Mask& m_o, double lambda) {
  require_same_shape(m_i, m_o, "loss_weights");
  Field w(m_o.rows, m_o.cols);
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = m_o[i] ? (m_i[i] ? 1.0 + lambda : 1.0) : 0.0;
  }
  return w;
}

template <class T>
Var dual_masked_loss(Tape<T>& tape, Var eps_hat, const Field& eps, const Mask& m_i,
                     const Mask& m_o, double lambda) {
  require(lambda >= 0.0, ErrorKind::Validation, "loss: lambda must be >= 0");
  require_same_shape(eps, m_o, "dual_masked_loss eps vs m_o");
  const tensor::Shape s = tape.shape(eps_hat);  // copy: the tape grows below
  if (!(s == tensor::Shape{1, eps.rows, eps.cols})) fail(ErrorKind::Shape, "dual_masked_loss: eps_hat shape " + tensor::shape_str(s));
  require(popcount(m_o) > 0, ErrorKind::Validation, "dual_masked_loss: empty target mask");

  const Field w = loss_weights(m_i, m_o, lambda);
  double total = 0.0;
  for (double v : w.data) total += v;
  std::vector<T> ev(eps.data.begin(), eps.data.end());
  std::vector<T> wv(w.data.begin(), w.data.end());
  Var e = tape.constant(Tensor<T>(s, std::move(ev)));
  Var r = tensor::sub(tape, e, eps_hat);
  Var sq = tensor::mul(tape, r, r);
  Var weighted = tensor::mul_const(tape, sq, Tensor<T>(s, std::move(wv)));
  return tensor::scale(tape, tensor::sum(tape, weighted), T(1.0 / total));
}

template <class T>
Var batch_masked_loss(Tape<T>& tape, Var eps_hat, std::span<const Field> eps,
                      std::span<const masks::MaskPair> mp, double lambda) {
  require(lambda >= 0.0, ErrorKind::Validation, "loss: lambda must be >= 0");
  require(!eps.empty() && eps.size() == mp.size(), ErrorKind::Shape,
          "batch_masked_loss: eps and mask counts differ");
  const tensor::Shape s = tape.shape(eps_hat);
  const int nb = int(eps.size());
  if (!(s == tensor::Shape{nb, 1, eps[0].rows, eps[0].cols})) fail(ErrorKind::Shape, "batch_masked_loss: eps_hat shape " + tensor::shape_str(s));
  const std::size_t n = eps[0].size();
  std::vector<T> ev(n * eps.size()), wv(n * eps.size());
  for (std::size_t b = 0; b < eps.size(); ++b) {
    require_same_shape(eps[b], mp[b].m_o, "batch_masked_loss eps vs m_o");
    require(popcount(mp[b].m_o) > 0, ErrorKind::Validation, "batch_masked_loss: empty target mask");
    const Field w = loss_weights(mp[b].m_i, mp[b].m_o, lambda);
    double total = 0.0;
    for (double v : w.data) total += v;
    // Each sample is normalized by its own sum M~, then samples are averaged.
    const double k = 1.0 / (total * double(nb));
    for (std::size_t i = 0; i < n; ++i) {
      ev[b * n + i] = T(eps[b][i]);
      wv[b * n + i] = T(w[i] * k);
    }
  }
  Var e = tape.constant(Tensor<T>(s, std::move(ev)));
  Var r = tensor::sub(tape, e, eps_hat);
  Var sq = tensor::mul(tape, r, r);
  return tensor::sum(tape, tensor::mul_const(tape, sq, Tensor<T>(s, std::move(wv))));
}

double dual_masked_loss(const Field& eps, const Field& eps_hat, const Mask& m_i, const Mask& m_o,
                        double lambda) {
  require(lambda >= 0.0, ErrorKind::Validation, "loss: lambda must be >= 0");
  require_same_shape(eps, eps_hat, "dual_masked_loss");
  require(popcount(m_o) > 0, ErrorKind::Validation, "dual_masked_loss: empty target mask");
  const Field w = loss_weights(m_i, m_o, lambda);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double r = eps[i] - eps_hat[i];
    num += w[i] * r * r;
    den += w[i];
  }
  return num / den;
}

Field fill_target(const Field& target, const Field& x_c, const Mask& m_o, FillRule rule, Rng& rng) {
  require_same_shape(target, m_o, "fill_target");
  Field x0(target.rows, target.cols);
  Gaussian gauss;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (m_o[i]) {
      x0[i] = target[i];
      continue;
    }
    switch (rule) {
      case FillRule::Mean: x0[i] = 0.0; break;
      case FillRule::Conditioning: x0[i] = x_c[i]; break;
      case FillRule::Noise: x0[i] = gauss(rng); break;
    }
  }
  return x0;
}

void OptimConfig::validate() const {
  require(lr > 0.0, ErrorKind::Validation, "optim: lr must be positive");
  require(lr_min_ratio > 0.0 && lr_min_ratio <= 1.0, ErrorKind::Validation,
          "optim: lr_min_ratio must lie in (0,1]");
  require(weight_decay >= 0.0, ErrorKind::Validation, "optim: weight_decay must be >= 0");
  require(grad_clip > 0.0, ErrorKind::Validation, "optim: grad_clip must be positive");
  require(batch >= 1, ErrorKind::Validation, "optim: batch must be >= 1");
  require(steps >= 1, ErrorKind::Validation, "optim: steps must be >= 1");
  require(micro_batch >= 0, ErrorKind::Validation, "optim: micro_batch must be >= 0");
}

double cosine_lr(const OptimConfig& cfg, std::int64_t step) {
  const double frac = std::min(1.0, double(std::max<std::int64_t>(step, 0)) / double(cfg.steps));
  const double lo = cfg.lr * cfg.lr_min_ratio;
  return lo + 0.5 * (cfg.lr - lo) * (1.0 + std::cos(std::numbers::pi * frac));
}

double global_norm(std::span<const float> grad) {
  double ss = 0.0;
  for (float g : grad) ss += double(g) * double(g);
  return std::sqrt(ss);
}

double clip_global_norm(std::span<float> grad, double max_norm) {
  const double norm = global_norm(grad);
  if (norm > max_norm) {
    const float s = float(max_norm / (norm + 1e-12));
    for (auto& g : grad) g *= s;
  }
  return norm;
}

void adamw_update(std::span<float> params, std::span<const float> grad, AdamWState& state,
                  double lr, const OptimConfig& cfg) {
  require(params.size() == grad.size(), ErrorKind::Shape, "adamw: size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  const float b1 = float(cfg.beta1), b2 = float(cfg.beta2);
  const float decay = float(1.0 - lr * cfg.weight_decay);
  const float step_size = float(lr / bc1);
  const float inv_bc2_sqrt = float(1.0 / std::sqrt(bc2));
  const float eps = float(cfg.adam_eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad[i];
    state.m[i] = b1 * state.m[i] + (1.0f - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0f - b2) * g * g;
    params[i] *= decay;
    params[i] -= step_size * state.m[i] / (std::sqrt(state.v[i]) * inv_bc2_sqrt + eps);
  }
}

ExampleResult example_loss(const net::Denoiser<float>& model, const TrainExample& ex,
                           const diffusion::NoiseSchedule& schedule, const LossConfig& loss_cfg,
                           FillRule fill, Rng& rng, bool train, float grad_scale,
                           std::span<float> grad_out) {
  const NoisedExample p = prepare_example(ex, schedule, fill, rng);
  const auto& mp = ex.masks;
  Tape<float> tape;
  const bool want_grad = !grad_out.empty();
  // Gradients land in grad_out directly; the backward seed carries the batch scale.
  const auto params = want_grad ? model.bind_into(tape, grad_out) : model.bind(tape, false);
  const Var in = model.input(tape, p.x_tau, p.x_c, mp.m_i);
  net::Denoiser<float>::Options opts{train, &rng};
  const Var eps_hat = model.forward(tape, params, in, p.tau, opts);
  const Var loss = dual_masked_loss(tape, eps_hat, p.eps, mp.m_i, mp.m_o, loss_cfg.lambda);
  const double value = double(tape.value(loss)[0]);
  if (want_grad) tape.backward(loss, grad_scale);
  return {value, p.tau};
}

NoisedExample prepare_example(const TrainExample& ex, const diffusion::NoiseSchedule& schedule,
                              FillRule fill, Rng& rng) {
  const auto& mp = ex.masks;
  require_same_shape(ex.input, mp.m_i, "train example input vs m_i");
  require_same_shape(ex.target, mp.m_o, "train example target vs m_o");
  NoisedExample out;
  out.tau = int(uniform_int(rng, 1, std::uint64_t(schedule.steps())));
  out.x_c = masks::restrict(ex.input, mp.m_i);
  const Field x0 = fill_target(ex.target, out.x_c, mp.m_o, fill, rng);
  auto noised = diffusion::forward_noise(x0, out.tau, schedule, rng);
  out.x_tau = std::move(noised.x_tau);
  out.eps = std::move(noised.eps);
  return out;
}

namespace {

[[noreturn]] void fail_with_fingerprint(std::int64_t step, const std::string& what,
                                        std::span<const TrainExample> batch) {
  std::ostringstream fp;
  fp << "train_step " << step << ": " << what << "; batch instances";
  for (const auto& ex : batch) fp << ' ' << ex.masks.instance_id;
  fail(ErrorKind::Numerical, fp.str());
}

}  // namespace

StepMetrics train_step(net::Denoiser<float>& model, std::span<const TrainExample> batch,
                       const diffusion::NoiseSchedule& schedule, const LossConfig& loss_cfg,
                       const OptimConfig& optim, AdamWState& state, std::uint64_t step_seed,
                       FillRule fill) {
  require(!batch.empty(), ErrorKind::Validation, "train_step: empty batch");
  loss_cfg.validate();
  optim.validate();
  const std::size_t nb = batch.size();
  std::vector<NoisedExample> prepared;
  prepared.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    Rng rng = make_rng(step_seed, b);
    prepared.push_back(prepare_example(batch[b], schedule, fill, rng));
  }

  std::vector<float> grad(model.param_count(), 0.0f);
  const std::size_t chunk = optim.micro_batch > 0 ? std::size_t(optim.micro_batch) : nb;
  double loss = 0.0;
  for (std::size_t lo = 0, j = 0; lo < nb; lo += chunk, ++j) {
    const std::size_t hi = std::min(nb, lo + chunk);
    std::vector<Field> xt, xc, eps;
    std::vector<Mask> mi;
    std::vector<masks::MaskPair> mp;
    std::vector<int> taus;
    for (std::size_t b = lo; b < hi; ++b) {
      xt.push_back(prepared[b].x_tau);
      xc.push_back(prepared[b].x_c);
      eps.push_back(prepared[b].eps);
      mi.push_back(batch[b].masks.m_i);
      mp.push_back(batch[b].masks);
      taus.push_back(prepared[b].tau);
    }
    Rng dropout_rng = make_rng(step_seed, nb + j);
    try {
      Tape<float> tape;
      const auto params = model.bind_into(tape, grad);
      const Var in = model.input_batch(tape, xt, xc, mi);
      const Var eps_hat = model.forward(tape, params, in, taus, {true, &dropout_rng});
      const Var l = batch_masked_loss(tape, eps_hat, eps, mp, loss_cfg.lambda);
      // Chunk losses are chunk means; weighting by chunk share gives the batch mean.
      const double share = double(hi - lo) / double(nb);
      loss += share * double(tape.value(l)[0]);
      tape.backward(l, float(share));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
      fail_with_fingerprint(state.step, e.what(), batch);
    }
  }
  if (!std::isfinite(loss)) fail_with_fingerprint(state.step, "non-finite loss", batch);
  const double norm = clip_global_norm(grad, optim.grad_clip);
  if (!std::isfinite(norm)) fail_with_fingerprint(state.step, "non-finite gradient", batch);
  const double lr = cosine_lr(optim, state.step);
  adamw_update(model.mutable_flat(), grad, state, lr, optim);
  return {state.step, loss, lr, norm};
}

template Var dual_masked_loss<float>(Tape<float>&, Var, const Field&, const Mask&, const Mask&,
                                     double);
template Var dual_masked_loss<double>(Tape<double>&, Var, const Field&, const Mask&, const Mask&,
                                      double);
template Var batch_masked_loss<float>(Tape<float>&, Var, std::span<const Field>,
                                     std::span<const masks::MaskPair>, double);
template Var batch_masked_loss<double>(Tape<double>&, Var, std::span<const Field>,
                                      std::span<const masks::MaskPair>, double);

}  // namespace solid::train
