#include "denoiser.hpp"

#include <cmath>
#include <numeric>

namespace solid::net {

using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

int norm_groups(int channels, int max_groups) {
  for (int g = std::min(max_groups, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

std::vector<int> stage_channels(const DenoiserConfig& cfg) {
  std::vector<int> ch;
  for (int m : cfg.dim_mults) ch.push_back(cfg.base_dim * m);
  return ch;
}

/// Walks the architecture once, either registering parameters (layout) or
/// consuming them in the same order (forward). Keeping one walk avoids two
/// copies of the topology drifting apart.
template <class Visitor>
void walk_architecture(const DenoiserConfig& cfg, Visitor& v) {
  const auto ch = stage_channels(cfg);
  const int S = int(ch.size());
  const int R = cfg.res_blocks_per_stage;

  v.time_mlp(cfg.base_dim, cfg.time_embed_dim());
  v.init_conv(DenoiserConfig::in_channels, ch[0]);

  std::vector<int> skip_ch{ch[0]};
  int in_ch = ch[0];
  for (int s = 0; s < S; ++s) {
    for (int r = 0; r < R; ++r) {
      v.res_block("down" + std::to_string(s) + "." + std::to_string(r), in_ch, ch[std::size_t(s)]);
      in_ch = ch[std::size_t(s)];
      v.push_skip();
      skip_ch.push_back(in_ch);
    }
    if (s < S - 1) {
      v.downsample();
      v.push_skip();
      skip_ch.push_back(in_ch);
    }
  }
  v.res_block("mid.0", in_ch, in_ch);
  v.res_block("mid.1", in_ch, in_ch);
  for (int s = S - 1; s >= 0; --s) {
    for (int r = 0; r <= R; ++r) {
      const int sc = skip_ch.back();
      skip_ch.pop_back();
      v.pop_skip_concat();
      v.res_block("up" + std::to_string(s) + "." + std::to_string(r), in_ch + sc,
                  ch[std::size_t(s)]);
      in_ch = ch[std::size_t(s)];
    }
    if (s > 0) v.upsample();
  }
  v.out_head(in_ch, DenoiserConfig::out_channels);
}

}  // namespace

// ---- config ------------------------------------------------------------------

void DenoiserConfig::validate() const {
  require(base_dim >= 1, ErrorKind::Validation, "denoiser: base_dim must be >= 1");
  require(!dim_mults.empty(), ErrorKind::Validation, "denoiser: dim_mults must be non-empty");
  for (int m : dim_mults) require(m >= 1, ErrorKind::Validation, "denoiser: dim_mults must be >= 1");
  require(res_blocks_per_stage >= 1, ErrorKind::Validation,
          "denoiser: res_blocks_per_stage must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Validation,
          "denoiser: dropout must lie in [0,1)");
  require(max_norm_groups >= 1, ErrorKind::Validation, "denoiser: max_norm_groups must be >= 1");
  require(base_dim % 2 == 0, ErrorKind::Validation,
          "denoiser: base_dim must be even (sin/cos time features)");
}

void DenoiserConfig::validate_spatial(int rows, int cols) const {
  const int m = spatial_multiple();
  if (!(rows > 0 && cols > 0 && rows % m == 0 && cols % m == 0)) fail(ErrorKind::Shape, "denoiser: spatial size " + std::to_string(rows) + "x" + std::to_string(cols) + " not divisible by " + std::to_string(m));
}

bool operator==(const DenoiserConfig& a, const DenoiserConfig& b) {
  return a.base_dim == b.base_dim && a.dim_mults == b.dim_mults &&
         a.res_blocks_per_stage == b.res_blocks_per_stage && a.dropout == b.dropout &&
         a.max_norm_groups == b.max_norm_groups;
}

std::vector<double> time_features(int tau, int dim) {
  require(dim >= 2 && dim % 2 == 0, ErrorKind::Validation, "time_features: dim must be even");
  const int half = dim / 2;
  const double step = half > 1 ? std::log(10000.0) / double(half - 1) : 0.0;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double arg = double(tau) * std::exp(-step * i);
    out[std::size_t(i)] = std::sin(arg);
    out[std::size_t(half + i)] = std::cos(arg);
  }
  return out;
}

// ---- layout ------------------------------------------------------------------

class LayoutBuilder {
 public:
  LayoutBuilder(ParamLayout& layout, int max_groups, int temb)
      : layout_(layout), max_groups_(max_groups), temb_(temb) {}

  void add(const std::string& name, Shape shape) {
    const std::size_t n = tensor::numel(shape);
    layout_.entries_.push_back(ParamInfo{name, std::move(shape), layout_.total_, n});
    layout_.total_ += n;
  }
  void conv(const std::string& name, int cin, int cout, int k) {
    add(name + ".w", {cout, cin, k, k});
    add(name + ".b", {cout});
  }
  void norm(const std::string& name, int c) {
    add(name + ".gamma", {c});
    add(name + ".beta", {c});
  }

  void time_mlp(int base, int temb) {
    add("time.w1", {temb, base});
    add("time.b1", {temb});
    add("time.w2", {temb, temb});
    add("time.b2", {temb});
  }
  void init_conv(int cin, int cout) { conv("init", cin, cout, 3); }
  void res_block(const std::string& name, int cin, int cout) {
    norm(name + ".norm1", cin);
    conv(name + ".conv1", cin, cout, 3);
    add(name + ".temb.w", {cout, temb_});
    add(name + ".temb.b", {cout});
    norm(name + ".norm2", cout);
    conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) conv(name + ".skip", cin, cout, 1);
  }
  void push_skip() {}
  void pop_skip_concat() {}
  void downsample() {}
  void upsample() {}
  void out_head(int cin, int cout) {
    norm("out.norm", cin);
    conv("out.conv", cin, cout, 3);
  }

 private:
  ParamLayout& layout_;
  int max_groups_;
  int temb_;
};

ParamLayout::ParamLayout(const DenoiserConfig& cfg) {
  cfg.validate();
  LayoutBuilder b(*this, cfg.max_norm_groups, cfg.time_embed_dim());
  walk_architecture(cfg, b);
}

std::size_t ParamLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  fail(ErrorKind::Usage, "denoiser: no parameter named '" + name + "'");
}

std::size_t count_params(const DenoiserConfig& cfg) { return ParamLayout(cfg).total(); }

// ---- forward -------------------------------------------------------------------

namespace {

template <class T>
class ForwardWalker {
 public:
  ForwardWalker(const DenoiserConfig& cfg, const ParamLayout& layout, Tape<T>& tape,
                const std::vector<Var>& params, Var input, std::span<const int> taus,
                bool batched, const typename Denoiser<T>::Options& opts)
      : cfg_(cfg), layout_(layout), tape_(tape), params_(params), h_(input), taus_(taus),
        batched_(batched), opts_(opts) {}

  Var result() const { return h_; }

  void time_mlp(int base, int) {
    // One feature row per sample; a single sample keeps the rank-1 form.
    std::vector<T> f;
    f.reserve(taus_.size() * std::size_t(base));
    for (int tau : taus_) {
      const auto feats = time_features(tau, base);
      f.insert(f.end(), feats.begin(), feats.end());
    }
    const tensor::Shape shape = batched_ ? tensor::Shape{int(taus_.size()), base} : tensor::Shape{base};
    Var raw = tape_.constant(Tensor<T>(shape, std::move(f)));
    Var w1 = next("time.w1");
    Var b1 = next("time.b1");
    Var t = tensor::silu(tape_, tensor::linear(tape_, raw, w1, b1));
    Var w2 = next("time.w2");
    Var b2 = next("time.b2");
    t = tensor::linear(tape_, t, w2, b2);
    temb_act_ = tensor::silu(tape_, t);
  }

  void init_conv(int, int) {
    Var w = next("init.w");
    Var b = next("init.b");
    h_ = tensor::conv2d(tape_, h_, w, b);
    skips_.push_back(h_);
  }

  void res_block(const std::string& name, int cin, int cout) {
    Var x = h_;
    Var h = norm(x, name + ".norm1", cin);
    h = tensor::silu(tape_, h);
    h = conv(h, name + ".conv1");
    Var pw = next(name + ".temb.w");
    Var pb = next(name + ".temb.b");
    Var proj = tensor::linear(tape_, temb_act_, pw, pb);
    h = tensor::add_channel_bias(tape_, h, proj);
    h = norm(h, name + ".norm2", cout);
    h = tensor::silu(tape_, h);
    if (opts_.train && cfg_.dropout > 0.0) {
      require(opts_.rng != nullptr, ErrorKind::Usage, "denoiser: training dropout needs an rng");
      h = tensor::dropout(tape_, h, T(cfg_.dropout), *opts_.rng);
    }
    h = conv(h, name + ".conv2");
    Var skip = cin != cout ? conv(x, name + ".skip") : x;
    h_ = tensor::add(tape_, h, skip);
  }

  void push_skip() { skips_.push_back(h_); }
  void pop_skip_concat() {
    h_ = tensor::concat_channels(tape_, h_, skips_.back());
    skips_.pop_back();
  }
  void downsample() { h_ = tensor::avg_downsample2x(tape_, h_); }
  void upsample() { h_ = tensor::nearest_upsample2x(tape_, h_); }
  void out_head(int cin, int) {
    Var h = norm(h_, "out.norm", cin);
    h = tensor::silu(tape_, h);
    h_ = conv(h, "out.conv");
  }

 private:
  Var next(const std::string& name) {
    const auto& e = layout_.entries().at(cursor_);
    if (!(e.name == name)) fail(ErrorKind::Usage, "denoiser: parameter order mismatch, expected " + name + " got " + e.name);
    return params_.at(cursor_++);
  }
  Var conv(Var x, const std::string& name) {
    Var w = next(name + ".w");
    Var b = next(name + ".b");
    return tensor::conv2d(tape_, x, w, b);
  }
  Var norm(Var x, const std::string& name, int c) {
    Var g = next(name + ".gamma");
    Var b = next(name + ".beta");
    return tensor::group_norm(tape_, x, g, b, norm_groups(c, cfg_.max_norm_groups), T(1e-5));
  }

  const DenoiserConfig& cfg_;
  const ParamLayout& layout_;
  Tape<T>& tape_;
  const std::vector<Var>& params_;
  Var h_;
  Var temb_act_;
  std::vector<Var> skips_;
  std::size_t cursor_ = 0;
  std::span<const int> taus_;
  bool batched_;
  const typename Denoiser<T>::Options& opts_;
};

}  // namespace

template <class T>
Denoiser<T>::Denoiser(DenoiserConfig cfg, std::vector<T> flat)
    : cfg_(std::move(cfg)), layout_(std::make_shared<const ParamLayout>(cfg_)),
      flat_(std::make_shared<std::vector<T>>(std::move(flat))) {
  if (!(flat_->size() == layout_->total())) fail(ErrorKind::Shape, "denoiser: " + std::to_string(flat_->size()) + " parameters for a layout of " + std::to_string(layout_->total()));
}

template <class T>
Denoiser<T> Denoiser<T>::initialize(const DenoiserConfig& cfg, std::uint64_t seed) {
  const ParamLayout layout(cfg);
  std::vector<T> flat(layout.total(), T(0));
  Rng rng(seed);
  for (const auto& e : layout.entries()) {
    const auto& n = e.name;
    const bool is_weight = n.ends_with(".w") || n.ends_with(".w1") || n.ends_with(".w2");
    if (n.ends_with(".gamma")) {
      std::fill_n(flat.begin() + std::ptrdiff_t(e.offset), e.size, T(1));
    } else if (is_weight && !n.starts_with("out.conv")) {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < e.shape.size(); ++d) fan_in *= std::size_t(e.shape[d]);
      const double bound = 1.0 / std::sqrt(double(fan_in));
      for (std::size_t i = 0; i < e.size; ++i) {
        const double u = double(rng() >> 11) * 0x1.0p-53;
        flat[e.offset + i] = T((2.0 * u - 1.0) * bound);
      }
    }
    // biases, betas and the output conv stay zero
  }
  return Denoiser(cfg, std::move(flat));
}

template <class T>
template <class U>
Denoiser<U> Denoiser<T>::cast() const {
  std::vector<U> out(flat_->begin(), flat_->end());
  return Denoiser<U>(cfg_, std::move(out));
}

template <class T>
std::vector<Var> Denoiser<T>::bind(Tape<T>& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(layout_->entries().size());
  for (const auto& e : layout_->entries()) {
    vars.push_back(tape.leaf(Tensor<T>::view(e.shape, flat_, e.offset), requires_grad));
  }
  return vars;
}

template <class T>
std::vector<Var> Denoiser<T>::bind_into(Tape<T>& tape, std::span<T> grad_sink) const {
  require(grad_sink.size() == layout_->total(), ErrorKind::Shape, "bind_into: sink size mismatch");
  std::vector<Var> vars;
  vars.reserve(layout_->entries().size());
  for (const auto& e : layout_->entries()) {
    vars.push_back(tape.leaf_into(Tensor<T>::view(e.shape, flat_, e.offset),
                                  grad_sink.subspan(e.offset, e.size)));
  }
  return vars;
}

template <class T>
Var Denoiser<T>::input(Tape<T>& tape, const Field& x_tau, const Field& x_c, const Mask& m_i) const {
  require_same_shape(x_tau, x_c, "denoiser input x_tau vs x_c");
  require_same_shape(x_tau, m_i, "denoiser input x_tau vs m_i");
  cfg_.validate_spatial(x_tau.rows, x_tau.cols);
  const std::size_t n = x_tau.size();
  std::vector<T> v(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = T(x_tau[i]);
    v[n + i] = T(x_c[i]);
    v[2 * n + i] = T(m_i[i] ? 1 : 0);
  }
  return tape.constant(Tensor<T>({3, x_tau.rows, x_tau.cols}, std::move(v)));
}

template <class T>
Var Denoiser<T>::forward(Tape<T>& tape, const std::vector<Var>& params, Var input, int tau,
                         const Options& opts) const {
  const int taus[1] = {tau};
  return forward(tape, params, input, std::span<const int>(taus), opts);
}

template <class T>
Var Denoiser<T>::forward(Tape<T>& tape, const std::vector<Var>& params, Var input,
                         std::span<const int> taus, const Options& opts) const {
  require(params.size() == layout_->entries().size(), ErrorKind::Usage,
          "denoiser: bound parameter count mismatch");
  const tensor::Shape s = tape.shape(input);
  const bool batched = s.size() == 4;
  const std::size_t c = batched ? 1 : 0;
  const bool ok = (s.size() == 3 || batched) && s[c] == DenoiserConfig::in_channels;
  if (!ok) fail(ErrorKind::Shape, "denoiser: input must be [3,H,W] or [B,3,H,W], got " + tensor::shape_str(s));
  const std::size_t nb = batched ? std::size_t(s[0]) : 1;
  if (!(taus.size() == nb)) fail(ErrorKind::Shape, "denoiser: " + std::to_string(taus.size()) + " diffusion steps for " + std::to_string(nb) + " samples");
  cfg_.validate_spatial(s[c + 1], s[c + 2]);
  ForwardWalker<T> walker(cfg_, *layout_, tape, params, input, taus, batched, opts);
  walk_architecture(cfg_, walker);
  return walker.result();
}

template <class T>
Var Denoiser<T>::input_batch(Tape<T>& tape, std::span<const Field> x_tau, std::span<const Field> x_c,
                             std::span<const Mask> m_i) const {
  require(!x_tau.empty(), ErrorKind::Usage, "denoiser: empty batch");
  require(x_tau.size() == x_c.size() && x_tau.size() == m_i.size(), ErrorKind::Shape,
          "denoiser: batch member counts differ");
  const int rows = x_tau[0].rows, cols = x_tau[0].cols;
  const std::size_t n = x_tau[0].size();
  std::vector<T> v(3 * n * x_tau.size());
  for (std::size_t b = 0; b < x_tau.size(); ++b) {
    require_same_shape(x_tau[b], x_tau[0], "denoiser batch member");
    require_same_shape(x_tau[b], x_c[b], "denoiser input x_tau vs x_c");
    require_same_shape(x_tau[b], m_i[b], "denoiser input x_tau vs m_i");
    T* d = v.data() + 3 * n * b;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = T(x_tau[b][i]);
      d[n + i] = T(x_c[b][i]);
      d[2 * n + i] = T(m_i[b][i] ? 1 : 0);
    }
  }
  cfg_.validate_spatial(rows, cols);
  return tape.constant(Tensor<T>({int(x_tau.size()), 3, rows, cols}, std::move(v)));
}

template <class T>
std::vector<Field> Denoiser<T>::predict_batch(std::span<const Field> x_tau, std::span<const Field> x_c,
                                              std::span<const Mask> m_i, std::span<const int> taus) const {
  Tape<T> tape;
  const auto params = bind(tape, false);
  const Var in = input_batch(tape, x_tau, x_c, m_i);
  const Var out = forward(tape, params, in, taus, Options{});
  const T* v = tape.value(out).raw();
  std::vector<Field> res;
  res.reserve(x_tau.size());
  for (std::size_t b = 0; b < x_tau.size(); ++b) {
    Field f(x_tau[b].rows, x_tau[b].cols);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = double(v[b * f.size() + i]);
    res.push_back(std::move(f));
  }
  return res;
}

template <class T>
Field Denoiser<T>::predict(const Field& x_tau, const Field& x_c, const Mask& m_i, int tau) const {
  Tape<T> tape;
  const auto params = bind(tape, false);
  const Var in = input(tape, x_tau, x_c, m_i);
  const Var out = forward(tape, params, in, tau, Options{});
  const auto v = tape.value(out).data();
  Field f(x_tau.rows, x_tau.cols);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = double(v[i]);
  return f;
}

template <class T>
void gather_grads(const Tape<T>& tape, const std::vector<Var>& params, const ParamLayout& layout,
                  T scale, std::span<T> out) {
  require(out.size() == layout.total(), ErrorKind::Shape, "gather_grads: buffer size mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto g = tape.grad_span(params[p]);
    if (g.empty()) continue;
    T* dst = out.data() + layout.entries()[p].offset;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
  }
}

template class Denoiser<float>;
template class Denoiser<double>;
template Denoiser<double> Denoiser<float>::cast<double>() const;
template Denoiser<float> Denoiser<double>::cast<float>() const;
template Denoiser<float> Denoiser<float>::cast<float>() const;
template Denoiser<double> Denoiser<double>::cast<double>() const;
template void gather_grads<float>(const Tape<float>&, const std::vector<Var>&, const ParamLayout&,
                                  float, std::span<float>);
template void gather_grads<double>(const Tape<double>&, const std::vector<Var>&,
                                   const ParamLayout&, double, std::span<double>);

}  // namespace solid::net
