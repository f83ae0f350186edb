#include "tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>
#include <memory>
#include <numeric>

namespace solid::tensor {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (!(s.size() == rank)) fail(ErrorKind::Shape, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

void require_equal(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) fail(ErrorKind::Shape, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Valid output columns for a horizontal tap offset dx are [x0, x1).
inline void tap_range(int dx, int w, int& x0, int& x1) {
  x0 = std::max(0, -dx);
  x1 = std::min(w, w - dx);
}

/// Spatial operand [C,H,W] or [B,C,H,W]; rank 3 means one sample.
struct Spatial {
  int b = 1, c = 0, h = 0, w = 0;
  bool batched = false;
  int hw() const { return h * w; }
  std::size_t sample() const { return std::size_t(c) * h * w; }
  Shape with(int ch, int hh, int ww) const {
    return batched ? Shape{b, ch, hh, ww} : Shape{ch, hh, ww};
  }
};

Spatial spatial(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  fail(ErrorKind::Shape, std::string(op) + ": expected [C,H,W] or [B,C,H,W], got " + shape_str(s));
}

// Writes the k*k taps of one sample into rows of a column matrix with leading
// dimension ld; the sample occupies columns [0, h*w) of the pointer given.
template <class T>
void im2col(const T* in, int c, int h, int w, int k, T* col, std::size_t ld) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + std::size_t((ci * k + ky) * k + kx) * ld;
        const int dx = kx - pad;
        int x0, x1;
        tap_range(dx, w, x0, x1);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* dst = row + y * w;
          // Explicit loops: spans are a few elements and libc calls dominate otherwise.
          if (sy < 0 || sy >= h || x0 >= x1) {
            for (int x = 0; x < w; ++x) dst[x] = T(0);
            continue;
          }
          const T* src = in + std::size_t(ci) * hw + sy * w + dx;
          for (int x = 0; x < x0; ++x) dst[x] = T(0);
          for (int x = x0; x < x1; ++x) dst[x] = src[x];
          for (int x = x1; x < w; ++x) dst[x] = T(0);
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int c, int h, int w, int k, T* out, std::size_t ld) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + std::size_t((ci * k + ky) * k + kx) * ld;
        const int dx = kx - pad;
        int x0, x1;
        tap_range(dx, w, x0, x1);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          T* dst = out + std::size_t(ci) * hw + sy * w + dx;
          const T* src = row + y * w;
          for (int x = x0; x < x1; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

// [B][C][n] <-> [C][B*n] relayout so a batch shares one GEMM.
template <class T>
void to_channel_major(const T* src, int b, int c, int n, T* dst) {
  for (int s = 0; s < b; ++s)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(src + (std::size_t(s) * c + ch) * n, n, dst + (std::size_t(ch) * b + s) * n);
}

template <class T>
void from_channel_major(const T* src, int b, int c, int n, T* dst) {
  for (int s = 0; s < b; ++s)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(src + (std::size_t(ch) * b + s) * n, n, dst + (std::size_t(s) * c + ch) * n);
}

// Sums with eight independent partials combined in a fixed order: the loop
// vectorizes without reassociation, so results never depend on alignment.
template <class A, class F>
A lane_sum(std::size_t n, F&& term) {
  A acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += term(i + j);
  for (std::size_t j = 0; i < n; ++i, ++j) acc[j] += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// Exponent-field test; branch-free so it vectorizes.
template <class T>
bool all_finite(std::span<const T> v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr U mask = sizeof(T) == 4 ? U(0x7f800000u) : U(0x7ff0000000000000ull);
  U bad = 0;
  for (T x : v) bad |= U((std::bit_cast<U>(x) & mask) == mask);
  return bad == 0;
}

// Logistic function. The float path uses a polynomial exp (about 2 ulp) that
// vectorizes; it is the same arithmetic in every lane, so it is deterministic.
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline float sigmoid(float x) {
  float t = -x;
  t = t > 88.0f ? 88.0f : t;
  t = t < -88.0f ? -88.0f : t;
  const float fn = (t * 1.44269504f + 12582912.0f) - 12582912.0f;  // round to nearest
  const float r = (t - fn * 0.693359375f) + fn * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float e = (p * r * r + r + 1.0f) *
                  std::bit_cast<float>(std::uint32_t(std::int32_t(fn) + 127) << 23);
  return 1.0f / (1.0f + e);
}

template <class T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (!(d >= 0)) fail(ErrorKind::Shape, "negative extent in " + shape_str(shape));
    n *= std::size_t(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---- Tensor ----------------------------------------------------------------

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
  if (!(numel(shape_) == values.size())) fail(ErrorKind::Shape, "tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape_));
  auto owner = std::make_shared<std::vector<T>>(std::move(values));
  size_ = owner->size();
  ptr_ = std::shared_ptr<const T>(owner, owner->data());
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return filled(std::move(shape), T(0));
}

template <class T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <class T>
Tensor<T> Tensor<T>::view(Shape shape, std::shared_ptr<const std::vector<T>> owner,
                          std::size_t offset) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.size_ = numel(t.shape_);
  if (!(offset + t.size_ <= owner->size())) fail(ErrorKind::Shape, "tensor view " + shape_str(t.shape_) + " at offset " + std::to_string(offset) + " exceeds buffer of " + std::to_string(owner->size()));
  t.ptr_ = std::shared_ptr<const T>(owner, owner->data() + offset);
  return t;
}

// ---- Tape ------------------------------------------------------------------

template <class T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad, {}});
  return Var{int(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::leaf_into(Tensor<T> value, std::span<T> sink) {
  require(sink.size() == value.size(), ErrorKind::Shape, "leaf_into: sink size mismatch");
  nodes_.push_back(Node{std::move(value), {}, sink.data(), true, {}});
  return Var{int(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (Var v : inputs) {
    require(v.id >= 0 && std::size_t(v.id) < nodes_.size(), ErrorKind::Usage,
            "tape: op input not on this tape");
    needs = needs || nodes_[std::size_t(v.id)].requires_grad;
  }
  if (!all_finite(value.data())) fail(ErrorKind::Numerical, "tape: non-finite op output");
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var{int(nodes_.size()) - 1};
}

template <class T>
std::span<T> Tape<T>::grad_buffer(Var v) {
  Node& n = nodes_.at(std::size_t(v.id));
  if (n.sink) return {n.sink, n.value.size()};
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var loss, T seed) {
  require(loss.valid() && std::size_t(loss.id) < nodes_.size(), ErrorKind::Usage,
          "backward: loss not on tape");
  if (!(value(loss).size() == 1)) fail(ErrorKind::Shape, "backward: loss must be scalar, got " + shape_str(shape(loss)));
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss)[0] = seed;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[std::size_t(id)];
    if (!n.fn || n.grad.empty()) continue;
    // Node storage may reallocate only on record(), never during backward.
    n.fn(*this, std::span<const T>(n.grad));
  }
}

template <class T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = nodes_.at(std::size_t(v.id));
  if (n.sink) return Tensor<T>(n.value.shape(), std::vector<T>(n.sink, n.sink + n.value.size()));
  if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape());
  return Tensor<T>(n.value.shape(), n.grad);
}

template <class T>
std::span<const T> Tape<T>::grad_span(Var v) const {
  const Node& n = nodes_.at(std::size_t(v.id));
  if (n.sink) return {n.sink, n.value.size()};
  return n.grad;
}

// ---- conv2d ----------------------------------------------------------------

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var bias) {
  const Spatial sp = spatial(tape.shape(x), "conv2d input");
  const Shape ws = tape.shape(w);
  require_rank(ws, 4, "conv2d kernel");
  const int nb = sp.b, cin = sp.c, h = sp.h, wd = sp.w;
  const int cout = ws[0], k = ws[2];
  if (!(ws[1] == cin)) fail(ErrorKind::Shape, "conv2d: kernel in-channels " + std::to_string(ws[1]) + " != input channels " + std::to_string(cin));
  if (!(ws[2] == ws[3] && k % 2 == 1)) fail(ErrorKind::Shape, "conv2d: kernel must be square with odd extent, got " + shape_str(ws));
  if (bias.valid()) {
    if (!(tape.shape(bias) == Shape{cout})) fail(ErrorKind::Shape, "conv2d: bias shape " + shape_str(tape.shape(bias)) + " != [" + std::to_string(cout) + "]");
  }
  const int hw = h * wd;
  const int kk = cin * k * k;
  const std::size_t ncol = std::size_t(nb) * hw;

  // Column matrix [kk, B*hw]; kept for the weight gradient instead of being rebuilt.
  // A single-sample 1x1 conv reads the input in place.
  std::shared_ptr<T[]> col;
  const T* xv = tape.value(x).raw();
  if (k != 1 || nb > 1) {
    col.reset(new T[std::size_t(kk) * ncol]);
    for (int s = 0; s < nb; ++s)
      im2col(xv + s * sp.sample(), cin, h, wd, k, col.get() + std::size_t(s) * hw, ncol);
  }
  const T* colp = col ? col.get() : xv;

  std::vector<T> out(std::size_t(cout) * ncol);
  CMapMat<T> wm(tape.value(w).raw(), cout, kk);
  if (nb == 1) {
    MapMat<T>(out.data(), cout, hw).noalias() = wm * CMapMat<T>(colp, kk, hw);
  } else {
    std::unique_ptr<T[]> tmp(new T[out.size()]);
    MapMat<T>(tmp.get(), cout, Eigen::Index(ncol)).noalias() = wm * CMapMat<T>(colp, kk, Eigen::Index(ncol));
    from_channel_major(tmp.get(), nb, cout, hw, out.data());
  }
  if (bias.valid()) {
    const T* b = tape.value(bias).raw();
    for (int s = 0; s < nb; ++s)
      for (int c = 0; c < cout; ++c) {
        T* o = out.data() + (std::size_t(s) * cout + c) * hw;
        for (int i = 0; i < hw; ++i) o[i] += b[c];
      }
  }

  return tape.record(
      Tensor<T>(sp.with(cout, h, wd), std::move(out)), {x, w, bias.valid() ? bias : x},
      [=](Tape<T>& t, std::span<const T> g) {
        std::unique_ptr<T[]> gbuf;
        const T* gp = g.data();
        if (nb > 1) {
          gbuf.reset(new T[g.size()]);
          to_channel_major(g.data(), nb, cout, hw, gbuf.get());
          gp = gbuf.get();
        }
        CMapMat<T> gm(gp, cout, Eigen::Index(ncol));
        const T* cp = col ? col.get() : t.value(x).raw();
        if (t.requires_grad(w)) {
          auto gw = t.grad_buffer(w);
          MapMat<T>(gw.data(), cout, kk).noalias() += gm * CMapMat<T>(cp, kk, Eigen::Index(ncol)).transpose();
        }
        if (bias.valid() && t.requires_grad(bias)) {
          auto gb = t.grad_buffer(bias);
          // Plain loop: Eigen reductions peel by pointer alignment and are not bit-stable.
          for (int c = 0; c < cout; ++c) {
            const T* row = gp + std::size_t(c) * ncol;
            gb[c] += lane_sum<T>(ncol, [&](std::size_t i) { return row[i]; });
          }
        }
        if (t.requires_grad(x)) {
          auto gx = t.grad_buffer(x);
          CMapMat<T> wm2(t.value(w).raw(), cout, kk);
          if (k == 1 && nb == 1) {
            MapMat<T>(gx.data(), cin, hw).noalias() += wm2.transpose() * gm;
          } else {
            std::unique_ptr<T[]> dcol(new T[std::size_t(kk) * ncol]);
            MapMat<T>(dcol.get(), kk, Eigen::Index(ncol)).noalias() = wm2.transpose() * gm;
            for (int s = 0; s < nb; ++s)
              col2im_add(dcol.get() + std::size_t(s) * hw, cin, h, wd, k,
                         gx.data() + s * sp.sample(), ncol);
          }
        }
      });
}

// ---- group_norm ------------------------------------------------------------

template <class T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, int groups, T eps) {
  const Spatial sp = spatial(tape.shape(x), "group_norm");
  const int nb = sp.b, c = sp.c, hw = sp.hw();
  if (!(groups > 0 && c % groups == 0)) fail(ErrorKind::Validation, "group_norm: channels " + std::to_string(c) + " not divisible by groups " + std::to_string(groups));
  require_equal(tape.shape(gamma), Shape{c}, "group_norm gamma");
  require_equal(tape.shape(beta), Shape{c}, "group_norm beta");

  const int cpg = c / groups;
  const std::size_t n = std::size_t(cpg) * hw;
  const std::size_t total = std::size_t(nb) * groups;
  const T* xv = tape.value(x).raw();
  const T* gv = tape.value(gamma).raw();
  const T* bv = tape.value(beta).raw();

  // Groups of consecutive samples are contiguous, so (sample, group) flattens to one index.
  std::vector<T> xhat(total * n);
  std::vector<T> inv_std(total);
  for (std::size_t g = 0; g < total; ++g) {
    const T* xg = xv + g * n;
    const double mean = lane_sum<double>(n, [&](std::size_t i) { return double(xg[i]); }) / double(n);
    const double var = lane_sum<double>(n, [&](std::size_t i) {
                         const double d = double(xg[i]) - mean;
                         return d * d;
                       }) / double(n);
    const double is = 1.0 / std::sqrt(var + double(eps));
    inv_std[g] = T(is);
    T* xh = xhat.data() + g * n;
    for (std::size_t i = 0; i < n; ++i) xh[i] = T((double(xg[i]) - mean) * is);
  }
  std::vector<T> out(xhat.size());
  for (int s = 0; s < nb; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (std::size_t(s) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) out[off + i] = gv[ch] * xhat[off + i] + bv[ch];
    }

  return tape.record(
      Tensor<T>(tape.shape(x), std::move(out)), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                std::span<const T> g) {
        const T* gam = t.value(gamma).raw();
        if (t.requires_grad(gamma) || t.requires_grad(beta)) {
          auto gg = t.grad_buffer(gamma);
          auto gb = t.grad_buffer(beta);
          for (int s = 0; s < nb; ++s)
            for (int ch = 0; ch < c; ++ch) {
              const T* gp = g.data() + (std::size_t(s) * c + ch) * hw;
              const T* xp = xhat.data() + (std::size_t(s) * c + ch) * hw;
              gg[ch] += lane_sum<T>(std::size_t(hw), [&](std::size_t i) { return gp[i] * xp[i]; });
              gb[ch] += lane_sum<T>(std::size_t(hw), [&](std::size_t i) { return gp[i]; });
            }
        }
        if (!t.requires_grad(x)) return;
        auto gx = t.grad_buffer(x);
        for (std::size_t grp = 0; grp < total; ++grp) {
          const std::size_t base = grp * n;
          const int ch0 = int(grp % std::size_t(groups)) * cpg;
          // s1 = sum dxhat, s2 = sum dxhat * xhat, with dxhat = g * gamma.
          double s1 = 0.0, s2 = 0.0;
          for (int k = 0; k < cpg; ++k) {
            const T* gp = g.data() + base + std::size_t(k) * hw;
            const T* xp = xhat.data() + base + std::size_t(k) * hw;
            const double gm = double(gam[ch0 + k]);
            s1 += gm * lane_sum<double>(std::size_t(hw), [&](std::size_t i) { return double(gp[i]); });
            s2 += gm * lane_sum<double>(std::size_t(hw), [&](std::size_t i) { return double(gp[i]) * double(xp[i]); });
          }
          const double is = double(inv_std[grp]);
          const double dn = double(n);
          for (int k = 0; k < cpg; ++k) {
            const std::size_t off = base + std::size_t(k) * hw;
            const double gm = double(gam[ch0 + k]);
            for (int i = 0; i < hw; ++i) {
              const double dxh = double(g[off + i]) * gm;
              gx[off + i] += T(is / dn * (dn * dxh - s1 - double(xhat[off + i]) * s2));
            }
          }
        }
      });
}

// ---- elementwise -----------------------------------------------------------

template <class T>
Var silu(Tape<T>& tape, Var x) {
  const auto xv = tape.value(x).data();
  std::vector<T> out(xv.size());
  std::vector<T> sig(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    sig[i] = sigmoid(xv[i]);
    out[i] = xv[i] * sig[i];
  }
  return tape.record(Tensor<T>(tape.shape(x), std::move(out)), {x},
                     [=, sig = std::move(sig)](Tape<T>& t, std::span<const T> g) {
                       const auto v = t.value(x).data();
                       auto gx = t.grad_buffer(x);
                       for (std::size_t i = 0; i < v.size(); ++i)
                         gx[i] += g[i] * sig[i] * (T(1) + v[i] * (T(1) - sig[i]));
                     });
}

// Resampling treats every (sample, channel) plane independently.
template <class T>
Var nearest_upsample2x(Tape<T>& tape, Var x) {
  const Spatial sp = spatial(tape.shape(x), "nearest_upsample2x");
  const int planes = sp.b * sp.c, h = sp.h, w = sp.w;
  const T* xv = tape.value(x).raw();
  std::vector<T> out(std::size_t(planes) * 4 * h * w);
  for (std::size_t r = 0; r < std::size_t(planes) * h; ++r) {
    const T* src = xv + r * w;
    T* d0 = out.data() + r * 4 * w;
    for (int xx = 0; xx < w; ++xx) d0[2 * xx] = d0[2 * xx + 1] = src[xx];
    std::copy_n(d0, 2 * w, d0 + 2 * w);
  }
  return tape.record(Tensor<T>(sp.with(sp.c, 2 * h, 2 * w), std::move(out)), {x},
                     [=](Tape<T>& t, std::span<const T> g) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t r = 0; r < std::size_t(planes) * h; ++r) {
                         const T* g0 = g.data() + r * 4 * w;
                         const T* g1 = g0 + 2 * w;
                         T* dst = gx.data() + r * w;
                         for (int xx = 0; xx < w; ++xx)
                           dst[xx] += (g0[2 * xx] + g0[2 * xx + 1]) + (g1[2 * xx] + g1[2 * xx + 1]);
                       }
                     });
}

template <class T>
Var avg_downsample2x(Tape<T>& tape, Var x) {
  const Spatial sp = spatial(tape.shape(x), "avg_downsample2x");
  const int planes = sp.b * sp.c, h = sp.h, w = sp.w;
  if (!(h % 2 == 0 && w % 2 == 0)) fail(ErrorKind::Shape, "avg_downsample2x: odd spatial extent " + shape_str(tape.shape(x)));
  const int ho = h / 2, wo = w / 2;
  const T* xv = tape.value(x).raw();
  std::vector<T> out(std::size_t(planes) * ho * wo);
  for (int ch = 0; ch < planes; ++ch)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        const T* p = xv + (std::size_t(ch) * h + 2 * y) * w + 2 * xx;
        out[(std::size_t(ch) * ho + y) * wo + xx] = (p[0] + p[1] + p[w] + p[w + 1]) * T(0.25);
      }
  return tape.record(Tensor<T>(sp.with(sp.c, ho, wo), std::move(out)), {x},
                     [=](Tape<T>& t, std::span<const T> g) {
                       auto gx = t.grad_buffer(x);
                       for (int ch = 0; ch < planes; ++ch)
                         for (int y = 0; y < ho; ++y)
                           for (int xx = 0; xx < wo; ++xx) {
                             const T v = g[(std::size_t(ch) * ho + y) * wo + xx] * T(0.25);
                             T* p = gx.data() + (std::size_t(ch) * h + 2 * y) * w + 2 * xx;
                             p[0] += v;
                             p[1] += v;
                             p[w] += v;
                             p[w + 1] += v;
                           }
                     });
}

template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Shape ws = tape.shape(w);
  require_rank(ws, 2, "linear weight");
  const int out_n = ws[0], in_n = ws[1];
  const Shape xs = tape.shape(x);
  const bool batched = xs.size() == 2;
  const int nb = batched ? xs[0] : 1;
  require_equal(xs, batched ? Shape{nb, in_n} : Shape{in_n}, "linear input");
  if (b.valid()) require_equal(tape.shape(b), Shape{out_n}, "linear bias");
  // Rows are samples: Y [B,out] = X [B,in] W^T.
  std::vector<T> out(std::size_t(nb) * out_n);
  MapMat<T>(out.data(), nb, out_n).noalias() =
      CMapMat<T>(tape.value(x).raw(), nb, in_n) * CMapMat<T>(tape.value(w).raw(), out_n, in_n).transpose();
  if (b.valid()) {
    for (int s = 0; s < nb; ++s)
      for (int i = 0; i < out_n; ++i) out[std::size_t(s) * out_n + i] += tape.value(b)[i];
  }
  return tape.record(
      Tensor<T>(batched ? Shape{nb, out_n} : Shape{out_n}, std::move(out)), {x, w, b.valid() ? b : x},
      [=](Tape<T>& t, std::span<const T> g) {
        CMapMat<T> gm(g.data(), nb, out_n);
        if (t.requires_grad(w)) {
          MapMat<T>(t.grad_buffer(w).data(), out_n, in_n).noalias() +=
              gm.transpose() * CMapMat<T>(t.value(x).raw(), nb, in_n);
        }
        if (b.valid() && t.requires_grad(b)) {
          auto gb = t.grad_buffer(b);
          for (int s = 0; s < nb; ++s)
            for (int i = 0; i < out_n; ++i) gb[i] += g[std::size_t(s) * out_n + i];
        }
        if (t.requires_grad(x)) {
          MapMat<T>(t.grad_buffer(x).data(), nb, in_n).noalias() +=
              gm * CMapMat<T>(t.value(w).raw(), out_n, in_n);
        }
      });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_equal(tape.shape(a), tape.shape(b), "add");
  const auto av = tape.value(a).data(), bv = tape.value(b).data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(Tensor<T>(tape.shape(a), std::move(out)), {a, b},
                     [=](Tape<T>& t, std::span<const T> g) {
                       if (t.requires_grad(a)) accumulate(t.grad_buffer(a), g);
                       if (t.requires_grad(b)) accumulate(t.grad_buffer(b), g);
                     });
}

template <class T>
Var sub(Tape<T>& tape, Var a, Var b) {
  require_equal(tape.shape(a), tape.shape(b), "sub");
  const auto av = tape.value(a).data(), bv = tape.value(b).data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record(Tensor<T>(tape.shape(a), std::move(out)), {a, b},
                     [=](Tape<T>& t, std::span<const T> g) {
                       if (t.requires_grad(a)) accumulate(t.grad_buffer(a), g);
                       if (t.requires_grad(b)) {
                         auto gb = t.grad_buffer(b);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                       }
                     });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require_equal(tape.shape(a), tape.shape(b), "mul");
  const auto av = tape.value(a).data(), bv = tape.value(b).data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(Tensor<T>(tape.shape(a), std::move(out)), {a, b},
                     [=](Tape<T>& t, std::span<const T> g) {
                       const auto va = t.value(a).data(), vb = t.value(b).data();
                       if (t.requires_grad(a)) {
                         auto ga = t.grad_buffer(a);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                       }
                       if (t.requires_grad(b)) {
                         auto gb = t.grad_buffer(b);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                       }
                     });
}

template <class T>
Var mul_const(Tape<T>& tape, Var a, const Tensor<T>& c) {
  require_equal(tape.shape(a), c.shape(), "mul_const");
  const auto av = tape.value(a).data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c[i];
  return tape.record(Tensor<T>(tape.shape(a), std::move(out)), {a},
                     [=](Tape<T>& t, std::span<const T> g) {
                       auto ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
                     });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T s) {
  const auto av = tape.value(a).data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  return tape.record(Tensor<T>(tape.shape(a), std::move(out)), {a},
                     [=](Tape<T>& t, std::span<const T> g) {
                       auto ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                     });
}

template <class T>
Var sum(Tape<T>& tape, Var a) {
  const auto av = tape.value(a).data();
  const T s = lane_sum<T>(av.size(), [&](std::size_t i) { return av[i]; });
  return tape.record(Tensor<T>({1}, {s}), {a}, [=](Tape<T>& t, std::span<const T> g) {
    auto ga = t.grad_buffer(a);
    for (auto& v : ga) v += g[0];
  });
}

template <class T>
Var add_channel_bias(Tape<T>& tape, Var x, Var v) {
  const Spatial sp = spatial(tape.shape(x), "add_channel_bias");
  const int nb = sp.b, c = sp.c, hw = sp.hw();
  require_equal(tape.shape(v), sp.batched ? Shape{nb, c} : Shape{c}, "add_channel_bias vector");
  const T* xv = tape.value(x).raw();
  const T* vv = tape.value(v).raw();
  const std::size_t planes = std::size_t(nb) * c;
  std::vector<T> out(planes * hw);
  for (std::size_t p = 0; p < planes; ++p)
    for (int i = 0; i < hw; ++i) out[p * hw + i] = xv[p * hw + i] + vv[p];
  return tape.record(Tensor<T>(tape.shape(x), std::move(out)), {x, v},
                     [=](Tape<T>& t, std::span<const T> g) {
                       if (t.requires_grad(x)) accumulate(t.grad_buffer(x), g);
                       if (t.requires_grad(v)) {
                         auto gv = t.grad_buffer(v);
                         for (std::size_t p = 0; p < planes; ++p) {
                           const T* gp = g.data() + p * hw;
                           gv[p] += lane_sum<T>(std::size_t(hw), [&](std::size_t i) { return gp[i]; });
                         }
                       }
                     });
}

template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Spatial sa = spatial(tape.shape(a), "concat_channels");
  const Spatial sb = spatial(tape.shape(b), "concat_channels");
  if (!(sa.batched == sb.batched && sa.b == sb.b && sa.h == sb.h && sa.w == sb.w)) fail(ErrorKind::Shape, "concat_channels: mismatch " + shape_str(tape.shape(a)) + " vs " + shape_str(tape.shape(b)));
  const std::size_t na = sa.sample(), nbs = sb.sample();
  const int nb = sa.b;
  const T* av = tape.value(a).raw();
  const T* bv = tape.value(b).raw();
  std::vector<T> out(std::size_t(nb) * (na + nbs));
  for (int s = 0; s < nb; ++s) {
    T* o = out.data() + std::size_t(s) * (na + nbs);
    std::copy_n(av + s * na, na, o);
    std::copy_n(bv + s * nbs, nbs, o + na);
  }
  return tape.record(Tensor<T>(sa.with(sa.c + sb.c, sa.h, sa.w), std::move(out)), {a, b},
                     [=](Tape<T>& t, std::span<const T> g) {
                       for (int s = 0; s < nb; ++s) {
                         const auto gs = g.subspan(std::size_t(s) * (na + nbs), na + nbs);
                         if (t.requires_grad(a)) accumulate(t.grad_buffer(a).subspan(s * na, na), gs.subspan(0, na));
                         if (t.requires_grad(b)) accumulate(t.grad_buffer(b).subspan(s * nbs, nbs), gs.subspan(na));
                       }
                     });
}

template <class T>
Var dropout(Tape<T>& tape, Var x, T p, Rng& rng) {
  require(p >= T(0) && p < T(1), ErrorKind::Validation, "dropout: p must lie in [0,1)");
  if (p == T(0)) return x;
  const auto xv = tape.value(x).data();
  const T keep_scale = T(1) / (T(1) - p);
  std::vector<T> keep(xv.size());
  std::vector<T> out(xv.size());
  const std::uint64_t threshold = std::uint64_t(double(p) * 18446744073709551615.0);
  // One draw from the caller's stream seeds a cheap per-element counter stream.
  const std::uint64_t stream = rng();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    keep[i] = derive_seed(stream, i) >= threshold ? keep_scale : T(0);
    out[i] = xv[i] * keep[i];
  }
  return tape.record(Tensor<T>(tape.shape(x), std::move(out)), {x},
                     [=, keep = std::move(keep)](Tape<T>& t, std::span<const T> g) {
                       auto gx = t.grad_buffer(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
                     });
}

#define SOLID_INSTANTIATE(T)                                                       \
  template class Tensor<T>;                                                        \
  template class Tape<T>;                                                          \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var);                                 \
  template Var group_norm<T>(Tape<T>&, Var, Var, Var, int, T);                     \
  template Var silu<T>(Tape<T>&, Var);                                             \
  template Var nearest_upsample2x<T>(Tape<T>&, Var);                               \
  template Var avg_downsample2x<T>(Tape<T>&, Var);                                 \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                 \
  template Var add<T>(Tape<T>&, Var, Var);                                         \
  template Var sub<T>(Tape<T>&, Var, Var);                                         \
  template Var mul<T>(Tape<T>&, Var, Var);                                         \
  template Var mul_const<T>(Tape<T>&, Var, const Tensor<T>&);                      \
  template Var scale<T>(Tape<T>&, Var, T);                                         \
  template Var sum<T>(Tape<T>&, Var);                                              \
  template Var add_channel_bias<T>(Tape<T>&, Var, Var);                            \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                             \
  template Var dropout<T>(Tape<T>&, Var, T, Rng&);

SOLID_INSTANTIATE(float)
SOLID_INSTANTIATE(double)

#undef SOLID_INSTANTIATE

}  // namespace solid::tensor
