#pragma once

// Dense tensors with a reverse-mode tape. Shapes are explicit; the only
// broadcasting is a per-channel bias or scale. Spatial ops take one sample
// [C,H,W] or a batch [B,C,H,W] and keep the rank they were given.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace solid::tensor {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Immutable value: storage is shared, never written after construction.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, T value);
  /// Non-owning window into a shared buffer, kept alive by `owner`.
  static Tensor view(Shape shape, std::shared_ptr<const std::vector<T>> owner,
                     std::size_t offset);

  const Shape& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return size_; }
  std::span<const T> data() const { return {ptr_.get(), size_}; }
  const T* raw() const { return ptr_.get(); }
  T operator[](std::size_t i) const { return ptr_.get()[i]; }
  std::vector<T> to_vector() const { return {raw(), raw() + size_}; }

 private:
  Shape shape_;
  std::shared_ptr<const T> ptr_;
  std::size_t size_ = 0;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Records primitive ops in execution order. Single owner, not thread-safe.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const T> out_grad)>;

  Var leaf(Tensor<T> value, bool requires_grad = true);
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
  /// Leaf whose gradient accumulates into caller storage. backward() never clears it.
  Var leaf_into(Tensor<T> value, std::span<T> sink);

  /// Appends an op result. `fn` runs during backward if any input needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor<T>& value(Var v) const { return nodes_.at(std::size_t(v.id)).value; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(std::size_t(v.id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = `seed` and propagates to every node. `loss` must be scalar.
  void backward(Var loss, T seed = T(1));

  /// Gradient accumulated on `v`; zeros if nothing reached it.
  Tensor<T> grad(Var v) const;
  std::span<const T> grad_span(Var v) const;

  /// Accumulation target for backward rules; allocated on first touch.
  std::span<T> grad_buffer(Var v);

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    T* sink = nullptr;
    bool requires_grad = false;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

/// Cross-correlation, zero "same" padding. x [(B,)Cin,H,W], w [Cout,Cin,k,k], bias [Cout] optional.
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var bias = {});

/// Per-sample, per-group standardization then per-channel affine. gamma, beta [C].
template <class T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, int groups, T eps);

template <class T>
Var silu(Tape<T>& tape, Var x);

/// [(B,)C,H,W] -> [(B,)C,2H,2W].
template <class T>
Var nearest_upsample2x(Tape<T>& tape, Var x);

/// [(B,)C,H,W] -> [(B,)C,H/2,W/2], mean over 2x2 cells.
template <class T>
Var avg_downsample2x(Tape<T>& tape, Var x);

/// x [in] or [B,in], w [out,in], b [out] optional -> [out] or [B,out].
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b = {});

template <class T>
Var add(Tape<T>& tape, Var a, Var b);

template <class T>
Var sub(Tape<T>& tape, Var a, Var b);

template <class T>
Var mul(Tape<T>& tape, Var a, Var b);

/// Elementwise product with a fixed tensor that takes no gradient.
template <class T>
Var mul_const(Tape<T>& tape, Var a, const Tensor<T>& c);

template <class T>
Var scale(Tape<T>& tape, Var a, T s);

/// Sum of all entries -> shape {1}.
template <class T>
Var sum(Tape<T>& tape, Var a);

/// x [C,H,W] + v [C], or x [B,C,H,W] + v [B,C], broadcast over space.
template <class T>
Var add_channel_bias(Tape<T>& tape, Var x, Var v);

/// Concatenate [(B,)Ca,H,W] and [(B,)Cb,H,W] along channels.
template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

/// Inverted dropout; identity when p == 0. Consumes one draw from `rng`.
template <class T>
Var dropout(Tape<T>& tape, Var x, T p, Rng& rng);

}  // namespace solid::tensor
