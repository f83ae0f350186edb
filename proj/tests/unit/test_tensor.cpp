#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "gradcheck.hpp"
#include "tensor.hpp"

using namespace solid;
using namespace solid::tensor;
using solid::testing::gradcheck;
using solid::testing::project;
using solid::testing::random_tensor;

TEST_SUITE("tensor") {

TEST_CASE("conv2d 1x1 identity kernel leaves the input unchanged") {
  Rng rng(1);
  Tape<double> tape;
  auto xv = random_tensor({2, 5, 6}, rng);
  Var x = tape.constant(xv);
  Var w = tape.constant(Tensor<double>({2, 2, 1, 1}, {1, 0, 0, 1}));
  Var y = conv2d(tape, x, w);
  CHECK(tape.value(y).to_vector() == xv.to_vector());
}

TEST_CASE("conv2d impulse response of a 3x3 ones kernel is a 3x3 block") {
  Tape<double> tape;
  std::vector<double> xv(25, 0.0);
  xv[2 * 5 + 2] = 1.0;
  Var x = tape.constant(Tensor<double>({1, 5, 5}, xv));
  Var w = tape.constant(Tensor<double>::filled({1, 1, 3, 3}, 1.0));
  const auto y = tape.value(conv2d(tape, x, w)).to_vector();
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      const bool inside = std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1;
      CHECK(y[std::size_t(r * 5 + c)] == (inside ? 1.0 : 0.0));
    }
}

TEST_CASE("conv2d gradient matches finite differences") {
  Rng rng(2);
  std::vector<Tensor<double>> in{random_tensor({2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                                 random_tensor({3}, rng)};
  auto r = gradcheck(in, [](Tape<double>& t, const std::vector<Var>& v) {
    return sum(t, conv2d(t, v[0], v[1], v[2]));
  });
  CHECK(r.max_rel_error < 1e-6);
  auto r2 = gradcheck(in, [](Tape<double>& t, const std::vector<Var>& v) {
    return project(t, conv2d(t, v[0], v[1], v[2]));
  });
  CHECK(r2.max_rel_error < 1e-6);
}

TEST_CASE("conv2d 1x1 with channel change matches finite differences") {
  Rng rng(3);
  std::vector<Tensor<double>> in{random_tensor({3, 4, 4}, rng), random_tensor({2, 3, 1, 1}, rng),
                                 random_tensor({2}, rng)};
  auto r = gradcheck(in, [](Tape<double>& t, const std::vector<Var>& v) {
    return project(t, conv2d(t, v[0], v[1], v[2]));
  });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("conv2d rejects mismatched channels and even kernels") {
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>::zeros({2, 4, 4}));
  Var w = tape.constant(Tensor<double>::zeros({1, 3, 3, 3}));
  CHECK_THROWS_AS(conv2d(tape, x, w), Error);
  Var w2 = tape.constant(Tensor<double>::zeros({1, 2, 2, 2}));
  CHECK_THROWS_AS(conv2d(tape, x, w2), Error);
}

TEST_CASE("group_norm of a constant input is zero") {
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>::filled({4, 3, 3}, 2.5));
  Var g = tape.constant(Tensor<double>::filled({4}, 1.0));
  Var b = tape.constant(Tensor<double>::zeros({4}));
  for (double v : tape.value(group_norm(tape, x, g, b, 2, 1e-5)).data()) CHECK(v == 0.0);
}

TEST_CASE("group_norm with one group equals a two-pass layer norm") {
  Rng rng(4);
  auto xv = random_tensor({3, 4, 4}, rng);
  Tape<double> tape;
  Var x = tape.constant(xv);
  Var g = tape.constant(Tensor<double>::filled({3}, 1.0));
  Var b = tape.constant(Tensor<double>::zeros({3}));
  const auto y = tape.value(group_norm(tape, x, g, b, 1, 1e-5)).to_vector();
  const auto v = xv.to_vector();
  double mean = 0.0;
  for (double a : v) mean += a;
  mean /= double(v.size());
  double var = 0.0;
  for (double a : v) var += (a - mean) * (a - mean);
  var /= double(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(y[i] == doctest::Approx((v[i] - mean) / std::sqrt(var + 1e-5)).epsilon(1e-12));
}

TEST_CASE("group_norm gradient matches finite differences") {
  Rng rng(5);
  std::vector<Tensor<double>> in{random_tensor({4, 3, 3}, rng), random_tensor({4}, rng),
                                 random_tensor({4}, rng)};
  auto r = gradcheck(in, [](Tape<double>& t, const std::vector<Var>& v) {
    return project(t, group_norm(t, v[0], v[1], v[2], 2, 1e-5));
  });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("group_norm rejects indivisible groups") {
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>::zeros({3, 2, 2}));
  Var g = tape.constant(Tensor<double>::filled({3}, 1.0));
  Var b = tape.constant(Tensor<double>::zeros({3}));
  CHECK_THROWS_AS(group_norm(tape, x, g, b, 2, 1e-5), Error);
}

TEST_CASE("silu at zero is zero") {
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>::zeros({3}));
  for (double v : tape.value(silu(tape, x)).data()) CHECK(v == 0.0);
}

TEST_CASE("downsample after upsample is the identity") {
  Rng rng(6);
  auto xv = random_tensor({2, 3, 5}, rng);
  Tape<double> tape;
  Var x = tape.constant(xv);
  Var y = avg_downsample2x(tape, nearest_upsample2x(tape, x));
  CHECK(tape.value(y).to_vector() == xv.to_vector());
  CHECK(tape.shape(y) == xv.shape());
}

TEST_CASE("elementwise and resampling primitives match finite differences") {
  Rng rng(7);
  auto a = random_tensor({2, 4, 4}, rng);
  auto b = random_tensor({2, 4, 4}, rng);
  auto c = random_tensor({2}, rng);
  auto d = random_tensor({3, 4, 4}, rng);
  std::vector<Tensor<double>> in{a, b, c, d};
  const std::vector<std::pair<const char*, solid::testing::Builder>> cases{
      {"silu", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, silu(t, v[0])); }},
      {"add", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, add(t, v[0], v[1])); }},
      {"sub", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, sub(t, v[0], v[1])); }},
      {"mul", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, mul(t, v[0], v[1])); }},
      {"scale", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, scale(t, v[0], -1.7)); }},
      {"upsample", [](Tape<double>& t, const std::vector<Var>& v) {
         return project(t, nearest_upsample2x(t, v[0]));
       }},
      {"downsample", [](Tape<double>& t, const std::vector<Var>& v) {
         return project(t, avg_downsample2x(t, v[0]));
       }},
      {"channel_bias", [](Tape<double>& t, const std::vector<Var>& v) {
         return project(t, add_channel_bias(t, v[0], v[2]));
       }},
      {"concat", [](Tape<double>& t, const std::vector<Var>& v) {
         return project(t, concat_channels(t, v[0], v[3]));
       }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(gradcheck(in, fn).max_rel_error < 1e-6);
  }
}

TEST_CASE("linear gradient matches finite differences") {
  Rng rng(8);
  std::vector<Tensor<double>> in{random_tensor({5}, rng), random_tensor({4, 5}, rng),
                                 random_tensor({4}, rng)};
  auto r = gradcheck(in, [](Tape<double>& t, const std::vector<Var>& v) {
    return project(t, linear(t, v[0], v[1], v[2]));
  });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("dropout is identity at p=0 and keeps the expectation") {
  Rng rng(9);
  Tape<double> tape;
  auto xv = Tensor<double>::filled({1, 100, 100}, 1.0);
  Var x = tape.constant(xv);
  CHECK(tape.value(dropout(tape, x, 0.0, rng)).to_vector() == xv.to_vector());
  double s = 0.0;
  for (double v : tape.value(dropout(tape, x, 0.25, rng)).data()) s += v;
  CHECK(s / 1e4 == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("backward of sum(x) is ones and of sum(x*x) is 2x") {
  Rng rng(10);
  auto xv = random_tensor({2, 3}, rng);
  Tape<double> tape;
  Var x = tape.leaf(xv);
  tape.backward(sum(tape, x));
  for (double g : tape.grad(x).to_vector()) CHECK(g == 1.0);

  Tape<double> tape2;
  Var x2 = tape2.leaf(xv);
  tape2.backward(sum(tape2, mul(tape2, x2, x2)));
  const auto g = tape2.grad(x2).to_vector();
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 2.0 * xv[i]);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::zeros({3}));
  CHECK_THROWS_AS(tape.backward(x), Error);
}

TEST_CASE("conv -> norm -> silu chain matches finite differences") {
  Rng rng(11);
  std::vector<Tensor<double>> in{random_tensor({2, 6, 6}, rng), random_tensor({4, 2, 3, 3}, rng),
                                 random_tensor({4}, rng), random_tensor({4}, rng),
                                 random_tensor({4}, rng)};
  auto r = gradcheck(in, [](Tape<double>& t, const std::vector<Var>& v) {
    Var h = conv2d(t, v[0], v[1], v[2]);
    h = group_norm(t, h, v[3], v[4], 2, 1e-5);
    return project(t, silu(t, h));
  });
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(12);
  auto xv = random_tensor({2, 4, 4}, rng);
  auto wv = random_tensor({2, 2, 3, 3}, rng);
  auto grads = [&](double a, double b) {
    Tape<double> tape;
    Var x = tape.leaf(xv);
    Var w = tape.leaf(wv);
    Var h = silu(tape, conv2d(tape, x, w));
    Var l1 = project(tape, h, 1);
    Var l2 = sum(tape, mul(tape, h, h));
    tape.backward(add(tape, scale(tape, l1, a), scale(tape, l2, b)));
    return tape.grad(w).to_vector();
  };
  const auto g1 = grads(1, 0), g2 = grads(0, 1), g = grads(0.3, -2.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(0.3 * g1[i] - 2.0 * g2[i]).epsilon(1e-12));
}

TEST_CASE("replaying a tape reproduces outputs bitwise") {
  Rng rng(13);
  auto xv = random_tensor({2, 4, 4}, rng);
  auto wv = random_tensor({3, 2, 3, 3}, rng);
  auto run = [&] {
    Tape<float> tape;
    std::vector<float> xf(xv.data().begin(), xv.data().end());
    std::vector<float> wf(wv.data().begin(), wv.data().end());
    Var x = tape.leaf(Tensor<float>(xv.shape(), xf));
    Var w = tape.leaf(Tensor<float>(wv.shape(), wf));
    Var l = sum(tape, silu(tape, conv2d(tape, x, w)));
    tape.backward(l);
    auto out = tape.value(l).to_vector();
    auto g = tape.grad(w).to_vector();
    out.insert(out.end(), g.begin(), g.end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("tensor construction checks data length") {
  CHECK_THROWS_AS(Tensor<double>({2, 3}, std::vector<double>(5)), Error);
}

// ---- batched operands ------------------------------------------------------

namespace {

/// Sample s of a [B,...] tensor as a rank-reduced tensor.
Tensor<double> slice(const Tensor<double>& t, int s) {
  Shape sh(t.shape().begin() + 1, t.shape().end());
  const std::size_t n = numel(sh);
  return Tensor<double>(sh, std::vector<double>(t.raw() + s * n, t.raw() + (s + 1) * n));
}

using Op = std::function<Var(Tape<double>&, Var x, const std::vector<Var>& extra)>;

/// Batched output of `op` must equal the per-sample outputs stacked.
double batch_consistency(const Tensor<double>& xb, const std::vector<Tensor<double>>& extra, const Op& op) {
  Tape<double> tb;
  std::vector<Var> eb;
  for (const auto& e : extra) eb.push_back(tb.constant(e));
  const auto yb = tb.value(op(tb, tb.constant(xb), eb));
  double worst = 0.0;
  const int nb = xb.dim(0);
  const std::size_t per = yb.size() / std::size_t(nb);
  for (int s = 0; s < nb; ++s) {
    Tape<double> t1;
    std::vector<Var> e1;
    for (const auto& e : extra) e1.push_back(t1.constant(e));
    const auto y1 = t1.value(op(t1, t1.constant(slice(xb, s)), e1));
    CHECK(y1.size() == per);
    for (std::size_t i = 0; i < per; ++i) worst = std::max(worst, std::abs(y1[i] - yb[s * per + i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("batched spatial ops equal per-sample results") {
  Rng rng(31);
  const auto xb = random_tensor({3, 4, 6, 6}, rng);
  const auto w3 = random_tensor({5, 4, 3, 3}, rng), w1 = random_tensor({5, 4, 1, 1}, rng);
  const auto b = random_tensor({5}, rng), g = random_tensor({4}, rng), be = random_tensor({4}, rng);
  CHECK(batch_consistency(xb, {w3, b}, [](Tape<double>& t, Var x, const std::vector<Var>& e) {
          return conv2d(t, x, e[0], e[1]);
        }) < 1e-12);
  CHECK(batch_consistency(xb, {w1, b}, [](Tape<double>& t, Var x, const std::vector<Var>& e) {
          return conv2d(t, x, e[0], e[1]);
        }) < 1e-12);
  CHECK(batch_consistency(xb, {g, be}, [](Tape<double>& t, Var x, const std::vector<Var>& e) {
          return group_norm(t, x, e[0], e[1], 2, 1e-5);
        }) < 1e-12);
  CHECK(batch_consistency(xb, {}, [](Tape<double>& t, Var x, const std::vector<Var>&) {
          return nearest_upsample2x(t, avg_downsample2x(t, silu(t, x)));
        }) < 1e-15);
}

TEST_CASE("batched conv, norm and resampling gradients match finite differences") {
  Rng rng(32);
  std::vector<Tensor<double>> in{random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3, 3, 3}, rng),
                                 random_tensor({2}, rng), random_tensor({2, 3, 1, 1}, rng),
                                 random_tensor({2}, rng), random_tensor({2}, rng)};
  auto r = gradcheck(in, [](Tape<double>& t, const std::vector<Var>& v) {
    Var a = conv2d(t, v[0], v[1], v[2]);
    Var b = conv2d(t, v[0], v[3]);
    Var h = group_norm(t, add(t, a, b), v[4], v[5], 1, 1e-5);
    return project(t, nearest_upsample2x(t, avg_downsample2x(t, h)));
  });
  CAPTURE(r.checked);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("batched linear, channel bias and concat gradients match finite differences") {
  Rng rng(33);
  std::vector<Tensor<double>> in{random_tensor({3, 5}, rng), random_tensor({2, 5}, rng),
                                 random_tensor({2}, rng), random_tensor({3, 2, 2, 2}, rng),
                                 random_tensor({3, 1, 2, 2}, rng)};
  auto r = gradcheck(in, [](Tape<double>& t, const std::vector<Var>& v) {
    Var p = linear(t, v[0], v[1], v[2]);
    Var h = add_channel_bias(t, v[3], p);
    return project(t, concat_channels(t, h, v[4]));
  });
  CHECK(r.max_rel_error < 1e-5);
  Tape<double> t;
  CHECK_THROWS_AS(add_channel_bias(t, t.constant(in[3]), t.constant(Tensor<double>::zeros({2}))), Error);
  CHECK_THROWS_AS(concat_channels(t, t.constant(in[3]), t.constant(Tensor<double>::zeros({1, 2, 2}))), Error);
}

TEST_CASE("dropout keeps about 1 - p of the entries and is seed-determined") {
  Tape<double> t;
  Var x = t.constant(Tensor<double>::filled({4, 50, 50}, 1.0));
  Rng a(5), b(5);
  const auto ya = t.value(dropout(t, x, 0.1, a)).to_vector();
  const auto yb = t.value(dropout(t, x, 0.1, b)).to_vector();
  CHECK(ya == yb);
  const auto kept = std::count_if(ya.begin(), ya.end(), [](double v) { return v != 0.0; });
  // 10000 Bernoulli(0.9) draws: sd 30.
  CHECK(std::abs(double(kept) - 9000.0) < 150.0);
}

}  // TEST_SUITE
