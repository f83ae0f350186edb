#include <doctest.h>

#include <cmath>
#include <set>

#include "denoiser.hpp"
#include "gradcheck.hpp"

using namespace solid;
using namespace solid::net;
using namespace solid::tensor;

namespace {

DenoiserConfig tiny() {
  DenoiserConfig c;
  c.base_dim = 8;
  c.dim_mults = {1, 2};
  c.res_blocks_per_stage = 1;
  c.dropout = 0.0;
  return c;
}

Field random_field(int n, Rng& rng) {
  Gaussian g;
  Field f(n, n);
  for (auto& v : f.data) v = g(rng);
  return f;
}

Mask random_mask(int n, Rng& rng) {
  Mask m(n, n);
  for (auto& v : m.data) v = std::uint8_t((rng() % 4) == 0);
  return m;
}

/// Every parameter nonzero so no gradient path is trivially dead.
Denoiser<double> randomized(const DenoiserConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const ParamLayout layout(cfg);
  std::vector<double> flat(layout.total());
  for (auto& v : flat) v = u(rng);
  for (const auto& e : layout.entries())
    if (e.name.ends_with(".gamma"))
      for (std::size_t i = 0; i < e.size; ++i) flat[e.offset + i] += 1.0;
  return Denoiser<double>(cfg, std::move(flat));
}

}  // namespace

TEST_SUITE("denoiser") {

TEST_CASE("raw time features at tau=0 are sin 0 and cos 1") {
  const auto f = time_features(0, 32);
  for (int i = 0; i < 16; ++i) {
    CHECK(f[std::size_t(i)] == 0.0);
    CHECK(f[std::size_t(16 + i)] == 1.0);
  }
}

TEST_CASE("raw time features are distinct for every tau in 1..1000") {
  std::set<std::vector<double>> seen;
  for (int t = 1; t <= 1000; ++t) seen.insert(time_features(t, 32));
  CHECK(seen.size() == 1000);
}

TEST_CASE("output shape follows the input for 16, 32 and 64") {
  DenoiserConfig c;
  c.base_dim = 8;
  const auto model = Denoiser<float>::initialize(c, 1);
  Rng rng(2);
  for (int n : {16, 32, 64}) {
    const Field x = random_field(n, rng);
    const Field out = model.predict(x, x, Mask(n, n, 1), 500);
    CHECK(out.rows == n);
    CHECK(out.cols == n);
  }
  CHECK_THROWS_AS(model.predict(Field(12, 12), Field(12, 12), Mask(12, 12), 1), Error);
  CHECK_THROWS_AS(model.predict(Field(16, 16), Field(8, 8), Mask(16, 16), 1), Error);
}

TEST_CASE("zero-initialized head predicts zero for any input") {
  const auto model = Denoiser<float>::initialize(tiny(), 3);
  Rng rng(4);
  for (int tau : {1, 400, 1000}) {
    const Field out = model.predict(random_field(8, rng), random_field(8, rng), random_mask(8, rng), tau);
    for (double v : out.data) CHECK(v == 0.0);
  }
}

TEST_CASE("forward is deterministic with dropout off") {
  auto model = randomized(tiny(), 5).cast<float>();
  Rng rng(6);
  const Field x = random_field(8, rng), c = random_field(8, rng);
  const Mask m = random_mask(8, rng);
  CHECK(model.predict(x, c, m, 77) == model.predict(x, c, m, 77));
}

TEST_CASE("full network gradient matches finite differences") {
  const DenoiserConfig cfg = tiny();
  const auto model = randomized(cfg, 7);
  Rng rng(8);
  const Field x = random_field(8, rng), c = random_field(8, rng);
  const Mask m = random_mask(8, rng);
  const auto layout = model.layout();

  // Leaves: every parameter tensor plus the input stack.
  std::vector<Tensor<double>> inputs;
  for (const auto& e : layout.entries()) {
    std::vector<double> v(model.flat().begin() + std::ptrdiff_t(e.offset),
                          model.flat().begin() + std::ptrdiff_t(e.offset + e.size));
    inputs.emplace_back(e.shape, std::move(v));
  }
  {
    Tape<double> t;
    inputs.push_back(t.value(model.input(t, x, c, m)));
  }
  const std::size_t n_params = layout.entries().size();
  auto build = [&](Tape<double>& t, const std::vector<Var>& v) {
    std::vector<Var> params(v.begin(), v.begin() + std::ptrdiff_t(n_params));
    const Var out = model.forward(t, params, v[n_params], 321, {});
    return solid::testing::project(t, out);
  };
  const auto r = solid::testing::gradcheck(inputs, build, {}, 1e-6, 12);
  CAPTURE(r.checked);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("batched prediction matches per-sample prediction") {
  const auto model = randomized(tiny(), 12).cast<float>();
  Rng rng(13);
  std::vector<Field> xs, cs;
  std::vector<Mask> ms;
  const std::vector<int> taus{1, 250, 999};
  for (int b = 0; b < 3; ++b) {
    xs.push_back(random_field(8, rng));
    cs.push_back(random_field(8, rng));
    ms.push_back(random_mask(8, rng));
  }
  const auto batch = model.predict_batch(xs, cs, ms, taus);
  REQUIRE(batch.size() == 3);
  for (std::size_t b = 0; b < 3; ++b) {
    const Field one = model.predict(xs[b], cs[b], ms[b], taus[b]);
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(std::abs(one[i] - batch[b][i]) < 1e-4);
  }
  CHECK_THROWS_AS(model.predict_batch(xs, cs, ms, std::vector<int>{1, 2}), Error);
}

TEST_CASE("batched network gradient matches finite differences") {
  const DenoiserConfig cfg = tiny();
  const auto model = randomized(cfg, 14);
  Rng rng(15);
  const std::vector<Field> xs{random_field(8, rng), random_field(8, rng)};
  const std::vector<Field> cs{random_field(8, rng), random_field(8, rng)};
  const std::vector<Mask> ms{random_mask(8, rng), random_mask(8, rng)};
  const std::vector<int> taus{40, 700};
  const auto layout = model.layout();
  std::vector<Tensor<double>> inputs;
  for (const auto& e : layout.entries()) {
    std::vector<double> v(model.flat().begin() + std::ptrdiff_t(e.offset),
                          model.flat().begin() + std::ptrdiff_t(e.offset + e.size));
    inputs.emplace_back(e.shape, std::move(v));
  }
  {
    Tape<double> t;
    inputs.push_back(t.value(model.input_batch(t, xs, cs, ms)));
  }
  const std::size_t n_params = layout.entries().size();
  auto build = [&](Tape<double>& t, const std::vector<Var>& v) {
    std::vector<Var> params(v.begin(), v.begin() + std::ptrdiff_t(n_params));
    return solid::testing::project(t, model.forward(t, params, v[n_params], taus, {}));
  };
  const auto r = solid::testing::gradcheck(inputs, build, {}, 1e-6, 6);
  CAPTURE(r.checked);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("parameter layout is a pure function of the config") {
  CHECK(ParamLayout(tiny()).total() == ParamLayout(tiny()).total());
  DenoiserConfig paper;
  paper.base_dim = 64;
  CHECK(count_params(paper) == 7778241);
  DenoiserConfig toy;
  CHECK(count_params(toy) == 1950689);
  CHECK(ParamLayout(paper).entries().front().name == "time.w1");
  CHECK(ParamLayout(paper).entries().back().name == "out.conv.b");
}

TEST_CASE("cast round-trips parameters exactly through double") {
  const auto f = Denoiser<float>::initialize(tiny(), 9);
  const auto back = f.cast<double>().cast<float>();
  CHECK(std::equal(f.flat().begin(), f.flat().end(), back.flat().begin()));
}

TEST_CASE("config validation") {
  DenoiserConfig c = tiny();
  c.base_dim = 7;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(Denoiser<float>(tiny(), std::vector<float>(3)), Error);
}

}  // TEST_SUITE
