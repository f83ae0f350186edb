// Acceptance driver: one PASS/FAIL line per criterion, tolerances pinned here.
//   acceptance fast --cli PATH --work DIR   criteria 1-7 and 10
//   acceptance e2e  --cli PATH --work DIR   criteria 8 and 9 (toy preset, ~45 min)
// Exit status is nonzero when any hard criterion fails; criterion 9 is a
// diagnostic and only reported.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "container.hpp"
#include "diffusion.hpp"
#include "gradcheck.hpp"
#include "inference.hpp"
#include "masks.hpp"
#include "metrics.hpp"
#include "ns_simulator.hpp"
#include "training.hpp"

using namespace solid;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances --------------------------------------------------------
constexpr double kPrimitiveGradTol = 1e-5;
constexpr double kNetGradTol = 1e-4;
constexpr double kGradRuntimeS = 120.0;
constexpr double kCrpsOracleTol = 1e-12;
constexpr double kCrpsRuntimeS = 30.0;
constexpr int kCrpsInstances = 1000;
constexpr int kMomentDraws = 10000;
constexpr double kMomentSigmas = 5.0;
constexpr double kTaylorGreenTol = 1e-4;
constexpr double kDivergenceTol = 1e-12;
constexpr double kRefinementRatio = 2.0;
constexpr double kSolverRuntimeS = 60.0;
constexpr double kOracleRms50 = 1e-3;
constexpr double kOracleRms1000 = 1e-6;
constexpr double kSpearmanMin = 0.3;
constexpr double kRolloutPassRate = 0.8;

struct Line {
  int id;
  std::string name;
  bool pass;
  bool hard;
  std::string detail;
};

std::vector<Line> g_lines;

void report(int id, const std::string& name, bool pass, const std::string& detail, bool hard = true) {
  g_lines.push_back({id, name, pass, hard, detail});
  std::printf("criterion %-2d %-4s %-26s %s%s\n", id, pass ? "PASS" : "FAIL", name.c_str(), detail.c_str(),
              hard ? "" : " [diagnostic]");
  std::fflush(stdout);
}

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---- 1. gradient fidelity -------------------------------------------------------

void gradient_fidelity() {
  using namespace tensor;
  using testing::gradcheck;
  using testing::project;
  using testing::random_tensor;
  Stopwatch sw;
  Rng rng(101);
  const auto a = random_tensor({2, 4, 4}, rng), b = random_tensor({2, 4, 4}, rng);
  const auto c = random_tensor({2}, rng), d = random_tensor({3, 4, 4}, rng);
  const auto w3 = random_tensor({3, 2, 3, 3}, rng), w1 = random_tensor({3, 2, 1, 1}, rng), bias = random_tensor({3}, rng);
  const auto gx = random_tensor({4, 3, 3}, rng), gg = random_tensor({4}, rng), gb = random_tensor({4}, rng);
  const auto lx = random_tensor({5}, rng), lw = random_tensor({4, 5}, rng), lb = random_tensor({4}, rng);
  const auto bx = random_tensor({2, 2, 4, 4}, rng);
  using B = testing::Builder;
  struct Case {
    const char* name;
    std::vector<Tensor<double>> in;
    B fn;
  };
  const std::vector<Case> cases{
      {"conv2d3x3", {a, w3, bias}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, conv2d(t, v[0], v[1], v[2])); }},
      {"conv2d1x1", {a, w1, bias}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, conv2d(t, v[0], v[1], v[2])); }},
      {"conv2d_batched", {bx, w3, bias}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, conv2d(t, v[0], v[1], v[2])); }},
      {"group_norm", {gx, gg, gb}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, group_norm(t, v[0], v[1], v[2], 2, 1e-5)); }},
      {"silu", {a}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, silu(t, v[0])); }},
      {"add", {a, b}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, add(t, v[0], v[1])); }},
      {"sub", {a, b}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, sub(t, v[0], v[1])); }},
      {"mul", {a, b}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, mul(t, v[0], v[1])); }},
      {"mul_const", {a}, [b](Tape<double>& t, const std::vector<Var>& v) { return project(t, mul_const(t, v[0], b)); }},
      {"scale", {a}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, scale(t, v[0], -1.7)); }},
      {"sum", {a}, [](Tape<double>& t, const std::vector<Var>& v) { return sum(t, mul(t, v[0], v[0])); }},
      {"upsample", {a}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, nearest_upsample2x(t, v[0])); }},
      {"downsample", {a}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, avg_downsample2x(t, v[0])); }},
      {"linear", {lx, lw, lb}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, linear(t, v[0], v[1], v[2])); }},
      {"channel_bias", {a, c}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, add_channel_bias(t, v[0], v[1])); }},
      {"concat", {a, d}, [](Tape<double>& t, const std::vector<Var>& v) { return project(t, concat_channels(t, v[0], v[1])); }},
      {"dropout", {a}, [](Tape<double>& t, const std::vector<Var>& v) {
         Rng r(5);  // same mask on every evaluation
         return project(t, dropout(t, v[0], 0.3, r));
       }},
  };
  double worst = 0.0;
  std::string worst_name;
  for (const auto& cs : cases) {
    const double e = gradcheck(cs.in, cs.fn).max_rel_error;
    if (e >= worst) {
      worst = e;
      worst_name = cs.name;
    }
  }

  // Full toy denoiser at 64-bit, every parameter tensor sampled plus the input stack.
  auto cfg = config::preset_toy().denoiser_config();
  cfg.dropout = 0.0;
  const net::ParamLayout layout(cfg);
  std::vector<double> flat(layout.total());
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Rng prng(102);
  for (auto& v : flat) v = u(prng);
  for (const auto& e : layout.entries())
    if (e.name.ends_with(".gamma"))
      for (std::size_t i = 0; i < e.size; ++i) flat[e.offset + i] += 1.0;
  const net::Denoiser<double> model(cfg, flat);
  Field x(16, 16), xc(16, 16);
  Mask m(16, 16);
  Gaussian g;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = g(prng);
    m[i] = (prng() % 10) == 0;
    xc[i] = m[i] ? g(prng) : 0.0;
  }
  std::vector<Tensor<double>> inputs;
  for (const auto& e : layout.entries()) {
    inputs.emplace_back(e.shape, std::vector<double>(flat.begin() + std::ptrdiff_t(e.offset),
                                                     flat.begin() + std::ptrdiff_t(e.offset + e.size)));
  }
  {
    Tape<double> t;
    inputs.push_back(t.value(model.input(t, x, xc, m)));
  }
  const std::size_t n_params = layout.entries().size();
  auto build = [&](Tape<double>& t, const std::vector<Var>& v) {
    std::vector<Var> params(v.begin(), v.begin() + std::ptrdiff_t(n_params));
    return project(t, model.forward(t, params, v[n_params], 417, {}));
  };
  const auto net = gradcheck(inputs, build, {}, 1e-6, 4);
  const double s = sw.seconds();
  report(1, "gradient-fidelity",
         worst < kPrimitiveGradTol && net.max_rel_error < kNetGradTol && s < kGradRuntimeS,
         "primitives " + std::to_string(cases.size()) + " max rel " + num(worst) + " (" + worst_name + ", tol " +
             num(kPrimitiveGradTol) + "); toy net " + std::to_string(net.checked) + " entries max rel " +
             num(net.max_rel_error) + " (tol " + num(kNetGradTol) + "); " + num(s) + " s (limit " +
             num(kGradRuntimeS) + ")");
}

// ---- 2. masked supervision ------------------------------------------------------

void masked_supervision() {
  using namespace tensor;
  const double lambda = 0.05;
  masks::ScenarioSpec spec;
  spec.density = 0.4;
  spec.overlap_fraction = 0.3;
  spec.seed = 9;
  bool zero_ok = true;
  double worst_ratio = 0.0;
  std::size_t off = 0, overlap = 0;
  Rng rng(202);
  Gaussian g;
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    const auto p = masks::make_random_pair(spec, 16, inst);
    Field eps(16, 16), hat(16, 16);
    for (std::size_t i = 0; i < eps.size(); ++i) {
      eps[i] = g(rng);
      hat[i] = eps[i] + 0.75;  // equal residual everywhere
    }
    // Residuals off M_o are randomized too; they must still receive no gradient.
    for (std::size_t i = 0; i < eps.size(); ++i)
      if (!p.m_o[i]) hat[i] = g(rng);
    Tape<double> tape;
    const Var hv = tape.leaf(Tensor<double>({1, 16, 16}, hat.data));
    tape.backward(train::dual_masked_loss(tape, hv, eps, p.m_i, p.m_o, lambda));
    const auto grad = tape.grad(hv).to_vector();
    double target_only = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (p.m_o[i] && !p.m_i[i]) target_only = grad[i];
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!p.m_o[i]) {
        zero_ok = zero_ok && grad[i] == 0.0;
        ++off;
      } else if (p.m_i[i]) {
        worst_ratio = std::max(worst_ratio, std::abs(grad[i] / target_only - (1.0 + lambda)));
        ++overlap;
      }
    }
  }
  const double tol = 4.0 * std::numeric_limits<double>::epsilon();
  report(2, "masked-supervision", zero_ok && overlap > 0 && worst_ratio <= tol,
         "grad exactly 0 at " + std::to_string(off) + " unsupervised px: " + (zero_ok ? "yes" : "no") +
             "; overlap ratio max |r-(1+lambda)| " + num(worst_ratio) + " over " + std::to_string(overlap) +
             " px (tol " + num(tol) + ")");
}

// ---- 3. CRPS estimator ----------------------------------------------------------

double crps_double_loop(const infer::Ensemble& e, const Field& y, const Mask& m) {
  const std::size_t K = e.members.size();
  double total = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!m[i]) continue;
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < K; ++k) a += std::abs(e.members[k][i] - y[i]);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t l = 0; l < K; ++l)
        if (k != l) b += std::abs(e.members[k][i] - e.members[l][i]);
    total += a / double(K) - (K > 1 ? 0.5 * b / double(K * (K - 1)) : 0.0);
    ++n;
  }
  return total / n;
}

void crps_estimator() {
  Stopwatch sw;
  Rng rng(303);
  Gaussian g;
  double worst = 0.0;
  bool k1_bitwise = true;
  for (int t = 0; t < kCrpsInstances; ++t) {
    const int K = 1 + int(uniform_int(rng, 0, 9));
    const int rows = 1 + int(uniform_int(rng, 0, 4)), cols = 1 + int(uniform_int(rng, 0, 4));
    infer::Ensemble e;
    for (int k = 0; k < K; ++k) {
      Field f(rows, cols);
      for (auto& v : f.data) v = 2.0 * g(rng);
      e.members.push_back(f);
    }
    Field y(rows, cols);
    for (auto& v : y.data) v = 2.0 * g(rng);
    Mask m(rows, cols);
    for (auto& v : m.data) v = std::uint8_t(rng() % 2);
    m[0] = 1;
    worst = std::max(worst, std::abs(metrics::crps_mc(e, y, m) - crps_double_loop(e, y, m)));
    if (K == 1) k1_bitwise = k1_bitwise && metrics::crps_mc(e, y, m) == metrics::masked_mae(e.members[0], y, m);
  }
  infer::Ensemble hand;
  hand.members = {Field(1, 1, 0.0), Field(1, 1, 2.0)};
  const double h = metrics::crps_mc(hand, Field(1, 1, 1.0), Mask(1, 1, 1));
  const double s = sw.seconds();
  report(3, "crps-estimator", worst < kCrpsOracleTol && k1_bitwise && h == 0.0 && s < kCrpsRuntimeS,
         std::to_string(kCrpsInstances) + " instances max |diff| " + num(worst) + " (tol " + num(kCrpsOracleTol) +
             "); K=1 bitwise MAE: " + (k1_bitwise ? "yes" : "no") + "; hand case " + num(h) + "; " + num(s) + " s");
}

// ---- 4. forward-process moments -------------------------------------------------

void forward_moments() {
  const auto s = diffusion::linear_beta_schedule(1000);
  Field x0(2, 2);
  x0[0] = 1.5;
  x0[1] = -0.7;
  x0[2] = 0.0;
  x0[3] = 2.2;
  double worst_mean = 0.0, worst_var = 0.0;  // in units of the Monte-Carlo standard error
  for (int tau : {10, 500, 1000}) {
    Rng rng(400 + std::uint64_t(tau));
    std::vector<double> s1(4, 0.0), s2(4, 0.0);
    for (int d = 0; d < kMomentDraws; ++d) {
      const auto n = diffusion::forward_noise(x0, tau, s, rng);
      for (std::size_t i = 0; i < 4; ++i) {
        s1[i] += n.x_tau[i];
        s2[i] += n.x_tau[i] * n.x_tau[i];
      }
    }
    const double ab = s.alpha_bar(tau), var = 1.0 - ab, N = kMomentDraws;
    for (std::size_t i = 0; i < 4; ++i) {
      const double mean = s1[i] / N;
      const double v = (s2[i] - N * mean * mean) / (N - 1.0);
      worst_mean = std::max(worst_mean, std::abs(mean - std::sqrt(ab) * x0[i]) / std::sqrt(var / N));
      worst_var = std::max(worst_var, std::abs(v - var) / (var * std::sqrt(2.0 / (N - 1.0))));
    }
  }
  report(4, "forward-moments", worst_mean < kMomentSigmas && worst_var < kMomentSigmas,
         "tau {10,500,1000}, " + std::to_string(kMomentDraws) + " draws: worst mean dev " + num(worst_mean) +
             " se, worst variance dev " + num(worst_var) + " se (bound " + num(kMomentSigmas) + ")");
}

// ---- 5. solver ------------------------------------------------------------------

double coord(int i, int n) { return -std::numbers::pi + 2.0 * std::numbers::pi * i / n; }

Field tabulate(int n, const std::function<double(double, double)>& f) {
  Field out(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out(r, c) = f(coord(c, n), coord(r, n));
  return out;
}

Field run_to_one(int n, double dt) {
  ns::NSConfig cfg;
  cfg.grid_n = n;
  cfg.dt = dt;
  cfg.forcing = false;
  ns::SpectralSolver solver(cfg);
  Field w = tabulate(n, [](double x1, double x2) {
    return std::cos(x1) + std::cos(x2) + 0.6 * std::sin(2 * x1 + x2) + 0.4 * std::cos(x1 - 3 * x2);
  });
  solver.advance(w, int(std::lround(1.0 / dt)));
  return w;
}

double nested_error(const Field& coarse, const Field& ref) {
  const int stride = ref.rows / coarse.rows;
  double e = 0.0, m = 0.0;
  for (int r = 0; r < coarse.rows; ++r)
    for (int c = 0; c < coarse.cols; ++c) {
      const double d = coarse(r, c) - ref(r * stride, c * stride);
      e += d * d;
      m += ref(r * stride, c * stride) * ref(r * stride, c * stride);
    }
  return std::sqrt(e / m);
}

void solver() {
  Stopwatch sw;
  ns::NSConfig cfg;
  cfg.grid_n = 32;
  cfg.forcing = false;
  ns::SpectralSolver sol(cfg);
  Field w = tabulate(32, [](double x1, double x2) { return std::cos(x1) + std::cos(x2); });
  sol.advance(w, 1000);
  const double decay = std::exp(-cfg.viscosity());
  double e = 0.0, m = 0.0;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      const double exact = decay * (std::cos(coord(c, 32)) + std::cos(coord(r, 32)));
      e = std::max(e, std::abs(w(r, c) - exact));
      m = std::max(m, std::abs(exact));
    }
  Rng rng(505);
  Gaussian g;
  Field rnd(32, 32);
  for (auto& v : rnd.data) v = g(rng);
  const double div = std::max(ns::spectral_divergence(w), ns::spectral_divergence(rnd));
  const Field ref = run_to_one(64, 0.0025);
  const double ratio = nested_error(run_to_one(16, 0.02), ref) / nested_error(run_to_one(32, 0.01), ref);
  const double s = sw.seconds();
  report(5, "solver", e / m < kTaylorGreenTol && div < kDivergenceTol && ratio >= kRefinementRatio && s < kSolverRuntimeS,
         "Taylor-Green rel err " + num(e / m) + " (tol " + num(kTaylorGreenTol) + "); divergence " + num(div) +
             " (tol " + num(kDivergenceTol) + "); refinement gain " + num(ratio) + "x (min " +
             num(kRefinementRatio) + "); " + num(s) + " s");
}

// ---- 6. masks -------------------------------------------------------------------

void mask_protocol() {
  bool ok = true;
  std::string detail = "random";
  masks::ScenarioSpec r;
  r.seed = 606;
  for (auto [d, want] : {std::pair{0.04, 163}, {0.10, 409}, {0.40, 1638}}) {
    r.density = d;
    const auto p = masks::make_random_pair(r, 64, 1);
    const auto got = solid::popcount(masks::mask_union(p.m_i, p.m_o));
    ok = ok && got == std::size_t(want) && solid::popcount(masks::mask_intersection(p.m_i, p.m_o)) == 0;
    detail += " " + std::to_string(got);
  }
  detail += "; block";
  masks::ScenarioSpec b;
  b.pattern = masks::Pattern::Block;
  b.seed = 607;
  for (auto [nb, want, targets] : {std::tuple{2, 128, 1}, {6, 384, 3}, {26, 1664, 13}}) {
    b.n_blocks = nb;
    const auto p = masks::make_block_pair(b, 64, 2);
    const auto got = solid::popcount(masks::mask_union(p.m_i, p.m_o));
    ok = ok && got == std::size_t(want) && solid::popcount(p.m_o) == std::size_t(targets) * 64;
    detail += " " + std::to_string(got) + "/" + std::to_string(solid::popcount(p.m_o) / 64);
  }
  bool global_same = true, instance_distinct = true;
  for (auto pattern : {masks::Pattern::Random, masks::Pattern::Block}) {
    masks::ScenarioSpec gs = pattern == masks::Pattern::Random ? r : b;
    gs.density = 0.10;
    gs.n_blocks = 2;
    gs.regime = masks::Regime::Global;
    const auto ref = masks::make_pair(gs, 64, 0);
    masks::ScenarioSpec is = gs;
    is.regime = masks::Regime::Instance;
    std::set<std::vector<std::uint8_t>> seen;
    for (std::uint64_t i = 0; i < 100; ++i) {
      const auto p = masks::make_pair(gs, 64, i);
      global_same = global_same && p.m_i == ref.m_i && p.m_o == ref.m_o;
      auto q = masks::make_pair(is, 64, i);
      auto key = q.m_i.data;
      key.insert(key.end(), q.m_o.data.begin(), q.m_o.data.end());
      seen.insert(std::move(key));
    }
    instance_distinct = instance_distinct && seen.size() == 100;
  }
  ok = ok && global_same && instance_distinct;
  report(6, "mask-protocol", ok,
         detail + " (want 163 409 1638; 128/1 384/3 1664/13); global reuse over 100: " +
             (global_same ? "yes" : "no") + "; instance layouts distinct over 100: " +
             (instance_distinct ? "yes" : "no"));
}

// ---- 7. sampler -----------------------------------------------------------------

void sampler() {
  const auto s = diffusion::linear_beta_schedule(1000);
  Field x0(8, 8);
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = 1.5 * std::sin(0.7 * double(i));
  const diffusion::EpsPredictor oracle = [&](const Field& x, const Field&, const Mask&, int tau) {
    const double ab = s.alpha_bar(tau);
    Field e(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) e[i] = (x[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab);
    return e;
  };
  const diffusion::EpsPredictor smooth = [](const Field& x, const Field& c, const Mask&, int tau) {
    Field e(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) e[i] = 0.3 * std::tanh(x[i]) + 0.1 * c[i] + 1e-4 * tau;
    return e;
  };
  auto rms = [](const Field& a, const Field& b) {
    double t = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) t += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(t / double(a.size()));
  };
  const auto plan50 = diffusion::make_ddim_plan(s, 50);
  const Mask mi(8, 8, 1);
  Rng r1(707), r2(707);
  const bool bitwise = diffusion::ddim_sample(smooth, x0, mi, s, plan50, r1) ==
                       diffusion::ddim_sample(smooth, x0, mi, s, plan50, r2);
  Rng r3(708), r4(709);
  const Field none(8, 8);
  const Mask empty(8, 8);
  const double e50 = rms(diffusion::ddim_sample(oracle, none, empty, s, plan50, r3), x0);
  const double e1000 = rms(diffusion::ddim_sample(oracle, none, empty, s, diffusion::make_ddim_plan(s, 1000), r4), x0);
  report(7, "sampler", bitwise && e50 < kOracleRms50 && e1000 < kOracleRms1000,
         std::string("50-step DDIM bitwise reproducible: ") + (bitwise ? "yes" : "no") + "; oracle RMS " + num(e50) +
             " @50 (tol " + num(kOracleRms50) + "), " + num(e1000) + " @1000 (tol " + num(kOracleRms1000) + ")");
}

// ---- CLI helpers ----------------------------------------------------------------

struct Cli {
  std::string exe;
  fs::path log;

  // Runs one command; returns the exit status and appends output to the log.
  int run(const std::string& args) const {
    const std::string cmd = exe + " " + args + " >>" + log.string() + " 2>&1";
    {
      std::ofstream(log, std::ios::app) << "$ solid " << args << "\n";
    }
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : 128;
  }
  void must(const std::string& args) const {
    const int rc = run(args);
    if (rc != 0) throw std::runtime_error("solid " + args + " exited " + std::to_string(rc) + "; see " + log.string());
  }
};

std::string file_crc(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  char b[17];
  std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(io::crc64(s.str())));
  return b;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// ---- 10. provenance closure -----------------------------------------------------

void provenance(const Cli& cli, const fs::path& work) {
  const fs::path a = work / "prov_a", b = work / "prov_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::string tiny =
      " --set sim.n_traj=8 --set sim.n_frames=10 --set sim.snapshot_stride=10 --set scenario.test_traj=2"
      " --set scenario.test_instances=4 --set net.base_dim=8 --set net.dim_mults=[1,2] --set net.res_blocks=1"
      " --set optimizer.batch=4 --set optimizer.micro_batch=2 --set optimizer.steps=6"
      " --set optimizer.checkpoint_every=3 --set diffusion.ddim_steps=5 --set eval.K=3 --set eval.horizon=2"
      " --set eval.distance_bins=4";
  const std::string out = " --out " + a.string();
  try {
    cli.must("simulate --preset toy --seed 5" + tiny + out);
    cli.must("masks --preset toy --seed 5 --pattern random --density 0.10 --regime instance" + tiny + out);
    cli.must("train" + out);
    cli.must("sample" + out);
    cli.must("rollout" + out);
    cli.must("evaluate" + out);
    cli.must("baseline" + out);
    const std::vector<std::string> artifacts{"dataset.sfd", "masks.sfd", "model.sck", "ensembles.sfd",
                                             "rollout.sfd", "evaluate.csv", "baseline.csv"};
    int same = 0;
    std::string diff;
    for (const auto& f : artifacts) {
      const std::string cmd = read_json(a / (f + ".json")).at("artifact").at("command");
      cli.must(cmd + " --config " + (a / (f + ".json")).string() + " --out " + b.string());
      if (file_crc(a / f) == file_crc(b / f)) ++same;
      else diff += " " + f;
    }
    // Twice from the same flags must also agree.
    cli.must("simulate --preset toy --seed 5" + tiny + " --out " + (work / "prov_c").string());
    const bool twice = file_crc(a / "dataset.sfd") == file_crc(work / "prov_c" / "dataset.sfd");
    report(10, "provenance-closure", same == int(artifacts.size()) && twice,
           std::to_string(same) + "/" + std::to_string(artifacts.size()) +
               " artifacts reproduced byte-identically from their sidecars" + (diff.empty() ? "" : " (differ:" + diff + ")") +
               "; repeated simulate identical: " + (twice ? "yes" : "no"));
  } catch (const std::exception& e) {
    report(10, "provenance-closure", false, e.what());
  }
}

// ---- 8 and 9. end to end ----------------------------------------------------------

void end_to_end(const Cli& cli, const fs::path& work, std::uint64_t seed) {
  const fs::path dir = work / "toy";
  const std::string out = " --out " + dir.string();
  Stopwatch sw;
  try {
    if (!fs::exists(dir / "dataset.sfd")) cli.must("simulate --preset toy --seed " + std::to_string(seed) + out);
    if (!fs::exists(dir / "masks.sfd")) cli.must("masks --preset toy --seed " + std::to_string(seed) + out);
    cli.must("train" + out);  // resumes when a checkpoint exists
    const double t_train = sw.seconds();
    if (!fs::exists(dir / "ensembles.sfd")) cli.must("sample" + out);
    cli.must("evaluate" + out);
    cli.must("calibrate" + out);
    cli.must("baseline --untrained --model " + (dir / "model.sck").string() + out);
    if (!fs::exists(dir / "rollout.sfd")) cli.must("rollout" + out);

    const json ev = read_json(dir / "evaluate.csv.json").at("artifact").at("summary");
    const json base = read_json(dir / "baseline.csv.json").at("artifact").at("summary").at("methods");
    const json cal = read_json(dir / "calibration.csv.json").at("artifact").at("summary");
    const json rol = read_json(dir / "rollout.csv.json").at("artifact").at("summary");
    const double crps = ev.at("crps_mean"), zero = base.at("zero").at("crps_mean");
    const double persist = base.at("persistence").at("crps_mean"), untrained = base.at("untrained").at("crps_mean");
    const json rho = cal.at("instance_spearman"), trend = cal.at("profile_trend_spearman");
    const bool rho_ok = rho.is_number() && rho.get<double>() > kSpearmanMin;
    const bool trend_ok = trend.is_number() && trend.get<double>() > 0.0;
    const int n = ev.at("instances");
    report(8, "end-to-end-learning", n == 50 && crps < zero && crps < persist && rho_ok && trend_ok,
           "n=" + std::to_string(n) + " K=" + std::to_string(ev.at("K").get<int>()) + ": CRPS " + num(crps) +
               " vs zero " + num(zero) + ", persistence " + num(persist) + "; instance sigma-CRPS Spearman " +
               (rho.is_number() ? num(rho.get<double>()) : "n/a") + " (min " + num(kSpearmanMin) +
               "); distance-profile Spearman " + (trend.is_number() ? num(trend.get<double>()) : "n/a") +
               " (min >0); sampled untrained model CRPS " + num(untrained) + "; train " + num(t_train / 60) +
               " min, total " + num(sw.seconds() / 60) + " min");
    const double max_void = ev.at("max_void_sigma");
    report(8, "void-pixel-spread", max_void > 0.0, "max sigma at pixels outside M_i and M_o " + num(max_void), false);
    const double rate = rol.at("sigma_growth_rate");
    report(9, "rollout-trend", rate >= kRolloutPassRate,
           "mean sigma at h=3 > h=1 in " + num(100.0 * rate) + "% of " +
               std::to_string(rol.at("instances").get<int>()) + " forecast cases (target " +
               num(100.0 * kRolloutPassRate) + "%)",
           false);
  } catch (const std::exception& e) {
    report(8, "end-to-end-learning", false, e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string mode = "fast", cli_path, work = "acceptance_work";
  std::uint64_t seed = 1;
  app.add_option("mode", mode, "fast | e2e | all")->check(CLI::IsMember({"fast", "e2e", "all"}));
  app.add_option("--cli", cli_path, "path to the solid executable")->required();
  app.add_option("--work", work, "scratch directory");
  app.add_option("--seed", seed, "master seed of the toy end-to-end run");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work);
  const Cli cli{cli_path, fs::absolute(work) / "cli.log"};
  if (mode != "e2e") {
    gradient_fidelity();
    masked_supervision();
    crps_estimator();
    forward_moments();
    solver();
    mask_protocol();
    sampler();
    provenance(cli, fs::absolute(work));
  }
  if (mode != "fast") end_to_end(cli, fs::absolute(work), seed);

  int failed = 0;
  for (const auto& l : g_lines) failed += l.hard && !l.pass;
  std::printf("summary: %d hard failure(s)\n", failed);
  return failed == 0 ? 0 : 1;
}
