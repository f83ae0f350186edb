#include "metrics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "masks.hpp"

namespace solid::metrics {

using infer::Ensemble;

namespace {

void check_ensemble(const Ensemble& e, const Field& target) {
  require(e.size() >= 1, ErrorKind::Validation, "crps: empty ensemble");
  for (const Field& m : e.members) require_same_shape(m, target, "crps: member vs target");
}

void check_nonempty(const Mask& m, const char* what) {
  if (popcount(m) == 0) fail(ErrorKind::Validation, std::string(what) + ": empty mask");
}

// Distinct-pair sum via order statistics: sum_{k<l} |x_k - x_l| = sum_k (2k - K + 1) x_(k).
double pair_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const double K = double(v.size());
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) s += (2.0 * double(k) - K + 1.0) * v[k];
  return s;
}

double pixel_crps(const Ensemble& e, std::size_t i, double y, std::vector<double>& scratch) {
  const std::size_t K = e.members.size();
  double abs_sum = 0.0;
  for (const Field& m : e.members) abs_sum += std::abs(m[i] - y);
  const double mae = abs_sum / double(K);
  double disp = 0.0;
  if (K > 1) {
    scratch.resize(K);
    for (std::size_t k = 0; k < K; ++k) scratch[k] = e.members[k][i];
    disp = pair_sum(scratch) / (double(K) * double(K - 1));
  }
  return mae - disp;
}

double region_mean(const Field& values, const Mask& region, std::size_t& count) {
  double s = 0.0;
  count = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (region[i]) {
      s += values[i];
      ++count;
    }
  }
  return count ? s / double(count) : 0.0;
}

std::optional<double> maybe_mean(const Field& values, const Mask& region, std::size_t& count) {
  const double m = region_mean(values, region, count);
  if (count == 0) return std::nullopt;
  return m;
}

struct Sensor {
  int r, c;
};

std::vector<Sensor> sensors(const Mask& m) {
  std::vector<Sensor> out;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      if (m(r, c)) out.push_back({r, c});
  return out;
}

double sq_dist(int r0, int c0, int r1, int c1) {
  const double dr = r0 - r1, dc = c0 - c1;
  return dr * dr + dc * dc;
}

}  // namespace

Field crps_map(const Ensemble& ensemble, const Field& target, const Mask& m_o) {
  check_ensemble(ensemble, target);
  require_same_shape(target, m_o, "crps: target vs m_o");
  Field out(target.rows, target.cols);
  std::vector<double> scratch;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (m_o[i]) out[i] = pixel_crps(ensemble, i, target[i], scratch);
  }
  return out;
}

double crps_mc(const Ensemble& ensemble, const Field& target, const Mask& m_o) {
  check_nonempty(m_o, "crps_mc");
  const Field map = crps_map(ensemble, target, m_o);
  std::size_t n = 0;
  return region_mean(map, m_o, n);
}

double masked_mse(const Field& pred, const Field& target, const Mask& m_o) {
  require_same_shape(pred, target, "masked_mse: pred vs target");
  require_same_shape(target, m_o, "masked_mse: target vs m_o");
  check_nonempty(m_o, "masked_mse");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (m_o[i]) {
      const double d = pred[i] - target[i];
      s += d * d;
      ++n;
    }
  }
  return s / double(n);
}

double masked_mae(const Field& pred, const Field& target, const Mask& m_o) {
  require_same_shape(pred, target, "masked_mae: pred vs target");
  require_same_shape(target, m_o, "masked_mae: target vs m_o");
  check_nonempty(m_o, "masked_mae");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (m_o[i]) {
      s += std::abs(pred[i] - target[i]);
      ++n;
    }
  }
  return s / double(n);
}

RegionCRPS region_crps(const Ensemble& ensemble, const Field& target, const Mask& m_i,
                       const Mask& m_o, Truth truth) {
  check_nonempty(m_o, "region_crps");
  require_same_shape(m_i, m_o, "region_crps: m_i vs m_o");
  const bool dense = truth == Truth::Dense;
  const Mask all(target.rows, target.cols, 1);
  const Field map = crps_map(ensemble, target, dense ? all : m_o);

  RegionCRPS r;
  std::size_t n = 0;
  r.target = region_mean(map, m_o, r.n_target);
  r.anchor = maybe_mean(map, masks::mask_intersection(m_i, m_o), n);
  r.target_only = maybe_mean(map, masks::mask_difference(m_o, m_i), r.n_target_only);
  if (dense) {
    r.conditioned = maybe_mean(map, m_i, r.n_conditioned);
    Mask void_px(target.rows, target.cols);
    for (std::size_t i = 0; i < void_px.size(); ++i) void_px[i] = !m_i[i] && !m_o[i];
    r.void_px = maybe_mean(map, void_px, r.n_void);
    r.full = region_mean(map, all, n);
  }
  return r;
}

Field preinterp_nn(const Field& x_c, const Mask& m_i) {
  require_same_shape(x_c, m_i, "preinterp_nn: x_c vs m_i");
  check_nonempty(m_i, "preinterp_nn");
  const auto pts = sensors(m_i);
  Field out(x_c.rows, x_c.cols);
  for (int r = 0; r < x_c.rows; ++r) {
    for (int c = 0; c < x_c.cols; ++c) {
      // pts is in linear-index order, so strict < keeps the lowest index on ties.
      double best = std::numeric_limits<double>::infinity();
      const Sensor* pick = nullptr;
      for (const Sensor& s : pts) {
        const double d = sq_dist(r, c, s.r, s.c);
        if (d < best) {
          best = d;
          pick = &s;
        }
      }
      out(r, c) = x_c(pick->r, pick->c);
    }
  }
  return out;
}

Field persistence_baseline(const Field& x_c, const Mask& m_i) { return preinterp_nn(x_c, m_i); }

Field distance_to_mask(const Mask& m_i) {
  check_nonempty(m_i, "distance_to_mask");
  const auto pts = sensors(m_i);
  Field out(m_i.rows, m_i.cols);
  for (int r = 0; r < m_i.rows; ++r) {
    for (int c = 0; c < m_i.cols; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (const Sensor& s : pts) best = std::min(best, sq_dist(r, c, s.r, s.c));
      out(r, c) = std::sqrt(best);
    }
  }
  return out;
}

double median_sensor_spacing(const Mask& m_i) {
  check_nonempty(m_i, "median_sensor_spacing");
  const auto pts = sensors(m_i);
  if (pts.size() == 1) return 1.0;
  std::vector<double> nearest(pts.size(), std::numeric_limits<double>::infinity());
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = 0; b < pts.size(); ++b)
      if (a != b) nearest[a] = std::min(nearest[a], sq_dist(pts[a].r, pts[a].c, pts[b].r, pts[b].c));
  const auto mid = nearest.begin() + std::ptrdiff_t(nearest.size() / 2);
  std::nth_element(nearest.begin(), mid, nearest.end());
  return std::sqrt(*mid);
}

Field preinterp_rbf(const Field& x_c, const Mask& m_i, double length_scale) {
  require_same_shape(x_c, m_i, "preinterp_rbf: x_c vs m_i");
  check_nonempty(m_i, "preinterp_rbf");
  require(length_scale > 0.0 && std::isfinite(length_scale), ErrorKind::Validation,
          "preinterp_rbf: length scale must be positive");
  const auto pts = sensors(m_i);
  const Eigen::Index n = Eigen::Index(pts.size());
  const double inv = 1.0 / (2.0 * length_scale * length_scale);
  Eigen::MatrixXd A(n, n);
  Eigen::VectorXd y(n);
  for (Eigen::Index a = 0; a < n; ++a) {
    y(a) = x_c(pts[std::size_t(a)].r, pts[std::size_t(a)].c);
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto& p = pts[std::size_t(a)];
      const auto& q = pts[std::size_t(b)];
      A(a, b) = std::exp(-sq_dist(p.r, p.c, q.r, q.c) * inv);
    }
  }
  auto solve = [&](const Eigen::MatrixXd& M, Eigen::VectorXd& w) {
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success) return false;
    w = llt.solve(y);
    return w.allFinite();
  };
  Eigen::VectorXd w;
  if (!solve(A, w)) {
    Eigen::MatrixXd R = A;
    R.diagonal().array() += 1e-8;
    if (!solve(R, w)) fail(ErrorKind::Numerical, "preinterp_rbf: collocation system singular after ridge");
  }
  Field out(x_c.rows, x_c.cols);
  for (int r = 0; r < x_c.rows; ++r) {
    for (int c = 0; c < x_c.cols; ++c) {
      double s = 0.0;
      for (Eigen::Index a = 0; a < n; ++a) {
        const auto& p = pts[std::size_t(a)];
        s += w(a) * std::exp(-sq_dist(r, c, p.r, p.c) * inv);
      }
      out(r, c) = s;
    }
  }
  return out;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::Shape, "pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = x[i] - mx, b = y[i] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::Shape, "spearman: length mismatch");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

CalibrationReport calibration(std::span<const CalibrationInstance> instances, int n_bins) {
  require(n_bins >= 1, ErrorKind::Validation, "calibration: n_bins must be >= 1");
  CalibrationReport rep;
  std::vector<double> px_sigma, px_err;
  struct Point {
    double d, sigma;
  };
  std::vector<Point> pts;
  for (const auto& inst : instances) {
    require(inst.ensemble && inst.target && inst.m_i && inst.m_o, ErrorKind::Validation,
            "calibration: incomplete instance");
    const auto u = infer::uncertainty_map(*inst.ensemble);
    const Field& y = *inst.target;
    const Mask& m_o = *inst.m_o;
    require_same_shape(u.sigma, y, "calibration: ensemble vs target");
    double sig_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!m_o[i]) continue;
      px_sigma.push_back(u.sigma[i]);
      px_err.push_back(std::abs(u.mean[i] - y[i]));
      sig_sum += u.sigma[i];
      ++n;
    }
    check_nonempty(m_o, "calibration");
    rep.instance_sigma.push_back(sig_sum / double(n));
    rep.instance_crps.push_back(crps_mc(*inst.ensemble, y, m_o));
    const Field dist = distance_to_mask(*inst.m_i);
    for (std::size_t i = 0; i < y.size(); ++i) pts.push_back({dist[i], u.sigma[i]});
  }
  rep.pixel_pearson = pearson(px_sigma, px_err);
  rep.pixel_spearman = spearman(px_sigma, px_err);
  rep.instance_pearson = pearson(rep.instance_sigma, rep.instance_crps);
  rep.instance_spearman = spearman(rep.instance_sigma, rep.instance_crps);

  // Equal-count bins over pixels sorted by distance; ties keep pooling order.
  std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.d < b.d; });
  const std::size_t total = pts.size();
  const std::size_t bins = std::min<std::size_t>(std::size_t(n_bins), total);
  std::vector<double> order, means;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * total / bins, hi = (b + 1) * total / bins;
    DistanceBin bin;
    bin.d_lo = pts[lo].d;
    bin.d_hi = pts[hi - 1].d;
    bin.count = hi - lo;
    for (std::size_t i = lo; i < hi; ++i) {
      bin.mean_distance += pts[i].d;
      bin.mean_sigma += pts[i].sigma;
    }
    bin.mean_distance /= double(bin.count);
    bin.mean_sigma /= double(bin.count);
    order.push_back(double(b));
    means.push_back(bin.mean_sigma);
    rep.profile.push_back(bin);
  }
  rep.profile_trend = spearman(order, means);
  return rep;
}

}  // namespace solid::metrics
