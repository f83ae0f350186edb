#pragma once

// Scores, calibration statistics and the interpolation baselines. All pure;
// aggregates are summed in a fixed order so results are bit-stable.

#include <optional>
#include <span>
#include <vector>

#include "grid.hpp"
#include "inference.hpp"

namespace solid::metrics {

/// Fair ensemble CRPS averaged over m_o: MAE term minus the distinct-pair
/// dispersion sum over K(K-1). K = 1 gives masked_mae bit for bit.
double crps_mc(const infer::Ensemble& ensemble, const Field& target, const Mask& m_o);

/// Per-pixel CRPS values (zero where m_o is unset).
Field crps_map(const infer::Ensemble& ensemble, const Field& target, const Mask& m_o);

double masked_mse(const Field& pred, const Field& target, const Mask& m_o);
double masked_mae(const Field& pred, const Field& target, const Mask& m_o);

/// Which pixels carry ground truth at the target time.
enum class Truth {
  Dense,   // simulation: every pixel known
  Sparse,  // only m_o known
};

/// CRPS over the masks of one instance. Absent when the region is empty or
/// its truth is not available.
struct RegionCRPS {
  double target = 0.0;                    // M_o
  std::optional<double> anchor;           // M_i ∩ M_o
  std::optional<double> target_only;      // M_o \ M_i
  std::optional<double> conditioned;      // M_i (dense truth)
  std::optional<double> void_px;          // outside M_i ∪ M_o (dense truth)
  std::optional<double> full;             // whole grid (dense truth)
  std::size_t n_target = 0, n_conditioned = 0, n_target_only = 0, n_void = 0;
};

RegionCRPS region_crps(const infer::Ensemble& ensemble, const Field& target, const Mask& m_i,
                       const Mask& m_o, Truth truth);

/// Nearest observed value; ties go to the lowest linear index.
Field preinterp_nn(const Field& x_c, const Mask& m_i);

/// Median over sensors of the distance to the nearest other sensor; 1 for a single sensor.
double median_sensor_spacing(const Mask& m_i);

/// Gaussian-kernel interpolation exp(-r^2 / (2 s^2)) through the observed
/// values. A failed factorization is retried once with 1e-8 added to the diagonal.
Field preinterp_rbf(const Field& x_c, const Mask& m_i, double length_scale);

/// Copy the conditioning forward and fill voids by nearest neighbour.
Field persistence_baseline(const Field& x_c, const Mask& m_i);

/// Euclidean pixel distance to the nearest set pixel of m_i.
Field distance_to_mask(const Mask& m_i);

/// Absent when either input is constant or fewer than two pairs.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);
/// Ranks starting at 1 with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> x);

struct CalibrationInstance {
  const infer::Ensemble* ensemble = nullptr;  // K >= 2, physical units
  const Field* target = nullptr;
  const Mask* m_i = nullptr;
  const Mask* m_o = nullptr;
};

struct DistanceBin {
  double d_lo = 0.0, d_hi = 0.0;
  double mean_distance = 0.0;
  double mean_sigma = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  // Per pixel, pooled over every M_o pixel: sigma vs |ensemble mean - truth|.
  std::optional<double> pixel_pearson, pixel_spearman;
  // Per instance: mean sigma over M_o vs instance CRPS.
  std::optional<double> instance_pearson, instance_spearman;
  std::vector<DistanceBin> profile;
  // Spearman of bin mean sigma against bin order.
  std::optional<double> profile_trend;
  std::vector<double> instance_sigma, instance_crps;  // scatter data
};

CalibrationReport calibration(std::span<const CalibrationInstance> instances, int n_bins = 8);

}  // namespace solid::metrics
