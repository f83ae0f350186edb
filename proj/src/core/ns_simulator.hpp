#pragma once

// Pseudo-spectral vorticity solver on the periodic square [-pi, pi]^2.

#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "grid.hpp"

namespace solid::ns {

struct NSConfig {
  int grid_n = 64;
  double reynolds = 100.0;
  double dt = 1e-3;
  int snapshot_stride = 40;  // 0.04 time units between saved frames at dt = 1e-3
  int n_frames = 50;
  bool forcing = true;  // f(x1, x2) = -4 cos(4 x2)

  double viscosity() const { return 1.0 / reynolds; }
  double frame_interval() const { return dt * snapshot_stride; }
  void validate() const;
};

struct GRFSpec {
  double alpha = 2.5;
  double tau_corr = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Trajectory {
  std::vector<Field> frames;
  NSConfig config;
  std::uint64_t seed = 0;
};

struct Velocity {
  Field u1;  // along x1 (columns)
  Field u2;  // along x2 (rows)
};

/// Mean-zero Gaussian random field with spectrum ~ (|k|^2 + tau^2)^(-alpha).
Field sample_grf(const GRFSpec& spec, int grid_n);

/// Biot-Savart inversion u = (i k_perp / |k|^2) omega_hat, zero mean mode.
Velocity velocity_from_vorticity(const Field& omega);

/// max |i k . u_hat| of the velocity recovered from omega.
double spectral_divergence(const Field& omega);

/// Physical-space forcing -4 cos(4 x2) on an n x n grid.
Field forcing_field(int grid_n);

double enstrophy(const Field& omega);

/// Owns FFT plans and scratch for one resolution. Not thread-safe; one per thread.
class SpectralSolver {
 public:
  explicit SpectralSolver(const NSConfig& cfg);
  ~SpectralSolver();
  SpectralSolver(const SpectralSolver&) = delete;
  SpectralSolver& operator=(const SpectralSolver&) = delete;

  const NSConfig& config() const { return cfg_; }

  /// Advances `omega` by `n_steps` substeps of dt. Throws Numerical on blowup.
  void advance(Field& omega, int n_steps);

  /// Courant number dt * max|u| / dx for the given state.
  double courant(const Field& omega);

 private:
  using cplx = std::complex<double>;

  void forward(const std::vector<double>& in, std::vector<cplx>& out);
  void inverse(const std::vector<cplx>& in, std::vector<double>& out);
  void nonlinear(const std::vector<cplx>& w_hat, std::vector<cplx>& out);

  NSConfig cfg_;
  int n_ = 0;
  int nh_ = 0;  // n/2 + 1 complex columns
  std::vector<double> kx_, ky_, k2_, dealias_, decay_;
  std::vector<cplx> f_hat_;

  struct Plans;
  std::unique_ptr<Plans> plans_;
  std::vector<double> rbuf_, ra_, rb_, rc_, rd_;
  std::vector<cplx> cbuf_, ctmp_;
};

/// One substep of the full equation.
Field step(const Field& omega, const NSConfig& cfg);

Trajectory simulate(const NSConfig& cfg, const GRFSpec& grf);

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::vector<int> train_frames;     // even indices
  std::vector<int> heldout_frames;   // odd indices
  NSConfig config;
  GRFSpec grf;
  std::uint64_t seed = 0;
};

std::vector<int> train_frame_indices(int n_frames);
std::vector<int> heldout_frame_indices(int n_frames);

/// Trajectory i uses GRF seed derive_seed(seed, i).
Dataset simulate_dataset(int n_traj, const NSConfig& cfg, const GRFSpec& grf, std::uint64_t seed);

}  // namespace solid::ns
