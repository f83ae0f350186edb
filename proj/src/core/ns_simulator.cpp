#include "ns_simulator.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rng.hpp"

namespace solid::ns {

namespace {

using cplx = std::complex<double>;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int wavenumber(int i, int n) { return i <= n / 2 ? i : i - n; }

double coord(int i, int n) { return -std::numbers::pi + 2.0 * std::numbers::pi * i / n; }

/// Stateless r2c/c2r helpers for one-off transforms.
class Fft2 {
 public:
  explicit Fft2(int n) : n_(n), nh_(n / 2 + 1) {
    real_ = fftw_alloc_real(std::size_t(n) * n);
    spec_ = fftw_alloc_complex(std::size_t(n) * nh_);
    fwd_ = fftw_plan_dft_r2c_2d(n, n, real_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_2d(n, n, spec_, real_, FFTW_ESTIMATE);
  }
  ~Fft2() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  std::vector<cplx> forward(const std::vector<double>& in) {
    std::copy(in.begin(), in.end(), real_);
    fftw_execute(fwd_);
    std::vector<cplx> out(std::size_t(n_) * nh_);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {spec_[i][0], spec_[i][1]};
    return out;
  }

  /// Unnormalized inverse (scaled by n^2).
  std::vector<double> inverse(const std::vector<cplx>& in) {
    for (std::size_t i = 0; i < in.size(); ++i) {
      spec_[i][0] = in[i].real();
      spec_[i][1] = in[i].imag();
    }
    fftw_execute(inv_);
    return {real_, real_ + std::size_t(n_) * n_};
  }

 private:
  int n_, nh_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan fwd_ = nullptr, inv_ = nullptr;
};

/// Derivative wavenumber: the Nyquist mode carries no odd derivative.
double deriv_k(int k, int n) { return std::abs(k) == n / 2 ? 0.0 : double(k); }

}  // namespace

void NSConfig::validate() const {
  if (!(is_pow2(grid_n) && grid_n >= 4)) fail(ErrorKind::Validation, "ns: grid_n must be a power of two >= 4, got " + std::to_string(grid_n));
  require(reynolds > 0.0, ErrorKind::Validation, "ns: reynolds must be positive");
  require(dt > 0.0, ErrorKind::Validation, "ns: dt must be positive");
  require(snapshot_stride >= 1, ErrorKind::Validation, "ns: snapshot_stride must be >= 1");
  require(n_frames >= 1, ErrorKind::Validation, "ns: n_frames must be >= 1");
}

void GRFSpec::validate() const {
  require(alpha > 1.0, ErrorKind::Validation, "grf: alpha must exceed 1");
  require(tau_corr > 0.0, ErrorKind::Validation, "grf: tau_corr must be positive");
}

Field sample_grf(const GRFSpec& spec, int grid_n) {
  spec.validate();
  require(is_pow2(grid_n), ErrorKind::Validation, "grf: grid_n must be a power of two");
  const int n = grid_n;
  const int nh = n / 2 + 1;
  Rng rng(spec.seed);
  Gaussian gauss;
  std::vector<double> noise(std::size_t(n) * n);
  for (auto& v : noise) v = gauss(rng);

  Fft2 fft(n);
  auto hat = fft.forward(noise);
  const double sigma = std::pow(spec.tau_corr, spec.alpha - 1.0);
  const double t2 = spec.tau_corr * spec.tau_corr;
  for (int r = 0; r < n; ++r) {
    const int k2 = wavenumber(r, n);
    for (int c = 0; c < nh; ++c) {
      const int k1 = c;
      const double kk = double(k1) * k1 + double(k2) * k2;
      const double amp = (k1 == 0 && k2 == 0) ? 0.0 : n * sigma * std::pow(kk + t2, -0.5 * spec.alpha);
      hat[std::size_t(r) * nh + c] *= amp;
    }
  }
  auto phys = fft.inverse(hat);
  const double norm = 1.0 / (double(n) * n);
  for (auto& v : phys) v *= norm;
  // The k = 0 coefficient is zeroed; remove the O(eps) residual mean exactly.
  double mean = 0.0;
  for (double v : phys) mean += v;
  mean /= double(phys.size());
  for (auto& v : phys) v -= mean;
  return Field(n, n, std::move(phys));
}

Velocity velocity_from_vorticity(const Field& omega) {
  const int n = omega.rows;
  require(omega.cols == n && is_pow2(n), ErrorKind::Shape,
          "velocity_from_vorticity: need a square power-of-two grid");
  const int nh = n / 2 + 1;
  Fft2 fft(n);
  const auto w = fft.forward(omega.data);
  std::vector<cplx> u1(w.size()), u2(w.size());
  const cplx I(0.0, 1.0);
  for (int r = 0; r < n; ++r) {
    const int k2 = wavenumber(r, n);
    for (int c = 0; c < nh; ++c) {
      const int k1 = c;
      const double kk = double(k1) * k1 + double(k2) * k2;
      const std::size_t idx = std::size_t(r) * nh + c;
      if (kk == 0.0) continue;
      const cplx psi = w[idx] / kk;
      u1[idx] = I * deriv_k(k2, n) * psi;
      u2[idx] = -I * deriv_k(k1, n) * psi;
    }
  }
  const double norm = 1.0 / (double(n) * n);
  auto p1 = fft.inverse(u1);
  auto p2 = fft.inverse(u2);
  for (auto& v : p1) v *= norm;
  for (auto& v : p2) v *= norm;
  return {Field(n, n, std::move(p1)), Field(n, n, std::move(p2))};
}

double spectral_divergence(const Field& omega) {
  const auto vel = velocity_from_vorticity(omega);
  const int n = omega.rows;
  const int nh = n / 2 + 1;
  Fft2 fft(n);
  const auto a = fft.forward(vel.u1.data);
  const auto b = fft.forward(vel.u2.data);
  const cplx I(0.0, 1.0);
  double worst = 0.0;
  const double norm = 1.0 / (double(n) * n);
  for (int r = 0; r < n; ++r) {
    const int k2 = wavenumber(r, n);
    for (int c = 0; c < nh; ++c) {
      const std::size_t idx = std::size_t(r) * nh + c;
      const cplx div = I * deriv_k(c, n) * a[idx] + I * deriv_k(k2, n) * b[idx];
      worst = std::max(worst, std::abs(div) * norm);
    }
  }
  return worst;
}

Field forcing_field(int grid_n) {
  Field f(grid_n, grid_n);
  for (int r = 0; r < grid_n; ++r) {
    const double x2 = coord(r, grid_n);
    for (int c = 0; c < grid_n; ++c) f(r, c) = -4.0 * std::cos(4.0 * x2);
  }
  return f;
}

double enstrophy(const Field& omega) {
  double s = 0.0;
  for (double v : omega.data) s += v * v;
  return 0.5 * s / double(omega.size());
}

// ---- SpectralSolver --------------------------------------------------------

struct SpectralSolver::Plans {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

SpectralSolver::SpectralSolver(const NSConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  n_ = cfg_.grid_n;
  nh_ = n_ / 2 + 1;
  const std::size_t nc = std::size_t(n_) * nh_;
  kx_.resize(nc);
  ky_.resize(nc);
  k2_.resize(nc);
  dealias_.resize(nc);
  decay_.resize(nc);
  const double nu = cfg_.viscosity();
  const int cutoff = n_ / 3;
  for (int r = 0; r < n_; ++r) {
    const int k2 = wavenumber(r, n_);
    for (int c = 0; c < nh_; ++c) {
      const std::size_t idx = std::size_t(r) * nh_ + c;
      kx_[idx] = deriv_k(c, n_);
      ky_[idx] = deriv_k(k2, n_);
      k2_[idx] = double(c) * c + double(k2) * k2;
      dealias_[idx] = (c <= cutoff && std::abs(k2) <= cutoff) ? 1.0 : 0.0;
      decay_[idx] = std::exp(-nu * k2_[idx] * cfg_.dt);
    }
  }
  plans_ = std::make_unique<Plans>();
  plans_->real = fftw_alloc_real(std::size_t(n_) * n_);
  plans_->spec = fftw_alloc_complex(nc);
  plans_->fwd = fftw_plan_dft_r2c_2d(n_, n_, plans_->real, plans_->spec, FFTW_ESTIMATE);
  plans_->inv = fftw_plan_dft_c2r_2d(n_, n_, plans_->spec, plans_->real, FFTW_ESTIMATE);

  const std::size_t nr = std::size_t(n_) * n_;
  rbuf_.resize(nr);
  ra_.resize(nr);
  rb_.resize(nr);
  rc_.resize(nr);
  rd_.resize(nr);
  cbuf_.resize(nc);
  ctmp_.resize(nc);
  f_hat_.assign(nc, cplx(0.0));
  if (cfg_.forcing) forward(forcing_field(n_).data, f_hat_);
}

SpectralSolver::~SpectralSolver() {
  if (!plans_) return;
  fftw_destroy_plan(plans_->fwd);
  fftw_destroy_plan(plans_->inv);
  fftw_free(plans_->real);
  fftw_free(plans_->spec);
}

void SpectralSolver::forward(const std::vector<double>& in, std::vector<cplx>& out) {
  std::copy(in.begin(), in.end(), plans_->real);
  fftw_execute(plans_->fwd);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {plans_->spec[i][0], plans_->spec[i][1]};
}

void SpectralSolver::inverse(const std::vector<cplx>& in, std::vector<double>& out) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    plans_->spec[i][0] = in[i].real();
    plans_->spec[i][1] = in[i].imag();
  }
  fftw_execute(plans_->inv);
  const double norm = 1.0 / (double(n_) * n_);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = plans_->real[i] * norm;
}

// out = dealias(-(u . grad omega))^ + f_hat
void SpectralSolver::nonlinear(const std::vector<cplx>& w, std::vector<cplx>& out) {
  const cplx I(0.0, 1.0);
  const std::size_t nc = w.size();
  // u1
  for (std::size_t i = 0; i < nc; ++i) ctmp_[i] = k2_[i] > 0 ? I * ky_[i] * w[i] / k2_[i] : 0.0;
  inverse(ctmp_, ra_);
  // u2
  for (std::size_t i = 0; i < nc; ++i) ctmp_[i] = k2_[i] > 0 ? -I * kx_[i] * w[i] / k2_[i] : 0.0;
  inverse(ctmp_, rb_);
  // d omega / dx1
  for (std::size_t i = 0; i < nc; ++i) ctmp_[i] = I * kx_[i] * w[i];
  inverse(ctmp_, rc_);
  // d omega / dx2
  for (std::size_t i = 0; i < nc; ++i) ctmp_[i] = I * ky_[i] * w[i];
  inverse(ctmp_, rd_);
  for (std::size_t i = 0; i < rbuf_.size(); ++i) rbuf_[i] = -(ra_[i] * rc_[i] + rb_[i] * rd_[i]);
  forward(rbuf_, out);
  for (std::size_t i = 0; i < nc; ++i) out[i] = out[i] * dealias_[i] + f_hat_[i];
}

void SpectralSolver::advance(Field& omega, int n_steps) {
  if (!(omega.rows == n_ && omega.cols == n_)) fail(ErrorKind::Shape, "solver: field does not match grid_n " + std::to_string(n_));
  const std::size_t nc = std::size_t(n_) * nh_;
  std::vector<cplx> w(nc), k1(nc), k2(nc), stage(nc);
  forward(omega.data, w);
  const double dt = cfg_.dt;
  for (int s = 0; s < n_steps; ++s) {
    // Integrating factor for diffusion, Heun for advection + forcing.
    nonlinear(w, k1);
    for (std::size_t i = 0; i < nc; ++i) stage[i] = decay_[i] * (w[i] + dt * k1[i]);
    nonlinear(stage, k2);
    for (std::size_t i = 0; i < nc; ++i) {
      w[i] = decay_[i] * w[i] + 0.5 * dt * (decay_[i] * k1[i] + k2[i]);
    }
  }
  inverse(w, omega.data);
  for (double v : omega.data) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::Numerical, "solver: non-finite vorticity; dt=" + std::to_string(dt) +
                                     " likely violates the stability bound");
    }
  }
}

double SpectralSolver::courant(const Field& omega) {
  const auto vel = velocity_from_vorticity(omega);
  double umax = 0.0;
  for (std::size_t i = 0; i < vel.u1.size(); ++i) {
    umax = std::max(umax, std::hypot(vel.u1[i], vel.u2[i]));
  }
  const double dx = 2.0 * std::numbers::pi / n_;
  return cfg_.dt * umax / dx;
}

Field step(const Field& omega, const NSConfig& cfg) {
  SpectralSolver solver(cfg);
  Field out = omega;
  solver.advance(out, 1);
  return out;
}

Trajectory simulate(const NSConfig& cfg, const GRFSpec& grf) {
  cfg.validate();
  SpectralSolver solver(cfg);
  Trajectory traj;
  traj.config = cfg;
  traj.seed = grf.seed;
  Field omega = sample_grf(grf, cfg.grid_n);
  traj.frames.reserve(std::size_t(cfg.n_frames));
  traj.frames.push_back(omega);
  for (int f = 1; f < cfg.n_frames; ++f) {
    solver.advance(omega, cfg.snapshot_stride);
    traj.frames.push_back(omega);
  }
  return traj;
}

std::vector<int> train_frame_indices(int n_frames) {
  std::vector<int> out;
  for (int i = 0; i < n_frames; i += 2) out.push_back(i);
  return out;
}

std::vector<int> heldout_frame_indices(int n_frames) {
  std::vector<int> out;
  for (int i = 1; i < n_frames; i += 2) out.push_back(i);
  return out;
}

Dataset simulate_dataset(int n_traj, const NSConfig& cfg, const GRFSpec& grf, std::uint64_t seed) {
  require(n_traj >= 1, ErrorKind::Validation, "simulate_dataset: n_traj must be >= 1");
  cfg.validate();
  grf.validate();
  Dataset ds;
  ds.config = cfg;
  ds.grf = grf;
  ds.seed = seed;
  ds.train_frames = train_frame_indices(cfg.n_frames);
  ds.heldout_frames = heldout_frame_indices(cfg.n_frames);
  ds.trajectories.reserve(std::size_t(n_traj));
  for (int i = 0; i < n_traj; ++i) {
    GRFSpec g = grf;
    g.seed = derive_seed(seed, std::uint64_t(i));
    try {
      ds.trajectories.push_back(simulate(cfg, g));
    } catch (const Error& e) {
      fail(e.kind(), "trajectory " + std::to_string(i) + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace solid::ns
