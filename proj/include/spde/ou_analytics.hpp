#pragma once

#include <cstdint>
#include <vector>

#include "spde/forward_sim.hpp"
#include "spde/spectral_core.hpp"

namespace spde {

/// Law of the linear (F = 0) process Z: independent Gaussians per mode.
struct GaussianLaw {
  Field mean;
  DiagonalOperator var;
};

/// Densities are only evaluated for T - t >= kHorizonGuard * T.
inline constexpr double kHorizonGuard = 1e-10;

GaussianLaw ou_transition(const SpectralModel& model, double s, const Field& x, double t);

/// log of the density of L(Z(T; t, x)) with respect to nu = N(0, Q_inf) at y,
/// summed per mode as a ratio of scalar Gaussian densities.
double log_ptilde(const SpectralModel& model, double t, const Field& x, double T, const Field& y);

/// Same quantity through the Cameron-Martin factorization
///   <Gamma_r^* Q_r^{-1/2} y, x> - |Gamma_r x|^2 / 2 + log dL(Z(T; t, 0))/dnu (y).
double log_ptilde_cameron_martin(const SpectralModel& model, double t, const Field& x, double T, const Field& y);

/// D_x log ptilde(t, x; T, y) = Gamma_r^* (Q_r^{-1/2} y - Gamma_r x).
Field grad_log_ptilde(const SpectralModel& model, double t, const Field& x, double T, const Field& y);

/// Q D_x log ptilde: the extra drift of the guided process.
Field guided_drift(const SpectralModel& model, double t, double T, const Field& y, const Field& x);

/// log integral ptilde(t, x; T, u) N(v; u, obs_var) nu(du) for independent per-mode
/// Gaussian observation noise; equals sum_j log N(v_j; e^{l_j r} x_j, q_{j,r} + obs_var_j).
double log_h_noisy_obs(const SpectralModel& model, double t, const Field& x, double T, const Field& v,
                       std::span<const double> obs_var);
Field grad_log_h_noisy_obs(const SpectralModel& model, double t, const Field& x, double T, const Field& v,
                           std::span<const double> obs_var);

/// Exact Gaussian bridge of Z from (0, x0) to (T, y).
class OuBridge {
 public:
  OuBridge(const SpectralModel& model, Field x0, double T, Field y);

  /// Closed-form conditional marginal at time t in [0, T].
  GaussianLaw marginal_mean_var(double t) const;

  /// Sequential exact sampling on the grid; the last node must equal T.
  Path sample(const TimeGrid& grid, std::uint64_t rng_seed, std::uint64_t path_index = 0) const;

  double horizon() const { return T_; }

 private:
  // Conditional law of Z(t1) given Z(t0) = a and Z(T) = y, mode j.
  void conditional(std::size_t j, double t0, double a, double t1, double& mean, double& var) const;

  SpectralModel model_;
  Field x0_;
  double T_;
  Field y_;
};

Path ou_bridge_exact_sample(const SpectralModel& model, const Field& x0, double T, const Field& y,
                            const TimeGrid& grid, std::uint64_t rng_seed, std::uint64_t path_index = 0);

/// |ptilde_j(s,x;t,y) - integral ptilde_j(s,x;r,z) ptilde_j(r,z;t,y) nu_j(dz)| for one mode,
/// the integral taken by Gauss-Hermite quadrature against the law of Z_j(r; s, x).
double chapman_kolmogorov_residual(const SpectralModel& model, std::size_t mode, double s, double x, double r,
                                   double t, double y, std::size_t nodes = 200);

/// Per-mode scalar log ptilde_j(s, x; t, y).
double log_ptilde_mode(const SpectralModel& model, std::size_t mode, double s, double x, double t, double y);

}  // namespace spde
