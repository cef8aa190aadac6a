#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "spde/rng.hpp"
#include "spde/spectral_core.hpp"

namespace spde {

enum class NonlinearityKind { Zero, LinearScale, BoundedRational, SineNemytskii };

/// Globally Lipschitz pointwise reaction term, applied pseudo-spectrally:
/// synthesize on the grid, map pointwise, analyze back.
///   Zero -> 0, LinearScale -> a u, BoundedRational -> a u / (1 + u^2),
///   SineNemytskii -> a sin(u).
struct Nonlinearity {
  NonlinearityKind kind = NonlinearityKind::Zero;
  double alpha = 0.0;
  std::size_t oversampling = 4;  // grid has oversampling * J intervals

  static Nonlinearity zero() { return {}; }
  static Nonlinearity linear_scale(double a) { return {NonlinearityKind::LinearScale, a}; }
  static Nonlinearity bounded_rational(double a) { return {NonlinearityKind::BoundedRational, a}; }
  static Nonlinearity sine(double a) { return {NonlinearityKind::SineNemytskii, a}; }

  bool is_zero() const { return kind == NonlinearityKind::Zero || alpha == 0.0; }
  /// Lipschitz constant C_F of the pointwise map; also the linear-growth constant.
  double lipschitz_bound() const;
  double pointwise(double u) const;
  std::string name() const;
};

NonlinearityKind parse_nonlinearity_kind(const std::string& s);
std::string to_string(NonlinearityKind kind);

/// Pseudo-spectral evaluator of a Nonlinearity for one model. Holds scratch
/// buffers, so each thread needs its own copy; copies share the sine table.
class NemytskiiOperator {
 public:
  NemytskiiOperator(const SpectralModel& model, const Nonlinearity& F);

  const Nonlinearity& nonlinearity() const { return F_; }
  std::size_t n_grid() const { return transform_ ? transform_->n_grid() : 0; }

  /// out = F(t, x) in coefficient space. out may not alias x.
  void apply(double t, std::span<const double> x, std::span<double> out);

 private:
  Nonlinearity F_;
  std::shared_ptr<const SineTransform> transform_;
  std::vector<double> grid_values_;
};

Field apply_nonlinearity(const SpectralModel& model, const Nonlinearity& F, double t, const Field& x);

enum class GridKind { Uniform, GeometricTowardEnd };

/// Strictly increasing time nodes starting at 0.
///
/// GeometricTowardEnd(ratio) keeps a constant step h on the bulk of the
/// interval and then shrinks the step by `ratio` per node, so that the last
/// step is close to max(min_final_step, h^2 / T). The tail therefore deepens
/// as the grid is refined, and the last step never drops below
/// min_final_step.
class TimeGrid {
 public:
  static TimeGrid uniform(double horizon, std::size_t n_nodes);
  static TimeGrid geometric_toward_end(double horizon, std::size_t n_nodes, double ratio = 0.7,
                                       double min_final_step_fraction = 1e-6);
  static TimeGrid from_nodes(std::vector<double> nodes, GridKind kind = GridKind::Uniform, double ratio = 0.0);

  const std::vector<double>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  double operator[](std::size_t k) const { return nodes_[k]; }
  double horizon() const { return nodes_.back(); }
  double dt(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }
  GridKind kind() const { return kind_; }
  double ratio() const { return ratio_; }
  /// Largest step (the bulk step for geometric grids).
  double max_step() const;
  std::size_t nearest_index(double t) const;

 private:
  TimeGrid(std::vector<double> nodes, GridKind kind, double ratio);
  std::vector<double> nodes_;
  GridKind kind_;
  double ratio_;
};

struct Path {
  TimeGrid grid;
  std::vector<Field> states;
  /// increments[k] are the J standard normals used for the step t_k -> t_{k+1}.
  std::vector<std::vector<double>> increments;
  std::string model_id;
};

/// Per-step coefficients of the exponential-Euler scheme on a fixed grid:
///   x'_j = e^{l_j dt} x_j + phi_j(dt) drift_j + sqrt(q_{j,dt}) z_j.
class MildScheme {
 public:
  MildScheme(const SpectralModel& model, const TimeGrid& grid);

  const SpectralModel& model() const { return model_; }
  const TimeGrid& grid() const { return grid_; }

  /// One step from node k. drift may be empty (treated as zero).
  void step(std::size_t k, std::span<const double> x, std::span<const double> drift, std::span<const double> z,
            std::span<double> out) const;

  double decay(std::size_t k, std::size_t j) const { return decay_[k * J_ + j]; }
  double phi(std::size_t k, std::size_t j) const { return phi_[k * J_ + j]; }
  double noise_sd(std::size_t k, std::size_t j) const { return noise_sd_[k * J_ + j]; }

 private:
  SpectralModel model_;
  TimeGrid grid_;
  std::size_t J_;
  std::vector<double> decay_, phi_, noise_sd_;
};

Field exponential_euler_step(const SpectralModel& model, const Nonlinearity& F, double t, double dt, const Field& x,
                             std::span<const double> z);

struct SimulationOptions {
  std::uint64_t path_index = 0;
  bool zero_noise = false;  // diagnostic mode: z forced to 0
};

Path simulate_path(const SpectralModel& model, const Nonlinearity& F, const Field& x0, const TimeGrid& grid,
                   std::uint64_t rng_seed, SimulationOptions options = {});

/// Re-runs stored increments through the stepper; reproduces states bit-exactly.
Path replay_path(const SpectralModel& model, const Nonlinearity& F, const Field& x0, const TimeGrid& grid,
                 std::vector<std::vector<double>> increments);

/// Simulates one path without storing it; states match simulate_path bit for bit.
/// observer(k, x_k, F(t_k, x_k)) is called at every node, the last included.
template <class Observer>
void stream_path(const MildScheme& scheme, NemytskiiOperator& op, const Field& x0, const NormalStream& stream,
                 Observer&& observer) {
  const std::size_t J = x0.size();
  const TimeGrid& grid = scheme.grid();
  Field x = x0, next(J), Fx(J);
  std::vector<double> z(J);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    op.apply(grid[k], x.coeffs, Fx.coeffs);
    observer(k, static_cast<const Field&>(x), static_cast<const Field&>(Fx));
    if (k + 1 == grid.size()) break;
    stream.normals(k, z);
    scheme.step(k, x.coeffs, Fx.coeffs, z, next.coeffs);
    if (!next.all_finite()) throw DomainError("stream_path: non-finite state");
    std::swap(x, next);
  }
}

Field sample_stationary(const SpectralModel& model, std::uint64_t rng_seed, std::uint64_t index = 0);

}  // namespace spde
