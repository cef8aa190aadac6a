#pragma once

#include <cstdint>
#include <functional>
#include <variant>
#include <vector>

#include "spde/forward_sim.hpp"
#include "spde/ou_analytics.hpp"
#include "spde/spectral_core.hpp"

namespace spde {

enum class Conditioning { Exact, NoisyObs };

struct GuidedSpec {
  Field y;
  double T = 1.0;
  Conditioning conditioning = Conditioning::Exact;
  std::vector<double> obs_var;  // per mode, NoisyObs only
  double weight_cutoff = 0.95;  // S, the time at which weights are read off

  void validate(const SpectralModel& model) const;
};

struct WeightedPath {
  Path path;
  double log_weight = 0.0;
  double weight_time = 0.0;
};

/// Guided process X° = mild solution with drift A x + F(t, x) + Q D_x log h(t, x),
/// h = ptilde(., .; T, y) (Exact) or the noisy-observation h (NoisyObs).
/// Immutable once built; share it between threads.
class GuidedSampler {
 public:
  GuidedSampler(const SpectralModel& model, const Nonlinearity& F, GuidedSpec spec, const TimeGrid& grid);

  const GuidedSpec& spec() const { return spec_; }
  const TimeGrid& grid() const { return scheme_.grid(); }

  WeightedPath simulate(const Field& x0, std::uint64_t rng_seed, std::uint64_t path_index = 0,
                        bool zero_noise = false) const;

  /// Streams one guided path: observer(k, x_k) at every node (after the pin
  /// for Exact conditioning). Returns log weights at each requested cutoff.
  std::vector<double> stream(const Field& x0, std::uint64_t rng_seed, std::uint64_t path_index,
                             std::span<const double> cutoffs,
                             const std::function<void(std::size_t, const Field&)>& observer) const;

  /// Recomputes the log weight of a stored guided path at cutoff S.
  double log_weight(const Path& path, double S) const;

  /// Exact mean and variance of the discrete scheme at node k, F = 0 only.
  /// Separates the time-discretization bias from Monte Carlo noise.
  GaussianLaw linear_scheme_moments(const Field& x0, std::size_t k) const;

  /// D_x log h at node k.
  void guiding_gradient(std::size_t k, std::span<const double> x, std::span<double> out) const;

 private:
  double weight_from_integrand(std::span<const double> integrand, double S) const;

  SpectralModel model_;
  Nonlinearity F_;
  GuidedSpec spec_;
  MildScheme scheme_;
  std::shared_ptr<const NemytskiiOperator> op_;
  // Per node k (r = T - t_k > 0): e^{l_j r} and 1 / (q_{j,r} [+ obs_var_j]).
  std::vector<double> pull_, inv_var_;
  std::size_t integrated_steps_;
};

WeightedPath simulate_guided(const SpectralModel& model, const Nonlinearity& F, const Field& x0,
                             const GuidedSpec& spec, const TimeGrid& grid, std::uint64_t rng_seed,
                             std::uint64_t path_index = 0);

/// xi = delta_y.
Field endpoint_sampler_bridge(const Field& y);

/// Gaussian tilt q(y) nu(dy) = N(mean, diag(var)) with 0 < var_j <= q_{j,inf}.
struct TiltSpec {
  Field mean;
  std::vector<double> var;

  static TiltSpec none(const SpectralModel& model);
  void validate(const SpectralModel& model) const;
};

Field endpoint_sampler_tilted(const SpectralModel& model, const TiltSpec& tilt, std::uint64_t rng_seed,
                              std::uint64_t index = 0);

using EndpointSampler = std::variant<Field, TiltSpec>;

Field draw_endpoint(const SpectralModel& model, const EndpointSampler& sampler, std::uint64_t rng_seed,
                    std::uint64_t index);

/// Two-stage sampling: y_i from the endpoint sampler, then a guided path to y_i.
std::vector<WeightedPath> sample_conditioned(const SpectralModel& model, const Nonlinearity& F, const Field& x0,
                                             const EndpointSampler& endpoint, double T, const TimeGrid& grid,
                                             std::uint64_t rng_seed, std::size_t N, double weight_cutoff,
                                             unsigned threads = 1);

struct WeightedEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  double ess = 0.0;
};

WeightedEstimate self_normalized_estimate(std::span<const double> log_weights, std::span<const double> values);
WeightedEstimate self_normalized_estimate(std::span<const WeightedPath> wpaths,
                                          const std::function<double(const Path&)>& g);

}  // namespace spde
