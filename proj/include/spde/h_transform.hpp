#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "spde/forward_sim.hpp"
#include "spde/spectral_core.hpp"
#include "spde/stats.hpp"

namespace spde {

/// What is known about (Lh)/h for an h-function.
enum class GeneratorRatio { Available, Harmonic, Unavailable };

/// A positive space-time function h driving the change of measure
/// dP^h = E^h dP. Implementations must be safe to call concurrently.
class HFunction {
 public:
  virtual ~HFunction() = default;

  virtual double log_h(double t, const Field& x) const = 0;
  virtual Field grad_log_h(double t, const Field& x) const = 0;
  virtual GeneratorRatio generator_ratio() const = 0;
  /// (Lh / h)(t, x); zero when harmonic, throws when unavailable.
  virtual double lh_over_h(double t, const Field& x) const;
  virtual double horizon() const { return std::numeric_limits<double>::infinity(); }
};

/// h == 1.
class UnitH final : public HFunction {
 public:
  explicit UnitH(std::size_t J) : J_(J) {}
  double log_h(double, const Field&) const override { return 0.0; }
  Field grad_log_h(double, const Field&) const override { return Field(J_); }
  GeneratorRatio generator_ratio() const override { return GeneratorRatio::Harmonic; }

 private:
  std::size_t J_;
};

/// h~(t, x) = ptilde(t, x; T, y), the linear-process transition density to y.
/// Harmonic for the linear dynamics; with a nonlinearity F the ratio is
/// Lh~/h~ = <F(t, x), D_x log h~(t, x)>.
class GuidingH final : public HFunction {
 public:
  GuidingH(const SpectralModel& model, const Nonlinearity& F, double T, Field y);

  double log_h(double t, const Field& x) const override;
  Field grad_log_h(double t, const Field& x) const override;
  GeneratorRatio generator_ratio() const override;
  double lh_over_h(double t, const Field& x) const override;
  double horizon() const override { return T_; }

 private:
  SpectralModel model_;
  NemytskiiOperator op_;
  double T_;
  Field y_;
};

/// h(t, x) = integral ptilde(t, x; T, u) N(v; u, obs_var) nu(du).
class NoisyObsH final : public HFunction {
 public:
  NoisyObsH(const SpectralModel& model, const Nonlinearity& F, double T, Field v, std::vector<double> obs_var);

  double log_h(double t, const Field& x) const override;
  Field grad_log_h(double t, const Field& x) const override;
  GeneratorRatio generator_ratio() const override;
  double lh_over_h(double t, const Field& x) const override;
  double horizon() const override { return T_; }

 private:
  SpectralModel model_;
  NemytskiiOperator op_;
  double T_;
  Field v_;
  std::vector<double> obs_var_;
};

/// Max relative deviation between grad_log_h and central finite differences
/// of log_h over random probes |x| <= radius at the given times.
double gradient_self_check(const HFunction& h, std::size_t J, std::span<const double> times, std::size_t n_probes,
                           double radius, std::uint64_t seed, double step = 1e-5);

enum class Phase { Sin, Cos };

/// phi(t, x) = sin or cos of (<x, a> + c t).
struct ExpTestFunction {
  Field a;
  double c = 0.0;
  Phase phase = Phase::Sin;

  double value(double t, const Field& x) const;
};

/// Kolmogorov operator L0 applied to an exponential test function.
double l0_exp_test(const SpectralModel& model, const Nonlinearity& F, const ExpTestFunction& phi, double t,
                   const Field& x);
/// Same with F(t, x) supplied by the caller.
double l0_exp_test_given(const SpectralModel& model, const ExpTestFunction& phi, double t, const Field& x,
                         const Field& Fx);

struct DynkinStatistics {
  std::vector<double> times;
  std::vector<double> estimate;  // e(t) = mean[phi(t,X) - int_0^t L0 phi] - phi(0, x0)
  std::vector<double> stderr_;
  double max_statistic = 0.0;    // max_t |e(t)| / stderr(t); 0 where stderr == 0 and e == 0
};

/// Per-path Dynkin residual phi(t_k, X_k) - int_0^{t_k} L0 phi ds - phi(0, x0)
/// (trapezoid in time) at the requested node indices. Fx[k] = F(t_k, X_k).
std::vector<double> dynkin_path_values(const SpectralModel& model, const ExpTestFunction& phi, const TimeGrid& grid,
                                       std::span<const Field> states, std::span<const Field> Fx,
                                       std::span<const std::size_t> output_nodes);

DynkinStatistics dynkin_residual(std::span<const Path> paths, const ExpTestFunction& phi, const SpectralModel& model,
                                 const Nonlinearity& F, std::span<const double> output_times);

/// Streaming form for large ensembles: simulates N paths (stream per path
/// index) and evaluates several test functions on the same paths.
std::vector<DynkinStatistics> dynkin_residual_simulated(const SpectralModel& model, const Nonlinearity& F,
                                                        const Field& x0, const TimeGrid& grid,
                                                        std::span<const ExpTestFunction> phis, std::size_t n_paths,
                                                        std::uint64_t seed, std::span<const double> output_times,
                                                        unsigned threads);

DynkinStatistics summarize_dynkin(std::span<const double> times, std::span<const std::vector<double>> per_path);

/// log E^h(t_k) = log h(t_k, X_k) - log h(0, x0) - int_0^{t_k} (Lh/h) ds.
std::vector<double> log_exp_martingale_from_definition(const Path& path, const HFunction& h);
std::vector<double> exp_martingale_from_definition(const Path& path, const HFunction& h);

/// log E^h(t_k) = M^h(t_k) - [M^h]_{t_k} / 2 with
///   M^h = sum <sqrt(Q) D log h(t_i, X_i), dW_i>,  dW_{i,j} = sqrt(dt_i) z_{i,j}.
std::vector<double> log_exp_martingale_from_girsanov(const Path& path, const HFunction& h,
                                                     const SpectralModel& model);
std::vector<double> exp_martingale_from_girsanov(const Path& path, const HFunction& h, const SpectralModel& model);

/// Monte Carlo estimate of E[exp(0.5 int_0^S |sqrt(Q) D log h|^2 dt)]. Diagnostic only.
MeanEstimate novikov_estimate(std::span<const Path> paths, const HFunction& h, const SpectralModel& model, double S);
double novikov_path_value(const Path& path, const HFunction& h, const SpectralModel& model, double S);

/// Empirical Lipschitz constant of x -> sqrt(Q) D log h(t, x) over random pairs
/// in the ball of the given radius, sup over the time grid. Diagnostic only.
double lipschitz_probe(const HFunction& h, const SpectralModel& model, std::span<const double> t_grid,
                       std::size_t n_pairs, double radius, std::uint64_t seed);

/// Closed-form counterpart for h~: sup_t max_j sqrt(q_j) e^{2 l_j (T-t)} / q_{j,T-t}.
double guiding_lipschitz_constant(const SpectralModel& model, double T, std::span<const double> t_grid);

/// z-statistic of E[(M(t) - M(s)) g] = 0 for an F_s-measurable probe g.
double increment_orthogonality(std::span<const double> later, std::span<const double> earlier,
                               std::span<const double> probe);

}  // namespace spde
