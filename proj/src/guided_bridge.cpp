#include "spde/guided_bridge.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "spde/parallel.hpp"
#include "spde/rng.hpp"
#include "spde/stats.hpp"

namespace spde {

void GuidedSpec::validate(const SpectralModel& model) const {
  model.check_field(y);
  if (!y.all_finite()) throw DomainError("GuidedSpec: target y must be finite");
  if (!(T > 0.0)) throw DomainError("GuidedSpec: horizon T must be positive");
  if (!(weight_cutoff > 0.0 && weight_cutoff < T))
    throw DomainError(fmt::format("GuidedSpec: weight cutoff S = {} must lie in (0, T = {})", weight_cutoff, T));
  if (conditioning == Conditioning::NoisyObs) {
    if (obs_var.size() != model.J()) throw std::invalid_argument("GuidedSpec: obs_var must have J entries");
    for (double v : obs_var)
      if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("GuidedSpec: obs_var entries must be positive");
  }
}

GuidedSampler::GuidedSampler(const SpectralModel& model, const Nonlinearity& F, GuidedSpec spec,
                             const TimeGrid& grid)
    : model_(model),
      F_(F),
      spec_(std::move(spec)),
      scheme_(model, grid),
      op_(std::make_shared<const NemytskiiOperator>(model, F)) {
  spec_.validate(model_);
  if (std::abs(grid.horizon() - spec_.T) > 1e-12 * spec_.T)
    throw DomainError(fmt::format("guided: grid horizon {} differs from T = {}", grid.horizon(), spec_.T));
  const bool exact = spec_.conditioning == Conditioning::Exact;
  if (exact && grid.kind() != GridKind::GeometricTowardEnd)
    throw DomainError("guided: exact conditioning needs a grid that refines geometrically toward T");

  const std::size_t n = grid.size();
  const std::size_t J = model_.J();
  const std::size_t defined = exact ? n - 1 : n;
  pull_.assign(n * J, 0.0);
  inv_var_.assign(n * J, 0.0);
  for (std::size_t k = 0; k < defined; ++k) {
    const double r = spec_.T - grid[k];
    for (std::size_t j = 0; j < J; ++j) {
      double var = r > 0.0 ? model_.q_t(j, r) : 0.0;
      if (!exact) var += spec_.obs_var[j];
      if (!(var > 0.0) || !std::isnormal(var))
        throw DomainError(fmt::format("guided: density evaluation too close to horizon at node {}", k));
      pull_[k * J + j] = std::exp(model_.lambda(j) * r);
      inv_var_[k * J + j] = 1.0 / var;
    }
  }
  integrated_steps_ = n - 1;
}

void GuidedSampler::guiding_gradient(std::size_t k, std::span<const double> x, std::span<double> out) const {
  const std::size_t J = model_.J();
  const double* e = &pull_[k * J];
  const double* iv = &inv_var_[k * J];
  for (std::size_t j = 0; j < J; ++j) out[j] = e[j] * (spec_.y[j] - e[j] * x[j]) * iv[j];
}

double GuidedSampler::weight_from_integrand(std::span<const double> integrand, double S) const {
  if (!(S > 0.0 && S < spec_.T)) throw DomainError(fmt::format("guided: weight cutoff {} outside (0, T)", S));
  return trapezoid_until(grid().nodes(), integrand, S);
}

std::vector<double> GuidedSampler::stream(const Field& x0, std::uint64_t rng_seed, std::uint64_t path_index,
                                          std::span<const double> cutoffs,
                                          const std::function<void(std::size_t, const Field&)>& observer) const {
  model_.check_field(x0);
  const std::size_t J = model_.J();
  const TimeGrid& g = grid();
  const std::size_t n = g.size();
  const bool exact = spec_.conditioning == Conditioning::Exact;
  const bool has_F = !F_.is_zero();
  NemytskiiOperator op = *op_;
  const NormalStream normals(rng_seed, StreamTag::Increments, path_index);

  Field x = x0, next(J), Fx(J), grad(J), drift(J);
  std::vector<double> z(J), integrand(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (k + 1 == n && exact) {
      x = spec_.y;
      integrand[k] = integrand[k - 1];
      if (observer) observer(k, x);
      break;
    }
    op.apply(g[k], x.coeffs, Fx.coeffs);
    guiding_gradient(k, x.coeffs, grad.coeffs);
    double w = 0.0;
    if (has_F)
      for (std::size_t j = 0; j < J; ++j) w += Fx[j] * grad[j];
    integrand[k] = w;
    if (observer) observer(k, x);
    if (k + 1 == n) break;
    for (std::size_t j = 0; j < J; ++j) drift[j] = Fx[j] + model_.q(j) * grad[j];
    normals.normals(k, z);
    scheme_.step(k, x.coeffs, drift.coeffs, z, next.coeffs);
    if (!next.all_finite()) throw DomainError(fmt::format("guided: non-finite state at t = {}", g[k + 1]));
    std::swap(x, next);
  }
  std::vector<double> weights;
  weights.reserve(cutoffs.size());
  for (double S : cutoffs) weights.push_back(weight_from_integrand(integrand, S));
  return weights;
}

WeightedPath GuidedSampler::simulate(const Field& x0, std::uint64_t rng_seed, std::uint64_t path_index,
                                     bool zero_noise) const {
  model_.check_field(x0);
  const std::size_t J = model_.J();
  const TimeGrid& g = grid();
  const std::size_t n = g.size();
  const bool exact = spec_.conditioning == Conditioning::Exact;
  const bool has_F = !F_.is_zero();
  NemytskiiOperator op = *op_;
  const NormalStream normals(rng_seed, StreamTag::Increments, path_index);

  WeightedPath wp{Path{g, {}, std::vector<std::vector<double>>(n - 1, std::vector<double>(J, 0.0)),
                       model_.identifier()},
                  0.0, spec_.weight_cutoff};
  wp.path.states.reserve(n);
  wp.path.states.push_back(x0);
  Field Fx(J), grad(J), drift(J);
  std::vector<double> integrand(n, 0.0);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const Field& x = wp.path.states.back();
    op.apply(g[k], x.coeffs, Fx.coeffs);
    guiding_gradient(k, x.coeffs, grad.coeffs);
    double w = 0.0;
    if (has_F)
      for (std::size_t j = 0; j < J; ++j) w += Fx[j] * grad[j];
    integrand[k] = w;
    for (std::size_t j = 0; j < J; ++j) drift[j] = Fx[j] + model_.q(j) * grad[j];
    auto& z = wp.path.increments[k];
    if (!zero_noise) normals.normals(k, z);
    Field next(J);
    scheme_.step(k, x.coeffs, drift.coeffs, z, next.coeffs);
    if (!next.all_finite()) throw DomainError(fmt::format("guided: non-finite state at t = {}", g[k + 1]));
    wp.path.states.push_back(std::move(next));
  }
  if (exact) {
    wp.path.states.back() = spec_.y;
    integrand[n - 1] = integrand[n - 2];
  } else {
    const Field& x = wp.path.states.back();
    op.apply(g[n - 1], x.coeffs, Fx.coeffs);
    guiding_gradient(n - 1, x.coeffs, grad.coeffs);
    double w = 0.0;
    if (has_F)
      for (std::size_t j = 0; j < J; ++j) w += Fx[j] * grad[j];
    integrand[n - 1] = w;
  }
  wp.log_weight = weight_from_integrand(integrand, spec_.weight_cutoff);
  return wp;
}

double GuidedSampler::log_weight(const Path& path, double S) const {
  const std::size_t n = grid().size();
  if (path.states.size() != n) throw std::invalid_argument("log_weight: path does not match the sampler grid");
  if (F_.is_zero()) return weight_from_integrand(std::vector<double>(n, 0.0), S);
  const std::size_t J = model_.J();
  const bool exact = spec_.conditioning == Conditioning::Exact;
  NemytskiiOperator op = *op_;
  Field Fx(J), grad(J);
  std::vector<double> integrand(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (exact && k + 1 == n) {
      integrand[k] = integrand[k - 1];
      break;
    }
    op.apply(grid()[k], path.states[k].coeffs, Fx.coeffs);
    guiding_gradient(k, path.states[k].coeffs, grad.coeffs);
    integrand[k] = dot(Fx, grad);
  }
  return weight_from_integrand(integrand, S);
}

GaussianLaw GuidedSampler::linear_scheme_moments(const Field& x0, std::size_t k) const {
  if (!F_.is_zero()) throw std::logic_error("linear_scheme_moments: only defined for F = 0");
  model_.check_field(x0);
  const std::size_t J = model_.J();
  const std::size_t n = grid().size();
  if (k >= n) throw std::invalid_argument("linear_scheme_moments: node out of range");
  GaussianLaw law{x0, DiagonalOperator{std::vector<double>(J, 0.0)}};
  if (spec_.conditioning == Conditioning::Exact && k + 1 == n) return {spec_.y, law.var};
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      const double e = pull_[i * J + j];
      const double iv = inv_var_[i * J + j];
      const double gain = scheme_.phi(i, j) * model_.q(j) * e * iv;
      const double a = scheme_.decay(i, j) - gain * e;
      const double sd = scheme_.noise_sd(i, j);
      law.mean[j] = a * law.mean[j] + gain * spec_.y[j];
      law.var.diag[j] = a * a * law.var.diag[j] + sd * sd;
    }
  }
  return law;
}

WeightedPath simulate_guided(const SpectralModel& model, const Nonlinearity& F, const Field& x0,
                             const GuidedSpec& spec, const TimeGrid& grid, std::uint64_t rng_seed,
                             std::uint64_t path_index) {
  return GuidedSampler(model, F, spec, grid).simulate(x0, rng_seed, path_index);
}

Field endpoint_sampler_bridge(const Field& y) { return y; }

TiltSpec TiltSpec::none(const SpectralModel& model) {
  TiltSpec t{Field(model.J()), std::vector<double>(model.J())};
  for (std::size_t j = 0; j < model.J(); ++j) t.var[j] = model.q_inf(j);
  return t;
}

void TiltSpec::validate(const SpectralModel& model) const {
  model.check_field(mean);
  if (var.size() != model.J()) throw std::invalid_argument("TiltSpec: var must have J entries");
  for (std::size_t j = 0; j < var.size(); ++j) {
    if (!(var[j] > 0.0) || !std::isfinite(var[j]))
      throw DomainError(fmt::format("TiltSpec: var[{}] = {} must be positive", j, var[j]));
    if (var[j] > model.q_inf(j) * (1.0 + 1e-12))
      throw DomainError(fmt::format("TiltSpec: var[{}] = {} exceeds q_inf = {}", j, var[j], model.q_inf(j)));
  }
}

Field endpoint_sampler_tilted(const SpectralModel& model, const TiltSpec& tilt, std::uint64_t rng_seed,
                              std::uint64_t index) {
  tilt.validate(model);
  const NormalStream stream(rng_seed, StreamTag::Endpoint, index);
  Field y(model.J());
  stream.normals(0, y.coeffs);
  for (std::size_t j = 0; j < model.J(); ++j) y[j] = tilt.mean[j] + std::sqrt(tilt.var[j]) * y[j];
  return y;
}

Field draw_endpoint(const SpectralModel& model, const EndpointSampler& sampler, std::uint64_t rng_seed,
                    std::uint64_t index) {
  if (const auto* y = std::get_if<Field>(&sampler)) return endpoint_sampler_bridge(*y);
  return endpoint_sampler_tilted(model, std::get<TiltSpec>(sampler), rng_seed, index);
}

std::vector<WeightedPath> sample_conditioned(const SpectralModel& model, const Nonlinearity& F, const Field& x0,
                                             const EndpointSampler& endpoint, double T, const TimeGrid& grid,
                                             std::uint64_t rng_seed, std::size_t N, double weight_cutoff,
                                             unsigned threads) {
  if (N == 0) throw std::invalid_argument("sample_conditioned: N must be >= 1");
  if (const auto* tilt = std::get_if<TiltSpec>(&endpoint)) tilt->validate(model);
  return map_indices(N, threads, [&](std::size_t i) {
    GuidedSpec spec{draw_endpoint(model, endpoint, rng_seed, i), T, Conditioning::Exact, {}, weight_cutoff};
    return GuidedSampler(model, F, std::move(spec), grid).simulate(x0, rng_seed, i);
  });
}

WeightedEstimate self_normalized_estimate(std::span<const double> log_weights, std::span<const double> values) {
  if (log_weights.empty() || log_weights.size() != values.size())
    throw std::invalid_argument("self_normalized_estimate: need matching nonempty inputs");
  double max_lw = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) {
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity())
      throw DomainError("self_normalized_estimate: log weights must be finite");
    max_lw = std::max(max_lw, lw);
  }
  if (max_lw == -std::numeric_limits<double>::infinity())
    throw DomainError("self_normalized_estimate: all weights are zero");
  std::vector<double> w(log_weights.size());
  CompensatedSum sw, sw2, swg;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(log_weights[i] - max_lw);
    sw.add(w[i]);
    sw2.add(w[i] * w[i]);
    swg.add(w[i] * values[i]);
  }
  const double total = sw.value();
  const double est = swg.value() / total;
  CompensatedSum var;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double wi = w[i] / total;
    var.add(wi * wi * (values[i] - est) * (values[i] - est));
  }
  return {est, std::sqrt(var.value()), total * total / sw2.value()};
}

WeightedEstimate self_normalized_estimate(std::span<const WeightedPath> wpaths,
                                          const std::function<double(const Path&)>& g) {
  std::vector<double> lw, vals;
  lw.reserve(wpaths.size());
  vals.reserve(wpaths.size());
  for (const auto& wp : wpaths) {
    lw.push_back(wp.log_weight);
    vals.push_back(g(wp.path));
  }
  return self_normalized_estimate(lw, vals);
}

}  // namespace spde
