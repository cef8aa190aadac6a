#include "spde/ou_analytics.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "spde/quadrature.hpp"
#include "spde/rng.hpp"

namespace spde {

namespace {

double remaining_time(double t, double T, const char* who) {
  if (!(t < T)) throw DomainError(fmt::format("{}: requires t < T (t = {}, T = {})", who, t, T));
  const double r = T - t;
  if (r < kHorizonGuard * std::abs(T))
    throw DomainError(fmt::format("{}: density evaluation too close to horizon (T - t = {})", who, r));
  return r;
}

double checked_q_r(const SpectralModel& m, std::size_t j, double r, const char* who) {
  const double qr = m.q_t(j, r);
  if (!(qr > 0.0) || !std::isnormal(qr))
    throw DomainError(fmt::format("{}: density evaluation too close to horizon (q_{{{},r}} underflow)", who, j));
  return qr;
}

// log ptilde for one mode with remaining time r.
double log_ratio_mode(const SpectralModel& m, std::size_t j, double r, double x, double y, const char* who) {
  const double qr = checked_q_r(m, j, r, who);
  const double qinf = m.q_inf(j);
  const double mean = std::exp(m.lambda(j) * r) * x;
  // log(q_r / q_inf) = log(1 - e^{2 lambda r})
  const double log_var_ratio = std::log1p(-std::exp(2.0 * m.lambda(j) * r));
  const double d = y - mean;
  return -0.5 * log_var_ratio - d * d / (2.0 * qr) + y * y / (2.0 * qinf);
}

}  // namespace

GaussianLaw ou_transition(const SpectralModel& model, double s, const Field& x, double t) {
  if (!(t > s)) throw DomainError(fmt::format("ou_transition: requires t > s (s = {}, t = {})", s, t));
  model.check_field(x);
  return {semigroup_apply(model, t - s, x), covariance_Qt(model, t - s)};
}

double log_ptilde(const SpectralModel& model, double t, const Field& x, double T, const Field& y) {
  model.check_field(x);
  model.check_field(y);
  const double r = remaining_time(t, T, "log_ptilde");
  double s = 0.0;
  for (std::size_t j = 0; j < model.J(); ++j) s += log_ratio_mode(model, j, r, x[j], y[j], "log_ptilde");
  return s;
}

double log_ptilde_cameron_martin(const SpectralModel& model, double t, const Field& x, double T, const Field& y) {
  model.check_field(x);
  model.check_field(y);
  const double r = remaining_time(t, T, "log_ptilde_cameron_martin");
  const DiagonalOperator gamma = gamma_operator(model, r);
  double cm = 0.0;       // <Gamma^* Q_r^{-1/2} y, x> - |Gamma x|^2 / 2
  double base = 0.0;     // log dL(Z(T; t, 0))/dnu (y)
  for (std::size_t j = 0; j < model.J(); ++j) {
    const double qr = checked_q_r(model, j, r, "log_ptilde_cameron_martin");
    const double gx = gamma[j] * x[j];
    cm += gamma[j] * (y[j] / std::sqrt(qr)) * x[j] - 0.5 * gx * gx;
    base += log_ratio_mode(model, j, r, 0.0, y[j], "log_ptilde_cameron_martin");
  }
  return cm + base;
}

Field grad_log_ptilde(const SpectralModel& model, double t, const Field& x, double T, const Field& y) {
  model.check_field(x);
  model.check_field(y);
  const double r = remaining_time(t, T, "grad_log_ptilde");
  Field g(model.J());
  for (std::size_t j = 0; j < model.J(); ++j) {
    const double qr = checked_q_r(model, j, r, "grad_log_ptilde");
    const double e = std::exp(model.lambda(j) * r);
    g[j] = e * (y[j] - e * x[j]) / qr;
  }
  return g;
}

Field guided_drift(const SpectralModel& model, double t, double T, const Field& y, const Field& x) {
  Field g = grad_log_ptilde(model, t, x, T, y);
  for (std::size_t j = 0; j < model.J(); ++j) g[j] *= model.q(j);
  return g;
}

namespace {

void check_obs_var(const SpectralModel& model, std::span<const double> obs_var) {
  if (obs_var.size() != model.J())
    throw std::invalid_argument(fmt::format("obs_var has {} entries, J = {}", obs_var.size(), model.J()));
  for (double v : obs_var)
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError(fmt::format("obs_var entries must be positive (got {})", v));
}

}  // namespace

double log_h_noisy_obs(const SpectralModel& model, double t, const Field& x, double T, const Field& v,
                       std::span<const double> obs_var) {
  model.check_field(x);
  model.check_field(v);
  check_obs_var(model, obs_var);
  const double r = remaining_time(t, T, "log_h_noisy_obs");
  double s = 0.0;
  for (std::size_t j = 0; j < model.J(); ++j) {
    const double var = model.q_t(j, r) + obs_var[j];
    const double d = v[j] - std::exp(model.lambda(j) * r) * x[j];
    s += -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
  }
  return s;
}

Field grad_log_h_noisy_obs(const SpectralModel& model, double t, const Field& x, double T, const Field& v,
                           std::span<const double> obs_var) {
  model.check_field(x);
  model.check_field(v);
  check_obs_var(model, obs_var);
  const double r = remaining_time(t, T, "grad_log_h_noisy_obs");
  Field g(model.J());
  for (std::size_t j = 0; j < model.J(); ++j) {
    const double var = model.q_t(j, r) + obs_var[j];
    const double e = std::exp(model.lambda(j) * r);
    g[j] = e * (v[j] - e * x[j]) / var;
  }
  return g;
}

OuBridge::OuBridge(const SpectralModel& model, Field x0, double T, Field y)
    : model_(model), x0_(std::move(x0)), T_(T), y_(std::move(y)) {
  model_.check_field(x0_);
  model_.check_field(y_);
  if (!(T_ > 0.0)) throw DomainError("OuBridge: horizon must be positive");
}

void OuBridge::conditional(std::size_t j, double t0, double a, double t1, double& mean, double& var) const {
  if (t1 >= T_) {
    mean = y_[j];
    var = 0.0;
    return;
  }
  const double lam = model_.lambda(j);
  const double d = t1 - t0;
  const double r = T_ - t1;
  const double prior_mean = std::exp(lam * d) * a;
  const double prior_var = model_.q_t(j, d);
  const double e = std::exp(lam * r);
  const double lik_var = model_.q_t(j, r);
  const double precision = 1.0 / prior_var + e * e / lik_var;
  var = 1.0 / precision;
  mean = var * (prior_mean / prior_var + e * y_[j] / lik_var);
}

GaussianLaw OuBridge::marginal_mean_var(double t) const {
  if (!(t >= 0.0 && t <= T_)) throw DomainError(fmt::format("OuBridge: t = {} outside [0, {}]", t, T_));
  GaussianLaw law{Field(model_.J()), DiagonalOperator{std::vector<double>(model_.J())}};
  for (std::size_t j = 0; j < model_.J(); ++j) {
    if (t == 0.0) {
      law.mean[j] = x0_[j];
      continue;
    }
    conditional(j, 0.0, x0_[j], t, law.mean[j], law.var.diag[j]);
  }
  return law;
}

Path OuBridge::sample(const TimeGrid& grid, std::uint64_t rng_seed, std::uint64_t path_index) const {
  if (grid.horizon() != T_)
    throw DomainError(fmt::format("ou_bridge: grid horizon {} differs from T = {}", grid.horizon(), T_));
  const std::size_t J = model_.J();
  const NormalStream stream(rng_seed, StreamTag::Increments, path_index);
  Path path{grid, {}, std::vector<std::vector<double>>(grid.size() - 1, std::vector<double>(J)),
            model_.identifier()};
  path.states.reserve(grid.size());
  path.states.push_back(x0_);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    auto& z = path.increments[k];
    stream.normals(k, z);
    const Field& x = path.states.back();
    Field next(J);
    for (std::size_t j = 0; j < J; ++j) {
      double mean = 0.0, var = 0.0;
      conditional(j, grid[k], x[j], grid[k + 1], mean, var);
      next[j] = (var > 0.0) ? mean + std::sqrt(var) * z[j] : mean;
    }
    path.states.push_back(std::move(next));
  }
  return path;
}

Path ou_bridge_exact_sample(const SpectralModel& model, const Field& x0, double T, const Field& y,
                            const TimeGrid& grid, std::uint64_t rng_seed, std::uint64_t path_index) {
  return OuBridge(model, x0, T, y).sample(grid, rng_seed, path_index);
}

double log_ptilde_mode(const SpectralModel& model, std::size_t mode, double s, double x, double t, double y) {
  if (mode >= model.J()) throw std::invalid_argument("log_ptilde_mode: mode out of range");
  const double r = remaining_time(s, t, "log_ptilde_mode");
  return log_ratio_mode(model, mode, r, x, y, "log_ptilde_mode");
}

double chapman_kolmogorov_residual(const SpectralModel& model, std::size_t mode, double s, double x, double r,
                                   double t, double y, std::size_t nodes) {
  if (!(s < r && r < t))
    throw DomainError(fmt::format("chapman_kolmogorov_residual: requires s < r < t (got {}, {}, {})", s, r, t));
  if (mode >= model.J()) throw std::invalid_argument("chapman_kolmogorov_residual: mode out of range");
  const double direct = std::exp(log_ptilde_mode(model, mode, s, x, t, y));
  // ptilde(s,x;r,z) nu(dz) is the law of Z(r; s, x).
  const double mean = std::exp(model.lambda(mode) * (r - s)) * x;
  const double var = model.q_t(mode, r - s);
  const double composed = gaussian_expectation(
      mean, var, [&](double z) { return std::exp(log_ptilde_mode(model, mode, r, z, t, y)); }, nodes);
  return std::abs(direct - composed);
}

}  // namespace spde
