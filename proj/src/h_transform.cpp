#include "spde/h_transform.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "spde/ou_analytics.hpp"
#include "spde/parallel.hpp"
#include "spde/rng.hpp"

namespace spde {

double HFunction::lh_over_h(double, const Field&) const {
  switch (generator_ratio()) {
    case GeneratorRatio::Harmonic:
      return 0.0;
    case GeneratorRatio::Unavailable:
      throw std::logic_error("Lh/h is unavailable for this h-function");
    case GeneratorRatio::Available:
      break;
  }
  throw std::logic_error("h-function declares Lh/h available but does not implement it");
}

GuidingH::GuidingH(const SpectralModel& model, const Nonlinearity& F, double T, Field y)
    : model_(model), op_(model, F), T_(T), y_(std::move(y)) {
  model_.check_field(y_);
  if (!(T_ > 0.0)) throw DomainError("GuidingH: horizon must be positive");
}

double GuidingH::log_h(double t, const Field& x) const { return log_ptilde(model_, t, x, T_, y_); }

Field GuidingH::grad_log_h(double t, const Field& x) const { return grad_log_ptilde(model_, t, x, T_, y_); }

GeneratorRatio GuidingH::generator_ratio() const {
  return op_.nonlinearity().is_zero() ? GeneratorRatio::Harmonic : GeneratorRatio::Available;
}

double GuidingH::lh_over_h(double t, const Field& x) const {
  if (op_.nonlinearity().is_zero()) return 0.0;
  NemytskiiOperator op = op_;
  Field Fx(model_.J());
  op.apply(t, x.coeffs, Fx.coeffs);
  return dot(Fx, grad_log_h(t, x));
}

NoisyObsH::NoisyObsH(const SpectralModel& model, const Nonlinearity& F, double T, Field v,
                     std::vector<double> obs_var)
    : model_(model), op_(model, F), T_(T), v_(std::move(v)), obs_var_(std::move(obs_var)) {
  model_.check_field(v_);
  if (!(T_ > 0.0)) throw DomainError("NoisyObsH: horizon must be positive");
  if (obs_var_.size() != model_.J()) throw std::invalid_argument("NoisyObsH: obs_var length differs from J");
  for (double s : obs_var_)
    if (!(s > 0.0)) throw DomainError("NoisyObsH: obs_var entries must be positive");
}

double NoisyObsH::log_h(double t, const Field& x) const { return log_h_noisy_obs(model_, t, x, T_, v_, obs_var_); }

Field NoisyObsH::grad_log_h(double t, const Field& x) const {
  return grad_log_h_noisy_obs(model_, t, x, T_, v_, obs_var_);
}

GeneratorRatio NoisyObsH::generator_ratio() const {
  return op_.nonlinearity().is_zero() ? GeneratorRatio::Harmonic : GeneratorRatio::Available;
}

double NoisyObsH::lh_over_h(double t, const Field& x) const {
  if (op_.nonlinearity().is_zero()) return 0.0;
  NemytskiiOperator op = op_;
  Field Fx(model_.J());
  op.apply(t, x.coeffs, Fx.coeffs);
  return dot(Fx, grad_log_h(t, x));
}

double gradient_self_check(const HFunction& h, std::size_t J, std::span<const double> times, std::size_t n_probes,
                           double radius, std::uint64_t seed, double step) {
  double worst = 0.0;
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    const double t = times[ti];
    for (std::size_t p = 0; p < n_probes; ++p) {
      const NormalStream stream(seed, StreamTag::Auxiliary, ti * n_probes + p);
      Field x(J);
      stream.normals(0, x.coeffs);
      const double nx = norm(x);
      const double scale = nx > 0.0 ? radius * stream.uniform(1, 0) / nx : 0.0;
      for (double& v : x.coeffs) v *= scale;
      const Field g = h.grad_log_h(t, x);
      const double gnorm = std::max(norm(g), 1e-12);
      for (std::size_t j = 0; j < J; ++j) {
        Field xp = x, xm = x;
        xp[j] += step;
        xm[j] -= step;
        const double fd = (h.log_h(t, xp) - h.log_h(t, xm)) / (2.0 * step);
        worst = std::max(worst, std::abs(fd - g[j]) / std::max(std::abs(g[j]), gnorm));
      }
    }
  }
  return worst;
}

double ExpTestFunction::value(double t, const Field& x) const {
  const double theta = dot(x, a) + c * t;
  return phase == Phase::Sin ? std::sin(theta) : std::cos(theta);
}

double l0_exp_test_given(const SpectralModel& model, const ExpTestFunction& phi, double t, const Field& x,
                         const Field& Fx) {
  model.check_field(phi.a);
  double xa = 0.0, x_Aa = 0.0, Fa = 0.0, qaa = 0.0;
  for (std::size_t j = 0; j < model.J(); ++j) {
    const double a = phi.a[j];
    xa += x[j] * a;
    x_Aa += x[j] * model.lambda(j) * a;
    Fa += Fx[j] * a;
    qaa += model.q(j) * a * a;
  }
  const double theta = xa + phi.c * t;
  const double s = std::sin(theta), c = std::cos(theta);
  const double transport = x_Aa + Fa;
  if (phi.phase == Phase::Sin) return phi.c * c + c * transport - 0.5 * s * qaa;
  return -phi.c * s - s * transport - 0.5 * c * qaa;
}

double l0_exp_test(const SpectralModel& model, const Nonlinearity& F, const ExpTestFunction& phi, double t,
                   const Field& x) {
  model.check_field(x);
  return l0_exp_test_given(model, phi, t, x, apply_nonlinearity(model, F, t, x));
}

std::vector<double> dynkin_path_values(const SpectralModel& model, const ExpTestFunction& phi, const TimeGrid& grid,
                                       std::span<const Field> states, std::span<const Field> Fx,
                                       std::span<const std::size_t> output_nodes) {
  if (states.size() != grid.size() || Fx.size() != grid.size())
    throw std::invalid_argument("dynkin_path_values: states/grid size mismatch");
  const double phi0 = phi.value(0.0, states[0]);
  std::vector<double> out(output_nodes.size());
  double integral = 0.0;
  double prev = l0_exp_test_given(model, phi, grid[0], states[0], Fx[0]);
  std::size_t next_out = 0;
  for (std::size_t k = 0; k < grid.size() && next_out < output_nodes.size(); ++k) {
    if (k > 0) {
      const double cur = l0_exp_test_given(model, phi, grid[k], states[k], Fx[k]);
      integral += 0.5 * grid.dt(k - 1) * (prev + cur);
      prev = cur;
    }
    while (next_out < output_nodes.size() && output_nodes[next_out] == k) {
      out[next_out] = phi.value(grid[k], states[k]) - integral - phi0;
      ++next_out;
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> output_nodes_for(const TimeGrid& grid, std::span<const double> times) {
  std::vector<std::size_t> nodes;
  for (double t : times) {
    if (t < 0.0 || t > grid.horizon()) throw DomainError(fmt::format("output time {} outside the grid", t));
    nodes.push_back(grid.nearest_index(t));
  }
  if (!std::is_sorted(nodes.begin(), nodes.end())) throw std::invalid_argument("output times must be sorted");
  return nodes;
}

}  // namespace

DynkinStatistics summarize_dynkin(std::span<const double> times, std::span<const std::vector<double>> per_path) {
  if (per_path.empty()) throw std::invalid_argument("dynkin_residual: empty path list");
  DynkinStatistics stats;
  stats.times.assign(times.begin(), times.end());
  std::vector<double> column(per_path.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t p = 0; p < per_path.size(); ++p) column[p] = per_path[p][i];
    const MeanEstimate m = mean_estimate(column);
    stats.estimate.push_back(m.mean);
    stats.stderr_.push_back(m.stderr_);
    double stat = 0.0;
    if (m.stderr_ > 0.0)
      stat = std::abs(m.mean) / m.stderr_;
    else if (m.mean != 0.0)
      stat = std::numeric_limits<double>::infinity();
    stats.max_statistic = std::max(stats.max_statistic, stat);
  }
  return stats;
}

DynkinStatistics dynkin_residual(std::span<const Path> paths, const ExpTestFunction& phi, const SpectralModel& model,
                                 const Nonlinearity& F, std::span<const double> output_times) {
  if (paths.empty()) throw std::invalid_argument("dynkin_residual: empty path list");
  NemytskiiOperator op(model, F);
  std::vector<std::vector<double>> per_path;
  per_path.reserve(paths.size());
  for (const Path& path : paths) {
    const auto nodes = output_nodes_for(path.grid, output_times);
    std::vector<Field> Fx(path.states.size(), Field(model.J()));
    for (std::size_t k = 0; k < path.states.size(); ++k) op.apply(path.grid[k], path.states[k].coeffs, Fx[k].coeffs);
    per_path.push_back(dynkin_path_values(model, phi, path.grid, path.states, Fx, nodes));
  }
  return summarize_dynkin(output_times, per_path);
}

std::vector<DynkinStatistics> dynkin_residual_simulated(const SpectralModel& model, const Nonlinearity& F,
                                                        const Field& x0, const TimeGrid& grid,
                                                        std::span<const ExpTestFunction> phis, std::size_t n_paths,
                                                        std::uint64_t seed, std::span<const double> output_times,
                                                        unsigned threads) {
  if (n_paths == 0) throw std::invalid_argument("dynkin_residual: empty path list");
  model.check_field(x0);
  const auto nodes = output_nodes_for(grid, output_times);
  const MildScheme scheme(model, grid);
  const NemytskiiOperator prototype(model, F);
  const std::size_t n_phi = phis.size();
  const std::size_t n_out = nodes.size();

  // One flat row per path: [phi][output] residuals.
  auto rows = map_indices(n_paths, threads, [&](std::size_t p) {
    NemytskiiOperator op = prototype;
    const NormalStream stream(seed, StreamTag::Increments, p);
    std::vector<double> row(n_phi * n_out);
    std::vector<double> phi0(n_phi), integral(n_phi, 0.0), prev(n_phi, 0.0);
    double t_prev = 0.0;
    std::size_t next_out = 0;
    stream_path(scheme, op, x0, stream, [&](std::size_t k, const Field& x, const Field& Fx) {
      const double t = grid[k];
      for (std::size_t f = 0; f < n_phi; ++f) {
        const double l0 = l0_exp_test_given(model, phis[f], t, x, Fx);
        if (k == 0) {
          phi0[f] = phis[f].value(0.0, x);
        } else {
          integral[f] += 0.5 * (t - t_prev) * (prev[f] + l0);
        }
        prev[f] = l0;
      }
      t_prev = t;
      while (next_out < n_out && nodes[next_out] == k) {
        for (std::size_t f = 0; f < n_phi; ++f)
          row[f * n_out + next_out] = phis[f].value(t, x) - integral[f] - phi0[f];
        ++next_out;
      }
    });
    return row;
  });

  std::vector<DynkinStatistics> result;
  std::vector<std::vector<double>> per_path(n_paths, std::vector<double>(n_out));
  for (std::size_t f = 0; f < n_phi; ++f) {
    for (std::size_t p = 0; p < n_paths; ++p)
      std::copy_n(rows[p].begin() + static_cast<std::ptrdiff_t>(f * n_out), n_out, per_path[p].begin());
    result.push_back(summarize_dynkin(output_times, per_path));
  }
  return result;
}

namespace {

void check_path_within_horizon(const Path& path, const HFunction& h, bool include_last) {
  const double last = include_last ? path.grid.horizon() : path.grid[path.grid.size() - 2];
  if (!(last < h.horizon()))
    throw DomainError(fmt::format("path reaches t = {} but h is only defined for t < {}", last, h.horizon()));
}

}  // namespace

std::vector<double> log_exp_martingale_from_definition(const Path& path, const HFunction& h) {
  if (h.generator_ratio() == GeneratorRatio::Unavailable)
    throw std::invalid_argument("exp_martingale_from_definition: Lh/h is unavailable for this h");
  check_path_within_horizon(path, h, true);
  const std::size_t n = path.states.size();
  const double log_h0 = h.log_h(path.grid[0], path.states[0]);
  const bool harmonic = h.generator_ratio() == GeneratorRatio::Harmonic;
  std::vector<double> ratio(n, 0.0);
  if (!harmonic)
    for (std::size_t k = 0; k < n; ++k) ratio[k] = h.lh_over_h(path.grid[k], path.states[k]);
  const auto integral = cumulative_trapezoid(path.grid.nodes(), ratio);
  std::vector<double> out(n);
  out[0] = 0.0;
  for (std::size_t k = 1; k < n; ++k) out[k] = h.log_h(path.grid[k], path.states[k]) - log_h0 - integral[k];
  return out;
}

std::vector<double> exp_martingale_from_definition(const Path& path, const HFunction& h) {
  auto out = log_exp_martingale_from_definition(path, h);
  for (double& v : out) v = std::exp(v);
  return out;
}

std::vector<double> log_exp_martingale_from_girsanov(const Path& path, const HFunction& h,
                                                     const SpectralModel& model) {
  if (path.increments.size() + 1 != path.states.size())
    throw std::invalid_argument("exp_martingale_from_girsanov: path carries no increments");
  check_path_within_horizon(path, h, false);
  const std::size_t n = path.states.size();
  std::vector<double> out(n, 0.0);
  double M = 0.0, qv = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const auto& z = path.increments[k];
    if (z.size() != model.J()) throw std::invalid_argument("exp_martingale_from_girsanov: increment length");
    const Field g = h.grad_log_h(path.grid[k], path.states[k]);
    const double dt = path.grid.dt(k);
    const double sdt = std::sqrt(dt);
    for (std::size_t j = 0; j < model.J(); ++j) {
      const double sg = std::sqrt(model.q(j)) * g[j];
      M += sg * sdt * z[j];
      qv += dt * sg * sg;
    }
    out[k + 1] = M - 0.5 * qv;
  }
  return out;
}

std::vector<double> exp_martingale_from_girsanov(const Path& path, const HFunction& h, const SpectralModel& model) {
  auto out = log_exp_martingale_from_girsanov(path, h, model);
  for (double& v : out) v = std::exp(v);
  return out;
}

double novikov_path_value(const Path& path, const HFunction& h, const SpectralModel& model, double S) {
  if (!(S < h.horizon())) throw DomainError(fmt::format("novikov_estimate: S = {} must be < horizon {}", S, h.horizon()));
  if (S > path.grid.horizon()) throw DomainError("novikov_estimate: path does not reach S");
  const auto& nodes = path.grid.nodes();
  std::vector<double> integrand(nodes.size(), 0.0);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k] >= h.horizon()) {
      integrand[k] = k > 0 ? integrand[k - 1] : 0.0;
      break;
    }
    const Field g = h.grad_log_h(nodes[k], path.states[k]);
    double s = 0.0;
    for (std::size_t j = 0; j < model.J(); ++j) s += model.q(j) * g[j] * g[j];
    integrand[k] = s;
    if (nodes[k] >= S) break;
  }
  return std::exp(0.5 * trapezoid_until(nodes, integrand, S));
}

MeanEstimate novikov_estimate(std::span<const Path> paths, const HFunction& h, const SpectralModel& model, double S) {
  if (paths.empty()) throw std::invalid_argument("novikov_estimate: empty path list");
  std::vector<double> values;
  values.reserve(paths.size());
  for (const Path& p : paths) values.push_back(novikov_path_value(p, h, model, S));
  return mean_estimate(values);
}

double lipschitz_probe(const HFunction& h, const SpectralModel& model, std::span<const double> t_grid,
                       std::size_t n_pairs, double radius, std::uint64_t seed) {
  const std::size_t J = model.J();
  auto draw = [&](const NormalStream& stream, std::uint64_t step) {
    Field x(J);
    stream.normals(step, x.coeffs);
    const double nx = norm(x);
    const double scale = nx > 0.0 ? radius * stream.uniform(step, 0) / nx : 0.0;
    for (double& v : x.coeffs) v *= scale;
    return x;
  };
  double best = 0.0;
  for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
    const double t = t_grid[ti];
    if (!(t < h.horizon())) throw DomainError("lipschitz_probe: time grid must stay below the horizon");
    for (std::size_t p = 0; p < n_pairs; ++p) {
      const NormalStream stream(seed, StreamTag::Auxiliary, ti * n_pairs + p);
      const Field x = draw(stream, 0);
      const Field xp = draw(stream, 1);
      double dx = 0.0, dg = 0.0;
      const Field g = h.grad_log_h(t, x);
      const Field gp = h.grad_log_h(t, xp);
      for (std::size_t j = 0; j < J; ++j) {
        dx += (x[j] - xp[j]) * (x[j] - xp[j]);
        const double d = std::sqrt(model.q(j)) * (g[j] - gp[j]);
        dg += d * d;
      }
      if (dx < 1e-24) continue;
      best = std::max(best, std::sqrt(dg / dx));
    }
  }
  return best;
}

double guiding_lipschitz_constant(const SpectralModel& model, double T, std::span<const double> t_grid) {
  double best = 0.0;
  for (double t : t_grid) {
    const double r = T - t;
    if (!(r > 0.0)) throw DomainError("guiding_lipschitz_constant: time grid must stay below T");
    for (std::size_t j = 0; j < model.J(); ++j)
      best = std::max(best, std::sqrt(model.q(j)) * std::exp(2.0 * model.lambda(j) * r) / model.q_t(j, r));
  }
  return best;
}

double increment_orthogonality(std::span<const double> later, std::span<const double> earlier,
                               std::span<const double> probe) {
  if (later.size() != earlier.size() || later.size() != probe.size() || later.size() < 2)
    throw std::invalid_argument("increment_orthogonality: size mismatch");
  std::vector<double> prod(later.size());
  for (std::size_t i = 0; i < later.size(); ++i) prod[i] = (later[i] - earlier[i]) * probe[i];
  const MeanEstimate m = mean_estimate(prod);
  return m.stderr_ > 0.0 ? m.mean / m.stderr_ : 0.0;
}

}  // namespace spde
