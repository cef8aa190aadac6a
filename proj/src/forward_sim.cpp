#include "spde/forward_sim.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "spde/rng.hpp"

namespace spde {

double Nonlinearity::lipschitz_bound() const {
  return kind == NonlinearityKind::Zero ? 0.0 : std::abs(alpha);
}

double Nonlinearity::pointwise(double u) const {
  switch (kind) {
    case NonlinearityKind::Zero:
      return 0.0;
    case NonlinearityKind::LinearScale:
      return alpha * u;
    case NonlinearityKind::BoundedRational:
      return alpha * u / (1.0 + u * u);
    case NonlinearityKind::SineNemytskii:
      return alpha * std::sin(u);
  }
  return 0.0;
}

std::string to_string(NonlinearityKind kind) {
  switch (kind) {
    case NonlinearityKind::Zero:
      return "zero";
    case NonlinearityKind::LinearScale:
      return "linear";
    case NonlinearityKind::BoundedRational:
      return "bounded-rational";
    case NonlinearityKind::SineNemytskii:
      return "sine";
  }
  return "?";
}

NonlinearityKind parse_nonlinearity_kind(const std::string& s) {
  if (s == "zero") return NonlinearityKind::Zero;
  if (s == "linear") return NonlinearityKind::LinearScale;
  if (s == "bounded-rational") return NonlinearityKind::BoundedRational;
  if (s == "sine") return NonlinearityKind::SineNemytskii;
  throw std::invalid_argument(fmt::format("unknown nonlinearity kind '{}' (zero|linear|bounded-rational|sine)", s));
}

std::string Nonlinearity::name() const {
  if (kind == NonlinearityKind::Zero) return "zero";
  return fmt::format("{}({})", to_string(kind), alpha);
}

NemytskiiOperator::NemytskiiOperator(const SpectralModel& model, const Nonlinearity& F) : F_(F) {
  if (F_.oversampling < 2) throw std::invalid_argument("Nonlinearity: oversampling must be >= 2");
  if (!std::isfinite(F_.alpha)) throw std::invalid_argument("Nonlinearity: alpha must be finite");
  if (F_.kind == NonlinearityKind::BoundedRational || F_.kind == NonlinearityKind::SineNemytskii) {
    transform_ =
        std::make_shared<const SineTransform>(model.J(), F_.oversampling * model.J() + 1, model.domain_length());
    grid_values_.resize(transform_->n_grid());
  }
}

void NemytskiiOperator::apply(double /*t*/, std::span<const double> x, std::span<double> out) {
  switch (F_.kind) {
    case NonlinearityKind::Zero:
      std::fill(out.begin(), out.end(), 0.0);
      return;
    case NonlinearityKind::LinearScale:
      for (std::size_t j = 0; j < x.size(); ++j) out[j] = F_.alpha * x[j];
      return;
    default:
      break;
  }
  transform_->synthesize(x, grid_values_);
  for (double& u : grid_values_) u = F_.pointwise(u);
  transform_->analyze(grid_values_, out);
}

Field apply_nonlinearity(const SpectralModel& model, const Nonlinearity& F, double t, const Field& x) {
  model.check_field(x);
  NemytskiiOperator op(model, F);
  Field out(model.J());
  op.apply(t, x.coeffs, out.coeffs);
  return out;
}

TimeGrid::TimeGrid(std::vector<double> nodes, GridKind kind, double ratio)
    : nodes_(std::move(nodes)), kind_(kind), ratio_(ratio) {
  if (nodes_.size() < 2) throw std::invalid_argument("TimeGrid: need at least two nodes");
  if (nodes_.front() != 0.0) throw std::invalid_argument("TimeGrid: first node must be 0");
  for (std::size_t k = 1; k < nodes_.size(); ++k)
    if (!(nodes_[k] > nodes_[k - 1]) || !std::isfinite(nodes_[k]))
      throw std::invalid_argument(fmt::format("TimeGrid: nodes must be finite and strictly increasing (index {})", k));
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t n_nodes) {
  if (!(horizon > 0.0)) throw std::invalid_argument("TimeGrid: horizon must be positive");
  if (n_nodes < 2) throw std::invalid_argument("TimeGrid: need at least two nodes");
  std::vector<double> nodes(n_nodes);
  const double n = static_cast<double>(n_nodes - 1);
  for (std::size_t k = 0; k < n_nodes; ++k) nodes[k] = horizon * (static_cast<double>(k) / n);
  nodes.back() = horizon;
  return TimeGrid(std::move(nodes), GridKind::Uniform, 0.0);
}

TimeGrid TimeGrid::geometric_toward_end(double horizon, std::size_t n_nodes, double ratio,
                                        double min_final_step_fraction) {
  if (!(horizon > 0.0)) throw std::invalid_argument("TimeGrid: horizon must be positive");
  if (n_nodes < 2) throw std::invalid_argument("TimeGrid: need at least two nodes");
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("TimeGrid: geometric ratio must lie in (0, 1)");
  if (!(min_final_step_fraction > 0.0 && min_final_step_fraction < 1.0))
    throw std::invalid_argument("TimeGrid: min_final_step_fraction must lie in (0, 1)");

  const std::size_t intervals = n_nodes - 1;
  const double floor_step = min_final_step_fraction * horizon;
  auto bulk_step = [&](std::size_t m) {
    const double tail = ratio * (1.0 - std::pow(ratio, static_cast<double>(m))) / (1.0 - ratio);
    return horizon / (static_cast<double>(intervals - m) + tail);
  };

  // Deepest tail whose last step still reaches max(floor, h^2 / T).
  std::size_t tail_steps = 0;
  for (std::size_t m = 1; m < intervals; ++m) {
    const double h = bulk_step(m);
    const double last = h * std::pow(ratio, static_cast<double>(m));
    if (last < std::max(floor_step, h * h / horizon)) break;
    tail_steps = m;
  }

  const double h = bulk_step(tail_steps);
  std::vector<double> nodes(n_nodes, 0.0);
  double t = 0.0;
  for (std::size_t k = 0; k < intervals; ++k) {
    const std::size_t bulk = intervals - tail_steps;
    const double step = k < bulk ? h : h * std::pow(ratio, static_cast<double>(k - bulk + 1));
    t += step;
    nodes[k + 1] = t;
  }
  nodes.back() = horizon;
  return TimeGrid(std::move(nodes), GridKind::GeometricTowardEnd, ratio);
}

TimeGrid TimeGrid::from_nodes(std::vector<double> nodes, GridKind kind, double ratio) {
  return TimeGrid(std::move(nodes), kind, ratio);
}

double TimeGrid::max_step() const {
  double m = 0.0;
  for (std::size_t k = 0; k + 1 < nodes_.size(); ++k) m = std::max(m, dt(k));
  return m;
}

std::size_t TimeGrid::nearest_index(double t) const {
  const auto it = std::lower_bound(nodes_.begin(), nodes_.end(), t);
  if (it == nodes_.begin()) return 0;
  if (it == nodes_.end()) return nodes_.size() - 1;
  const auto hi = static_cast<std::size_t>(it - nodes_.begin());
  return (t - nodes_[hi - 1] <= nodes_[hi] - t) ? hi - 1 : hi;
}

namespace {

double step_decay(const SpectralModel& m, std::size_t j, double dt) { return std::exp(m.lambda(j) * dt); }
double step_noise_sd(const SpectralModel& m, std::size_t j, double dt) { return std::sqrt(m.q_t(j, dt)); }

inline double mild_update(double decay, double x, double phi, double drift, double sd, double z) {
  return (decay * x + phi * drift) + sd * z;
}

void check_finite(std::span<const double> x, double t) {
  for (double v : x)
    if (!std::isfinite(v)) throw DomainError(fmt::format("non-finite state at t = {}", t));
}

}  // namespace

MildScheme::MildScheme(const SpectralModel& model, const TimeGrid& grid)
    : model_(model), grid_(grid), J_(model.J()) {
  const std::size_t steps = grid.size() - 1;
  decay_.resize(steps * J_);
  phi_.resize(steps * J_);
  noise_sd_.resize(steps * J_);
  for (std::size_t k = 0; k < steps; ++k) {
    const double dt = grid.dt(k);
    for (std::size_t j = 0; j < J_; ++j) {
      decay_[k * J_ + j] = step_decay(model, j, dt);
      phi_[k * J_ + j] = phi1(model.lambda(j), dt);
      noise_sd_[k * J_ + j] = step_noise_sd(model, j, dt);
    }
  }
}

void MildScheme::step(std::size_t k, std::span<const double> x, std::span<const double> drift,
                      std::span<const double> z, std::span<double> out) const {
  const double* d = &decay_[k * J_];
  const double* p = &phi_[k * J_];
  const double* s = &noise_sd_[k * J_];
  if (drift.empty()) {
    for (std::size_t j = 0; j < J_; ++j) out[j] = mild_update(d[j], x[j], p[j], 0.0, s[j], z[j]);
  } else {
    for (std::size_t j = 0; j < J_; ++j) out[j] = mild_update(d[j], x[j], p[j], drift[j], s[j], z[j]);
  }
}

Field exponential_euler_step(const SpectralModel& model, const Nonlinearity& F, double t, double dt, const Field& x,
                             std::span<const double> z) {
  if (!(dt > 0.0)) throw DomainError(fmt::format("exponential_euler_step: dt = {} must be positive", dt));
  model.check_field(x);
  if (z.size() != model.J())
    throw std::invalid_argument(fmt::format("exponential_euler_step: z has {} entries, J = {}", z.size(), model.J()));
  check_finite(x.coeffs, t);
  const Field Fx = apply_nonlinearity(model, F, t, x);
  Field out(model.J());
  for (std::size_t j = 0; j < model.J(); ++j)
    out[j] = mild_update(step_decay(model, j, dt), x[j], phi1(model.lambda(j), dt), Fx[j],
                         step_noise_sd(model, j, dt), z[j]);
  return out;
}

namespace {

Path run_scheme(const SpectralModel& model, const Nonlinearity& F, const Field& x0, const TimeGrid& grid,
                std::vector<std::vector<double>> increments) {
  model.check_field(x0);
  const std::size_t J = model.J();
  const MildScheme scheme(model, grid);
  NemytskiiOperator op(model, F);
  Path path{grid, {}, std::move(increments), model.identifier()};
  path.states.reserve(grid.size());
  path.states.push_back(x0);
  check_finite(x0.coeffs, 0.0);
  Field drift(J);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const Field& x = path.states.back();
    op.apply(grid[k], x.coeffs, drift.coeffs);
    Field next(J);
    scheme.step(k, x.coeffs, drift.coeffs, path.increments[k], next.coeffs);
    check_finite(next.coeffs, grid[k + 1]);
    path.states.push_back(std::move(next));
  }
  return path;
}

}  // namespace

Path simulate_path(const SpectralModel& model, const Nonlinearity& F, const Field& x0, const TimeGrid& grid,
                   std::uint64_t rng_seed, SimulationOptions options) {
  const std::size_t J = model.J();
  std::vector<std::vector<double>> increments(grid.size() - 1, std::vector<double>(J, 0.0));
  if (!options.zero_noise) {
    const NormalStream stream(rng_seed, StreamTag::Increments, options.path_index);
    for (std::size_t k = 0; k < increments.size(); ++k) stream.normals(k, increments[k]);
  }
  return run_scheme(model, F, x0, grid, std::move(increments));
}

Path replay_path(const SpectralModel& model, const Nonlinearity& F, const Field& x0, const TimeGrid& grid,
                 std::vector<std::vector<double>> increments) {
  if (increments.size() + 1 != grid.size())
    throw std::invalid_argument(
        fmt::format("replay_path: {} increments for a grid of {} nodes", increments.size(), grid.size()));
  for (const auto& z : increments)
    if (z.size() != model.J()) throw std::invalid_argument("replay_path: increment length differs from J");
  return run_scheme(model, F, x0, grid, std::move(increments));
}

Field sample_stationary(const SpectralModel& model, std::uint64_t rng_seed, std::uint64_t index) {
  const NormalStream stream(rng_seed, StreamTag::InitialState, index);
  Field out(model.J());
  stream.normals(0, out.coeffs);
  for (std::size_t j = 0; j < model.J(); ++j) out[j] *= std::sqrt(model.q_inf(j));
  return out;
}

}  // namespace spde
