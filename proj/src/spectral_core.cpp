#include "spde/spectral_core.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>

#include <fmt/format.h>

namespace spde {

bool Field::all_finite() const {
  for (double v : coeffs)
    if (!std::isfinite(v)) return false;
  return true;
}

double dot(const Field& a, const Field& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

double norm(const Field& a) { return std::sqrt(dot(a, a)); }

Field DiagonalOperator::apply(const Field& x) const {
  if (x.size() != diag.size()) throw std::invalid_argument("DiagonalOperator::apply: dimension mismatch");
  Field out(x.size());
  for (std::size_t j = 0; j < diag.size(); ++j) out[j] = diag[j] * x[j];
  return out;
}

DiagonalOperator DiagonalOperator::compose(const DiagonalOperator& other) const {
  if (other.size() != size()) throw std::invalid_argument("DiagonalOperator::compose: dimension mismatch");
  DiagonalOperator out{diag};
  for (std::size_t j = 0; j < diag.size(); ++j) out.diag[j] *= other.diag[j];
  return out;
}

double DiagonalOperator::trace() const {
  double s = 0.0;
  for (double d : diag) s += d;
  return s;
}

double one_minus_exp(double x) { return -std::expm1(x); }

double phi1(double lambda, double dt) {
  if (lambda == 0.0) return dt;
  return std::expm1(lambda * dt) / lambda;
}

SpectralModel::SpectralModel(std::vector<double> lambda, std::vector<double> q, double domain_length)
    : lambda_(std::move(lambda)), q_(std::move(q)), domain_length_(domain_length) {
  if (lambda_.empty()) throw std::invalid_argument("SpectralModel: J must be positive");
  if (q_.size() != lambda_.size())
    throw std::invalid_argument(fmt::format("SpectralModel: q has {} entries, lambda has {}", q_.size(), lambda_.size()));
  if (!(domain_length_ > 0.0) || !std::isfinite(domain_length_))
    throw std::invalid_argument("SpectralModel: domain_length must be positive");
  for (std::size_t j = 0; j < lambda_.size(); ++j) {
    if (!(lambda_[j] < 0.0) || !std::isfinite(lambda_[j]))
      throw std::invalid_argument(fmt::format("SpectralModel: lambda[{}] = {} must be finite and negative", j, lambda_[j]));
    if (j > 0 && lambda_[j] > lambda_[j - 1])
      throw std::invalid_argument(fmt::format("SpectralModel: lambda must be nonincreasing (index {})", j));
    if (!(q_[j] > 0.0) || !std::isfinite(q_[j]))
      throw std::invalid_argument(fmt::format("SpectralModel: q[{}] = {} must be finite and positive", j, q_[j]));
  }
}

SpectralModel SpectralModel::dirichlet_laplacian(std::size_t J, double rho, double domain_length) {
  if (J == 0) throw std::invalid_argument("SpectralModel: J must be positive");
  if (!(rho >= 0.0)) throw std::invalid_argument("SpectralModel: noise decay rho must be >= 0");
  std::vector<double> lambda(J), q(J);
  for (std::size_t j = 0; j < J; ++j) {
    const double k = static_cast<double>(j + 1) * std::numbers::pi / domain_length;
    lambda[j] = -k * k;
    q[j] = std::pow(static_cast<double>(j + 1), -rho);
  }
  return SpectralModel(std::move(lambda), std::move(q), domain_length);
}

double SpectralModel::q_t(std::size_t j, double t) const {
  const double mu = -lambda_[j];
  return q_[j] * one_minus_exp(-2.0 * mu * t) / (2.0 * mu);
}

std::string SpectralModel::identifier() const {
  // FNV-1a over the raw IEEE bytes.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](double v) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  };
  for (double v : lambda_) mix(v);
  for (double v : q_) mix(v);
  mix(domain_length_);
  return fmt::format("J{}-{:016x}", lambda_.size(), h);
}

void SpectralModel::check_field(const Field& x) const {
  if (x.size() != J())
    throw std::invalid_argument(fmt::format("Field has {} coefficients, model expects J = {}", x.size(), J()));
}

Field semigroup_apply(const SpectralModel& model, double t, const Field& x) {
  if (!(t >= 0.0)) throw DomainError(fmt::format("semigroup_apply: t = {} must be nonnegative", t));
  model.check_field(x);
  if (t == 0.0) return x;
  Field out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = std::exp(model.lambda(j) * t) * x[j];
  return out;
}

DiagonalOperator semigroup_operator(const SpectralModel& model, double t) {
  if (!(t >= 0.0)) throw DomainError(fmt::format("semigroup_operator: t = {} must be nonnegative", t));
  DiagonalOperator op{std::vector<double>(model.J())};
  for (std::size_t j = 0; j < model.J(); ++j) op.diag[j] = std::exp(model.lambda(j) * t);
  return op;
}

DiagonalOperator covariance_Qt(const SpectralModel& model, double t) {
  if (!(t > 0.0)) throw DomainError(fmt::format("covariance_Qt: t = {} must be positive", t));
  DiagonalOperator op{std::vector<double>(model.J())};
  for (std::size_t j = 0; j < model.J(); ++j) op.diag[j] = model.q_t(j, t);
  return op;
}

DiagonalOperator covariance_Qinf(const SpectralModel& model) {
  DiagonalOperator op{std::vector<double>(model.J())};
  for (std::size_t j = 0; j < model.J(); ++j) op.diag[j] = model.q_inf(j);
  return op;
}

DiagonalOperator gamma_operator(const SpectralModel& model, double r) {
  if (!(r > 0.0)) throw DomainError(fmt::format("Gamma_r requires r > 0 (got {}); Gamma_0 is unbounded", r));
  DiagonalOperator op{std::vector<double>(model.J())};
  for (std::size_t j = 0; j < model.J(); ++j) {
    const double qr = model.q_t(j, r);
    if (!(qr > 0.0)) throw DomainError(fmt::format("Gamma_r: q_{{{},r}} underflowed at r = {}", j, r));
    op.diag[j] = std::exp(model.lambda(j) * r) / std::sqrt(qr);
  }
  return op;
}

Field gamma_apply(const SpectralModel& model, double r, const Field& x) {
  model.check_field(x);
  return gamma_operator(model, r).apply(x);
}

double gamma_hs_norm_sq(const SpectralModel& model, double r) {
  if (!(r > 0.0)) throw DomainError(fmt::format("gamma_hs_norm_sq requires r > 0 (got {})", r));
  double s = 0.0;
  for (std::size_t j = 0; j < model.J(); ++j) {
    const double qr = model.q_t(j, r);
    if (!(qr > 0.0)) throw DomainError(fmt::format("gamma_hs_norm_sq: q_{{{},r}} underflowed at r = {}", j, r));
    s += std::exp(2.0 * model.lambda(j) * r) / qr;
  }
  return s;
}

SineTransform::SineTransform(std::size_t J, std::size_t n_grid, double domain_length)
    : J_(J), n_grid_(n_grid), domain_length_(domain_length), basis_(J * n_grid) {
  if (J == 0) throw std::invalid_argument("SineTransform: J must be positive");
  if (n_grid < J) throw std::invalid_argument(fmt::format("SineTransform: n_grid = {} < J = {}", n_grid, J));
  if (n_grid < 2) throw std::invalid_argument("SineTransform: n_grid must be >= 2");
  const double M = static_cast<double>(n_grid - 1);
  const double scale = std::sqrt(2.0 / domain_length);
  for (std::size_t i = 0; i < n_grid; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      // Reduce (j+1) i mod 2M exactly so boundary and midpoint values are clean.
      const std::size_t k = ((j + 1) * i) % (2 * (n_grid - 1));
      basis_[i * J + j] = scale * std::sin(std::numbers::pi * static_cast<double>(k) / M);
    }
  }
}

void SineTransform::synthesize(std::span<const double> coeffs, std::span<double> values) const {
  for (std::size_t i = 0; i < n_grid_; ++i) {
    const double* row = &basis_[i * J_];
    double s = 0.0;
    for (std::size_t j = 0; j < J_; ++j) s += coeffs[j] * row[j];
    values[i] = s;
  }
}

void SineTransform::analyze(std::span<const double> values, std::span<double> coeffs) const {
  if (!exact())
    throw std::invalid_argument(
        fmt::format("SineTransform::analyze needs J <= n_grid - 2 (J = {}, n_grid = {})", J_, n_grid_));
  const double w = domain_length_ / static_cast<double>(n_grid_ - 1);
  for (std::size_t j = 0; j < J_; ++j) coeffs[j] = 0.0;
  // Boundary rows vanish identically; interior nodes only.
  for (std::size_t i = 1; i + 1 < n_grid_; ++i) {
    const double* row = &basis_[i * J_];
    const double v = values[i];
    for (std::size_t j = 0; j < J_; ++j) coeffs[j] += v * row[j];
  }
  for (std::size_t j = 0; j < J_; ++j) coeffs[j] *= w;
}

std::vector<double> synthesize_on_grid(const SpectralModel& model, const Field& x, std::size_t n_grid) {
  model.check_field(x);
  if (n_grid < model.J())
    throw std::invalid_argument(fmt::format("synthesize_on_grid: n_grid = {} < J = {}", n_grid, model.J()));
  SineTransform tr(model.J(), n_grid, model.domain_length());
  std::vector<double> values(n_grid);
  tr.synthesize(x.coeffs, values);
  return values;
}

Field analyze_from_grid(const SpectralModel& model, std::span<const double> values) {
  SineTransform tr(model.J(), values.size(), model.domain_length());
  Field out(model.J());
  tr.analyze(values, out.coeffs);
  return out;
}

}  // namespace spde
