#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spde {

/// Raised when a numerical precondition is violated (negative time, t >= T,
/// non-finite state, ...). The CLI maps it to exit code 2.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A point of the truncated state space: coordinates in the eigenbasis of A.
struct Field {
  std::vector<double> coeffs;

  Field() = default;
  explicit Field(std::size_t J, double value = 0.0) : coeffs(J, value) {}
  explicit Field(std::vector<double> c) : coeffs(std::move(c)) {}
  Field(std::initializer_list<double> c) : coeffs(c) {}

  std::size_t size() const { return coeffs.size(); }
  double& operator[](std::size_t j) { return coeffs[j]; }
  double operator[](std::size_t j) const { return coeffs[j]; }

  bool all_finite() const;
  bool operator==(const Field&) const = default;
};

double dot(const Field& a, const Field& b);
double norm(const Field& a);

/// Operator diagonal in the eigenbasis; carries S_t, Q_t^{+-1/2} and Gamma_r.
struct DiagonalOperator {
  std::vector<double> diag;

  std::size_t size() const { return diag.size(); }
  double operator[](std::size_t j) const { return diag[j]; }

  Field apply(const Field& x) const;
  DiagonalOperator compose(const DiagonalOperator& other) const;
  double trace() const;
};

/// -(e^x - 1) without cancellation for small |x|.
double one_minus_exp(double x);

/// (e^{lambda dt} - 1) / lambda, stable as lambda*dt -> 0.
double phi1(double lambda, double dt);

/// Truncated diagonal realization of (A, Q): A e_j = lambda_j e_j, Q e_j = q_j e_j.
class SpectralModel {
 public:
  SpectralModel(std::vector<double> lambda, std::vector<double> q, double domain_length = 1.0);

  /// Dirichlet Laplacian on (0, L): lambda_j = -(j pi / L)^2, q_j = j^{-rho}.
  static SpectralModel dirichlet_laplacian(std::size_t J, double rho = 0.0, double domain_length = 1.0);

  std::size_t J() const { return lambda_.size(); }
  std::span<const double> lambda() const { return lambda_; }
  std::span<const double> q() const { return q_; }
  double lambda(std::size_t j) const { return lambda_[j]; }
  double q(std::size_t j) const { return q_[j]; }
  double domain_length() const { return domain_length_; }

  /// Stable per-mode entry q_j (1 - e^{2 lambda_j t}) / (2 |lambda_j|).
  double q_t(std::size_t j, double t) const;
  double q_inf(std::size_t j) const { return q_[j] / (2.0 * -lambda_[j]); }

  /// Short content hash of (lambda, q, L), used to tie paths to their model.
  std::string identifier() const;

  void check_field(const Field& x) const;

 private:
  std::vector<double> lambda_;
  std::vector<double> q_;
  double domain_length_;
};

Field semigroup_apply(const SpectralModel& model, double t, const Field& x);
DiagonalOperator semigroup_operator(const SpectralModel& model, double t);

DiagonalOperator covariance_Qt(const SpectralModel& model, double t);
DiagonalOperator covariance_Qinf(const SpectralModel& model);

/// Gamma_r = Q_r^{-1/2} S_r, bounded for every r > 0.
DiagonalOperator gamma_operator(const SpectralModel& model, double r);
Field gamma_apply(const SpectralModel& model, double r, const Field& x);
double gamma_hs_norm_sq(const SpectralModel& model, double r);

/// Discrete sine transform between coefficients and values on the equispaced
/// grid s_i = i L / (n_grid - 1), i = 0..n_grid-1 (boundary nodes included).
/// Analysis is exact whenever J <= n_grid - 2.
class SineTransform {
 public:
  SineTransform(std::size_t J, std::size_t n_grid, double domain_length = 1.0);

  std::size_t J() const { return J_; }
  std::size_t n_grid() const { return n_grid_; }
  bool exact() const { return J_ + 2 <= n_grid_; }

  void synthesize(std::span<const double> coeffs, std::span<double> values) const;
  void analyze(std::span<const double> values, std::span<double> coeffs) const;

 private:
  std::size_t J_;
  std::size_t n_grid_;
  double domain_length_;
  std::vector<double> basis_;  // basis_[i * J + j] = sqrt(2/L) sin(j pi s_i / L)
};

std::vector<double> synthesize_on_grid(const SpectralModel& model, const Field& x, std::size_t n_grid);
Field analyze_from_grid(const SpectralModel& model, std::span<const double> values);

}  // namespace spde
