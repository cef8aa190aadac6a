#include "spde/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace spde {

namespace {

// Number of roots of the degree-n Hermite polynomial below x: Sturm count on
// the Jacobi matrix (zero diagonal, off-diagonal sqrt(k/2)).
std::size_t roots_below(double x, std::size_t n) {
  std::size_t count = 0;
  double d = -x;
  for (std::size_t k = 0;; ++k) {
    if (d < 0.0) ++count;
    if (k + 1 == n) break;
    if (d == 0.0) d = 1e-300;
    d = -x - 0.5 * static_cast<double>(k + 1) / d;
  }
  return count;
}

// Orthonormal recurrence at z: returns p_n(z), stores d/dz p_n(z) in deriv.
double hermite_orthonormal(double z, std::size_t n, double& deriv) {
  double p1 = std::pow(std::numbers::pi, -0.25), p2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double p3 = p2;
    p2 = p1;
    const double jd = static_cast<double>(j);
    p1 = z * std::sqrt(2.0 / (jd + 1.0)) * p2 - std::sqrt(jd / (jd + 1.0)) * p3;
  }
  deriv = std::sqrt(2.0 * static_cast<double>(n)) * p2;
  return p1;
}

// Roots bracketed by bisection on the Sturm count, then polished by Newton.
// Extrapolated starting guesses drift onto neighbouring roots for n in the hundreds.
GaussHermiteRule build_rule(std::size_t n) {
  const double bound = std::sqrt(2.0 * static_cast<double>(n) + 1.0) + 1.0;
  std::vector<double> x(n), w(n);
  for (std::size_t i = n / 2; i < n; ++i) {
    double lo = (i == n / 2) ? 0.0 : x[i - 1], hi = bound;
    if (n % 2 == 1 && i == n / 2) {
      x[i] = 0.0;
    } else {
      for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (roots_below(mid, n) > i ? hi : lo) = mid;
      }
      double z = 0.5 * (lo + hi), pp = 0.0;
      for (int it = 0; it < 3; ++it) {
        const double p = hermite_orthonormal(z, n, pp);
        const double next = z - p / pp;
        if (!(next > lo && next < hi)) break;
        z = next;
      }
      x[i] = z;
    }
    double pp = 0.0;
    hermite_orthonormal(x[i], n, pp);
    if (!std::isfinite(pp) || pp == 0.0) throw std::runtime_error("gauss_hermite: weight underflow");
    w[i] = 2.0 / (pp * pp);
    x[n - 1 - i] = -x[i];
    w[n - 1 - i] = w[i];
  }
  return {std::move(x), std::move(w)};
}

}  // namespace

const GaussHermiteRule& gauss_hermite(std::size_t n) {
  if (n == 0) throw std::invalid_argument("gauss_hermite: n must be positive");
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussHermiteRule>(build_rule(n));
  return *slot;
}

double gaussian_expectation(double mean, double var, const std::function<double(double)>& f, std::size_t n) {
  if (!(var >= 0.0)) throw std::invalid_argument("gaussian_expectation: variance must be nonnegative");
  const auto& rule = gauss_hermite(n);
  const double scale = std::sqrt(2.0 * var);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * f(mean + scale * rule.nodes[i]);
  return s / std::sqrt(std::numbers::pi);
}

}  // namespace spde
