#include <cmath>
#include <numbers>

#include <boost/math/quadrature/sinh_sinh.hpp>
#include <doctest.h>

#include "spde/quadrature.hpp"

using namespace spde;

TEST_CASE("Gauss-Hermite rule: weights sum to sqrt(pi), symmetric, exact moments") {
  for (std::size_t n : {5, 40, 200}) {
    const auto& r = gauss_hermite(n);
    REQUIRE(r.nodes.size() == n);
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w += r.weights[i];
      CHECK(r.nodes[i] == doctest::Approx(-r.nodes[n - 1 - i]).epsilon(1e-13).scale(1.0));
    }
    CHECK(w == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-13));
  }
  // E[Z^4] = 3 sigma^4 + 6 sigma^2 mu^2 + mu^4.
  const double mu = 0.3, var = 1.7;
  const double m4 = gaussian_expectation(mu, var, [](double x) { return x * x * x * x; }, 10);
  CHECK(m4 == doctest::Approx(3 * var * var + 6 * var * mu * mu + mu * mu * mu * mu).epsilon(1e-13));
}

TEST_CASE("gaussian expectation of a smooth non-polynomial matches sinh-sinh quadrature") {
  const double mu = -0.4, var = 0.8;
  auto f = [](double x) { return std::cos(2.0 * x) / (1.0 + 0.3 * x * x); };
  boost::math::quadrature::sinh_sinh<double> ss;
  const double ref = ss.integrate([&](double x) {
    return f(x) * std::exp(-(x - mu) * (x - mu) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
  });
  CHECK(gaussian_expectation(mu, var, f) == doctest::Approx(ref).epsilon(1e-10));
}
