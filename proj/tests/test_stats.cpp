#include <cmath>
#include <vector>

#include <doctest.h>

#include "spde/stats.hpp"

using namespace spde;

TEST_CASE("compensated sum recovers cancelled mass") {
  CompensatedSum s;
  s.add(1e16);
  for (int i = 0; i < 1000; ++i) s.add(1.0);
  s.add(-1e16);
  CHECK(s.value() == 1000.0);
}

TEST_CASE("mean and variance estimates") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto m = mean_estimate(v);
  CHECK(m.mean == 2.5);
  CHECK(m.stderr_ == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  const auto var = variance_estimate(v);
  CHECK(var.mean == doctest::Approx(5.0 / 3.0));
  CHECK_THROWS(mean_estimate(std::vector<double>{}));
}

TEST_CASE("trapezoid integrates piecewise-linear functions exactly") {
  const std::vector<double> t{0.0, 0.1, 0.35, 0.5, 1.0};
  std::vector<double> f;
  for (double x : t) f.push_back(2.0 - 3.0 * x);
  for (double up : {0.0, 0.05, 0.1, 0.2, 0.5, 0.77, 1.0})
    CHECK(trapezoid_until(t, f, up) == doctest::Approx(2.0 * up - 1.5 * up * up).epsilon(1e-14));
  const auto c = cumulative_trapezoid(t, f);
  for (std::size_t k = 0; k < t.size(); ++k) CHECK(c[k] == doctest::Approx(2.0 * t[k] - 1.5 * t[k] * t[k]));
  CHECK_THROWS(trapezoid_until(t, f, 1.5));
}
