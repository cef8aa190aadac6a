#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <doctest.h>

#include "spde/spectral_core.hpp"

using namespace spde;
using big = boost::multiprecision::cpp_bin_float_50;

namespace {

// q (1 - e^{2 l t}) / (2 |l|) in 50 digits.
double qt_50(double lambda, double q, double t) {
  const big l = lambda;
  return static_cast<double>(big(q) * (1 - exp(2 * l * big(t))) / (-2 * l));
}

}  // namespace

TEST_CASE("q_t agrees with a 50-digit evaluation, including tiny and huge l t") {
  for (double lambda : {-1e-6, -0.3, -9.8696044, -400.0, -1e4}) {
    for (double t : {1e-12, 1e-8, 1e-4, 0.01, 0.5, 3.0}) {
      const SpectralModel m({lambda}, {1.7});
      const double ref = qt_50(lambda, 1.7, t);
      CHECK(m.q_t(0, t) == doctest::Approx(ref).epsilon(1e-14));
    }
  }
}

TEST_CASE("q_t increases to q_inf") {
  const auto m = SpectralModel::dirichlet_laplacian(8, 0.5);
  for (std::size_t j = 0; j < m.J(); ++j) {
    double prev = 0.0;
    for (double t = 0.01; t < 5.0; t *= 1.7) {
      const double v = m.q_t(j, t);
      CHECK(v >= prev);
      if (prev < 0.999 * m.q_inf(j)) CHECK(v > prev);  // saturates in double precision later
      CHECK(v <= m.q_inf(j));
      prev = v;
    }
    CHECK(m.q_t(j, 50.0) == doctest::Approx(m.q_inf(j)).epsilon(1e-15));
  }
}

TEST_CASE("dirichlet defaults") {
  const auto m = SpectralModel::dirichlet_laplacian(5, 1.5, 2.0);
  for (std::size_t j = 0; j < 5; ++j) {
    const double k = (j + 1.0) * std::numbers::pi / 2.0;
    CHECK(m.lambda(j) == doctest::Approx(-k * k).epsilon(1e-15));
    CHECK(m.q(j) == doctest::Approx(std::pow(j + 1.0, -1.5)).epsilon(1e-15));
  }
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(SpectralModel({-1.0, 0.0}, {1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(SpectralModel({-1.0, -2.0}, {1.0, -1.0}), std::invalid_argument);
  CHECK_THROWS_AS(SpectralModel({-2.0, -1.0}, {1.0, 1.0}), std::invalid_argument);  // must be nonincreasing
  CHECK_THROWS_AS(SpectralModel({-1.0}, {1.0, 1.0}), std::exception);
  CHECK_NOTHROW(SpectralModel({-1.0, -1.0}, {1.0, 1.0}));
}

TEST_CASE("semigroup property S_t S_s = S_{t+s} and S_0 = I") {
  const auto m = SpectralModel::dirichlet_laplacian(6);
  const Field x{0.3, -1.2, 0.7, 2.0, -0.1, 0.05};
  CHECK(semigroup_apply(m, 0.0, x) == x);
  const auto a = semigroup_apply(m, 0.13, semigroup_apply(m, 0.04, x));
  const auto b = semigroup_apply(m, 0.17, x);
  for (std::size_t j = 0; j < 6; ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-14));
}

TEST_CASE("covariance flow Q_{t+s} = S_s Q_t S_s + Q_s") {
  const auto m = SpectralModel::dirichlet_laplacian(6, 1.0);
  const double t = 0.07, s = 0.11;
  const auto qt = covariance_Qt(m, t);
  const auto qs = covariance_Qt(m, s);
  const auto qts = covariance_Qt(m, t + s);
  for (std::size_t j = 0; j < 6; ++j) {
    const double e = std::exp(m.lambda(j) * s);
    CHECK(qts.diag[j] == doctest::Approx(e * e * qt.diag[j] + qs.diag[j]).epsilon(1e-14));
  }
}

TEST_CASE("Gamma_r and its Hilbert-Schmidt norm") {
  const auto m = SpectralModel::dirichlet_laplacian(64);
  for (double r : {1e-3, 0.1, 0.5, 1.0}) {
    // Independent long-double sum of e^{2 l r} / q_r.
    long double direct = 0.0L;
    for (std::size_t j = 0; j < m.J(); ++j) {
      const long double l = m.lambda(j);
      const long double qr = -std::expm1(2.0L * l * r) / (-2.0L * l);
      direct += std::exp(2.0L * l * r) / qr;
    }
    CHECK(gamma_hs_norm_sq(m, r) == doctest::Approx(static_cast<double>(direct)).epsilon(1e-12));
    const auto g = gamma_operator(m, r);
    for (std::size_t j = 0; j < m.J(); ++j)
      CHECK(g.diag[j] == doctest::Approx(std::exp(m.lambda(j) * r) / std::sqrt(m.q_t(j, r))).epsilon(1e-14));
  }
  // Decreasing in r: the blow-up is at r -> 0 only.
  double prev = INFINITY;
  for (double r = 1e-3; r < 2.0; r *= 1.5) {
    const double v = gamma_hs_norm_sq(m, r);
    CHECK(std::isfinite(v));
    CHECK(v < prev);
    prev = v;
  }
  CHECK_THROWS(gamma_hs_norm_sq(m, 0.0));
}

TEST_CASE("sine basis is orthonormal under continuous quadrature") {
  const double L = 1.7;
  for (std::size_t j = 1; j <= 5; ++j)
    for (std::size_t k = 1; k <= 5; ++k) {
      auto f = [&](double s) {
        return 2.0 / L * std::sin(j * std::numbers::pi * s / L) * std::sin(k * std::numbers::pi * s / L);
      };
      const double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, L);
      CHECK(v == doctest::Approx(j == k ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
    }
}

TEST_CASE("discrete sine transform round trip") {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> nd;
  for (std::size_t J : {1, 3, 8, 17}) {
    for (std::size_t n_grid : {J + 2, 2 * J + 1, 4 * J + 1}) {
      const SineTransform tr(J, n_grid, 1.3);
      CHECK(tr.exact());
      std::vector<double> c(J), v(n_grid), back(J);
      for (auto& x : c) x = nd(gen);
      tr.synthesize(c, v);
      CHECK(v.front() == 0.0);
      CHECK(std::abs(v.back()) < 1e-14);
      tr.analyze(v, back);
      for (std::size_t j = 0; j < J; ++j) CHECK(back[j] == doctest::Approx(c[j]).epsilon(1e-12).scale(1.0));
    }
  }
  std::vector<double> v5(5), c4(4);
  CHECK_THROWS(SineTransform(4, 5).analyze(v5, c4));
}

TEST_CASE("synthesis matches the sine series pointwise") {
  const auto m = SpectralModel::dirichlet_laplacian(4, 0.0, 2.0);
  const Field x{0.5, -0.25, 0.125, 1.0};
  const auto v = synthesize_on_grid(m, x, 9);
  for (std::size_t i = 0; i < 9; ++i) {
    const double s = 2.0 * i / 8.0;
    double ref = 0.0;
    for (std::size_t j = 0; j < 4; ++j) ref += x[j] * std::sqrt(2.0 / 2.0) * std::sin((j + 1.0) * std::numbers::pi * s / 2.0);
    CHECK(v[i] == doctest::Approx(ref).epsilon(1e-13).scale(1.0));
  }
}

TEST_CASE("identifier depends on every model parameter") {
  const auto a = SpectralModel::dirichlet_laplacian(4);
  CHECK(a.identifier() == SpectralModel::dirichlet_laplacian(4).identifier());
  CHECK(a.identifier() != SpectralModel::dirichlet_laplacian(4, 0.1).identifier());
  CHECK(a.identifier() != SpectralModel::dirichlet_laplacian(4, 0.0, 1.1).identifier());
  CHECK(a.identifier() != SpectralModel::dirichlet_laplacian(5).identifier());
}
