#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <doctest.h>

#include "spde/ou_analytics.hpp"
#include "spde/stats.hpp"

using namespace spde;
using big = boost::multiprecision::cpp_bin_float_50;

namespace {

// log N(y; e^{l r} x, q_r) - log N(y; 0, q_inf) for one mode, 50 digits.
double log_ratio_50(double lambda, double q, double r, double x, double y) {
  const big l = lambda, qq = q;
  const big qr = qq * (1 - exp(2 * l * big(r))) / (-2 * l);
  const big qinf = qq / (-2 * l);
  const big m = exp(l * big(r)) * big(x);
  const big d = big(y) - m;
  const big v = -log(qr) / 2 - d * d / (2 * qr) + log(qinf) / 2 + big(y) * big(y) / (2 * qinf);
  return static_cast<double>(v);
}

double normal_pdf(double x, double mean, double var) {
  return std::exp(-(x - mean) * (x - mean) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
}

}  // namespace

TEST_CASE("log ptilde matches a 50-digit density ratio, far from and close to the horizon") {
  const auto m = SpectralModel::dirichlet_laplacian(3, 1.0);
  const Field x{0.3, -0.8, 1.1}, y{0.5, 0.2, -0.4};
  for (double t : {0.0, 0.5, 0.9, 0.999, 1.0 - 1e-7}) {
    double ref = 0.0;
    for (std::size_t j = 0; j < 3; ++j) ref += log_ratio_50(m.lambda(j), m.q(j), 1.0 - t, x[j], y[j]);
    CHECK(log_ptilde(m, t, x, 1.0, y) == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("Cameron-Martin route agrees with the direct route (random inputs)") {
  const auto m = SpectralModel::dirichlet_laplacian(8, 0.5);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ut(0.0, 0.999);
  for (int trial = 0; trial < 200; ++trial) {
    Field x(8), y(8);
    for (std::size_t j = 0; j < 8; ++j) {
      x[j] = nd(gen);
      y[j] = 0.3 * nd(gen);
    }
    const double t = ut(gen);
    const double a = log_ptilde(m, t, x, 1.0, y);
    const double b = log_ptilde_cameron_martin(m, t, x, 1.0, y);
    CHECK(a == doctest::Approx(b).epsilon(1e-10).scale(std::abs(a) + 1.0));
  }
}

TEST_CASE("gradient of log ptilde matches central differences") {
  const auto m = SpectralModel::dirichlet_laplacian(4);
  const Field x{0.2, -0.1, 0.4, 0.05}, y{0.5, -0.3, 0.1, 0.0};
  for (double t : {0.0, 0.6, 0.97}) {
    const Field g = grad_log_ptilde(m, t, x, 1.0, y);
    const Field drift = guided_drift(m, t, 1.0, y, x);
    for (std::size_t j = 0; j < 4; ++j) {
      const double h = 1e-5;
      Field xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const double fd = (log_ptilde(m, t, xp, 1.0, y) - log_ptilde(m, t, xm, 1.0, y)) / (2 * h);
      CHECK(g[j] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
      CHECK(drift[j] == doctest::Approx(m.q(j) * g[j]));
    }
  }
}

TEST_CASE("noisy-observation h is the Gaussian predictive density") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const Field x{0.4, -0.2}, v{0.1, 0.3};
  const std::vector<double> s2{0.05, 0.2};
  const double t = 0.7, T = 1.0;
  double ref = 0.0;
  for (std::size_t j = 0; j < 2; ++j)
    ref += std::log(normal_pdf(v[j], std::exp(m.lambda(j) * (T - t)) * x[j], m.q_t(j, T - t) + s2[j]));
  CHECK(log_h_noisy_obs(m, t, x, T, v, s2) == doctest::Approx(ref).epsilon(1e-13));
  const Field g = grad_log_h_noisy_obs(m, t, x, T, v, s2);
  for (std::size_t j = 0; j < 2; ++j) {
    Field xp = x, xm = x;
    xp[j] += 1e-5;
    xm[j] -= 1e-5;
    const double fd = (log_h_noisy_obs(m, t, xp, T, v, s2) - log_h_noisy_obs(m, t, xm, T, v, s2)) / 2e-5;
    CHECK(g[j] == doctest::Approx(fd).epsilon(1e-7).scale(1.0));
  }
  // Well defined up to and at the horizon of the density argument only when obs noise is positive.
  CHECK_THROWS_AS(log_h_noisy_obs(m, t, x, T, v, std::vector<double>{0.0, 1.0}), DomainError);
}

TEST_CASE("horizon guard") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const Field x{0.0, 0.0};
  CHECK_THROWS_AS(log_ptilde(m, 1.0, x, 1.0, x), DomainError);
  CHECK_THROWS_AS(log_ptilde(m, 1.0 - 1e-12, x, 1.0, x), DomainError);
  CHECK_THROWS_AS(grad_log_ptilde(m, 1.2, x, 1.0, x), DomainError);
  CHECK_NOTHROW(log_ptilde(m, 1.0 - 1e-9, x, 1.0, x));
}

TEST_CASE("bridge marginals agree with the forward-backward formula") {
  const auto m = SpectralModel::dirichlet_laplacian(4);
  const Field x0{0.3, 0.0, -0.2, 0.1}, y{0.5, -0.3, 0.1, 0.0};
  const double T = 1.0;
  const OuBridge bridge(m, x0, T, y);
  for (double t : {0.01, 0.25, 0.5, 0.9, 0.999}) {
    const auto law = bridge.marginal_mean_var(t);
    for (std::size_t j = 0; j < 4; ++j) {
      const double l = m.lambda(j);
      const double qt = m.q_t(j, t), qT = m.q_t(j, T);
      const double mean = std::exp(l * t) * x0[j] + std::exp(l * (T - t)) * qt / qT * (y[j] - std::exp(l * T) * x0[j]);
      const double var = qt - std::exp(2 * l * (T - t)) * qt * qt / qT;
      CHECK(law.mean[j] == doctest::Approx(mean).epsilon(1e-12).scale(1.0));
      CHECK(law.var.diag[j] == doctest::Approx(var).epsilon(1e-10).scale(1e-3));
    }
  }
  const auto end = bridge.marginal_mean_var(T);
  CHECK(end.mean == y);
}

TEST_CASE("exact bridge sampling: pinned endpoint and Monte Carlo marginals") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const Field x0{0.0, 0.0}, y{0.5, -0.3};
  const auto grid = TimeGrid::uniform(1.0, 21);
  const OuBridge bridge(m, x0, 1.0, y);
  const std::size_t N = 20000, k = 8;
  std::vector<double> a(N), b(N);
  for (std::size_t p = 0; p < N; ++p) {
    const auto path = bridge.sample(grid, 8, p);
    CHECK(path.states.back() == y);
    a[p] = path.states[k][0];
    b[p] = path.states[k][1];
  }
  const auto law = bridge.marginal_mean_var(grid[k]);
  const auto ma = mean_estimate(a), va = variance_estimate(a);
  const auto mb = mean_estimate(b), vb = variance_estimate(b);
  CHECK(std::abs(ma.mean - law.mean[0]) < 4 * ma.stderr_);
  CHECK(std::abs(va.mean - law.var.diag[0]) < 4 * va.stderr_);
  CHECK(std::abs(mb.mean - law.mean[1]) < 4 * mb.stderr_);
  CHECK(std::abs(vb.mean - law.var.diag[1]) < 4 * vb.stderr_);
  CHECK_THROWS_AS(bridge.sample(TimeGrid::uniform(0.9, 5), 1), DomainError);
}

TEST_CASE("Chapman-Kolmogorov: Gauss-Hermite residual and an adaptive-quadrature oracle") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  for (std::size_t mode : {0, 1}) {
    const double qinf = m.q_inf(mode);
    for (double x : {-0.5, 0.0, 0.8})
      for (double y : {-0.3, 0.1, 0.6})
        for (double r : {0.25, 0.5, 0.75}) {
          CHECK(chapman_kolmogorov_residual(m, mode, 0.0, x, r, 1.0, y) < 1e-8);
          // Integral over z of ptilde(0,x;r,z) ptilde(r,z;1,y) nu(dz) with nu's density written out.
          auto f = [&](double z) {
            return std::exp(log_ptilde_mode(m, mode, 0.0, x, r, z) + log_ptilde_mode(m, mode, r, z, 1.0, y)) *
                   normal_pdf(z, 0.0, qinf);
          };
          const double sd = std::sqrt(qinf);
          const double composed =
              boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -12 * sd, 12 * sd, 20, 1e-13);
          const double direct = std::exp(log_ptilde_mode(m, mode, 0.0, x, 1.0, y));
          CHECK(composed == doctest::Approx(direct).epsilon(1e-9));
        }
  }
}
