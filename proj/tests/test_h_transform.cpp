#include <cmath>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "spde/h_transform.hpp"
#include "spde/ou_analytics.hpp"

using namespace spde;

namespace {

// E[phi(t + dt, X(t + dt)) | X(t) = x] for F = alpha x, where X is an OU
// process with rates l_j + alpha. <X(t+dt), a> is Gaussian, so the
// expectation of sin/cos is closed form: E sin(m + sN) = sin(m) e^{-s^2/2}.
double linear_expectation(const SpectralModel& m, double alpha, const ExpTestFunction& phi, double t, double dt,
                          const Field& x) {
  double mean = phi.c * (t + dt), var = 0.0;
  for (std::size_t j = 0; j < m.J(); ++j) {
    const double l = m.lambda(j) + alpha;
    mean += phi.a[j] * std::exp(l * dt) * x[j];
    var += phi.a[j] * phi.a[j] * m.q(j) * -std::expm1(2 * l * dt) / (-2 * l);
  }
  const double damp = std::exp(-0.5 * var);
  return (phi.phase == Phase::Sin ? std::sin(mean) : std::cos(mean)) * damp;
}

}  // namespace

TEST_CASE("L0 on exponential test functions: exact-Gaussian finite differences (linear F)") {
  const auto m = SpectralModel::dirichlet_laplacian(3, 0.5);
  const double alpha = 1.2;
  const Field x{0.4, -0.7, 0.2};
  for (Phase ph : {Phase::Sin, Phase::Cos}) {
    const ExpTestFunction phi{Field{0.9, -0.3, 0.15}, 0.6, ph};
    const double t = 0.3;
    auto D = [&](double dt) { return (linear_expectation(m, alpha, phi, t, dt, x) - phi.value(t, x)) / dt; };
    const double h = 1e-6;
    const double richardson = 2 * D(h / 2) - D(h);
    CHECK(l0_exp_test(m, Nonlinearity::linear_scale(alpha), phi, t, x) ==
          doctest::Approx(richardson).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("L0 with a nonlinear F matches the generator assembled from spatial finite differences") {
  const auto m = SpectralModel::dirichlet_laplacian(4);
  const auto F = Nonlinearity::sine(0.5);
  const Field x{0.3, -0.2, 0.5, 0.1};
  const ExpTestFunction phi{Field{0.7, 0.2, -0.4, 0.05}, -0.8, Phase::Cos};
  const double t = 0.45, h = 1e-4;
  const Field Fx = apply_nonlinearity(m, F, t, x);
  double gen = (phi.value(t + h, x) - phi.value(t - h, x)) / (2 * h);
  for (std::size_t j = 0; j < 4; ++j) {
    Field xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const double d1 = (phi.value(t, xp) - phi.value(t, xm)) / (2 * h);
    const double d2 = (phi.value(t, xp) - 2 * phi.value(t, x) + phi.value(t, xm)) / (h * h);
    gen += (m.lambda(j) * x[j] + Fx[j]) * d1 + 0.5 * m.q(j) * d2;
  }
  CHECK(l0_exp_test(m, F, phi, t, x) == doctest::Approx(gen).epsilon(1e-5).scale(1.0));
}

TEST_CASE("analytic gradients of the h-functions pass the finite-difference self check") {
  const auto m = SpectralModel::dirichlet_laplacian(4, 0.5);
  const std::vector<double> times{0.0, 0.5, 0.9};
  const GuidingH g(m, Nonlinearity::sine(0.5), 1.0, Field{0.5, -0.3, 0.1, 0.0});
  CHECK(gradient_self_check(g, 4, times, 20, 2.0, 1) < 1e-6);
  const NoisyObsH n(m, Nonlinearity::zero(), 1.0, Field{0.2, 0.1, 0.0, -0.1}, {0.1, 0.1, 0.2, 0.3});
  CHECK(gradient_self_check(n, 4, times, 20, 2.0, 2) < 1e-6);
  CHECK(n.generator_ratio() == GeneratorRatio::Harmonic);
  CHECK(g.generator_ratio() == GeneratorRatio::Available);
}

TEST_CASE("Lh/h for the guiding function is <F, D log h>") {
  const auto m = SpectralModel::dirichlet_laplacian(3);
  const auto F = Nonlinearity::bounded_rational(0.8);
  const Field y{0.5, -0.3, 0.1}, x{0.2, 0.4, -0.1};
  const GuidingH g(m, F, 1.0, y);
  CHECK(g.lh_over_h(0.3, x) == doctest::Approx(dot(apply_nonlinearity(m, F, 0.3, x), g.grad_log_h(0.3, x))));
  CHECK(GuidingH(m, Nonlinearity::zero(), 1.0, y).lh_over_h(0.3, x) == 0.0);
}

TEST_CASE("unit h gives E^h == 1 on both routes") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const auto path = simulate_path(m, Nonlinearity::sine(0.5), Field{0.1, 0.0}, TimeGrid::uniform(1.0, 33), 4);
  const UnitH h(2);
  for (double v : exp_martingale_from_definition(path, h)) CHECK(v == 1.0);
  for (double v : exp_martingale_from_girsanov(path, h, m)) CHECK(v == 1.0);
}

TEST_CASE("E^h for harmonic h: mean one on both routes; Girsanov route is an exact discrete martingale") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const GuidingH h(m, Nonlinearity::zero(), 1.0, Field{0.5, -0.3});
  const auto grid = TimeGrid::uniform(0.8, 65);
  const std::size_t N = 20000, k = 40;
  std::vector<double> def(N), gir(N), earlier(N), probe(N);
  for (std::size_t p = 0; p < N; ++p) {
    const auto path = simulate_path(m, Nonlinearity::zero(), Field{0.0, 0.0}, grid, 21, {p});
    const auto d = exp_martingale_from_definition(path, h);
    const auto g = exp_martingale_from_girsanov(path, h, m);
    def[p] = d[k];
    gir[p] = g[k];
    earlier[p] = d[20];
    probe[p] = std::sin(3.0 * path.states[20][0]);
  }
  const auto md = mean_estimate(def), mg = mean_estimate(gir);
  CHECK(std::abs(md.mean - 1.0) < 4 * md.stderr_);
  CHECK(std::abs(mg.mean - 1.0) < 4 * mg.stderr_);
  CHECK(std::abs(increment_orthogonality(def, earlier, probe)) < 4.0);
}

TEST_CASE("the two E^h constructions converge to each other as dt shrinks") {
  const auto m = SpectralModel::dirichlet_laplacian(1);
  const GuidingH h(m, Nonlinearity::sine(0.5), 1.0, Field{0.5});
  std::vector<double> medians;
  for (std::size_t n : {33, 129, 513}) {
    std::vector<double> gaps;
    for (std::size_t p = 0; p < 400; ++p) {
      const auto path = simulate_path(m, Nonlinearity::sine(0.5), Field{0.0}, TimeGrid::uniform(0.8, n), 6, {p});
      const double ld = log_exp_martingale_from_definition(path, h).back();
      const double lg = log_exp_martingale_from_girsanov(path, h, m).back();
      gaps.push_back(std::abs(std::expm1(lg - ld)));
    }
    std::nth_element(gaps.begin(), gaps.begin() + 200, gaps.end());
    medians.push_back(gaps[200]);
  }
  CHECK(medians[1] < 0.5 * medians[0]);
  CHECK(medians[2] < 0.5 * medians[1]);
}

TEST_CASE("paths must stay below the horizon of h") {
  const auto m = SpectralModel::dirichlet_laplacian(1);
  const GuidingH h(m, Nonlinearity::zero(), 1.0, Field{0.5});
  const auto path = simulate_path(m, Nonlinearity::zero(), Field{0.0}, TimeGrid::uniform(1.0, 9), 1);
  CHECK_THROWS_AS(log_exp_martingale_from_definition(path, h), DomainError);
  CHECK_NOTHROW(log_exp_martingale_from_girsanov(path, h, m));
  CHECK(novikov_path_value(path, h, m, 0.9) >= 1.0);
  CHECK_THROWS_AS(novikov_path_value(path, h, m, 1.0), DomainError);
}

TEST_CASE("Lipschitz probe never exceeds the closed form and is exact in one mode") {
  const auto m = SpectralModel::dirichlet_laplacian(4);
  std::vector<double> t_grid(50);
  for (std::size_t i = 0; i < t_grid.size(); ++i) t_grid[i] = 0.9 * i / 49.0;
  const GuidingH h(m, Nonlinearity::zero(), 1.0, Field{0.5, -0.3, 0.1, 0.0});
  const double closed = guiding_lipschitz_constant(m, 1.0, t_grid);
  const double probe = lipschitz_probe(h, m, t_grid, 200, 1.0, 3);
  CHECK(probe <= closed * (1 + 1e-12));
  CHECK(probe > 0.5 * closed);

  const SpectralModel one({-1.0}, {2.0});
  const GuidingH h1(one, Nonlinearity::zero(), 1.0, Field{0.7});
  CHECK(lipschitz_probe(h1, one, t_grid, 5, 1.0, 3) ==
        doctest::Approx(guiding_lipschitz_constant(one, 1.0, t_grid)).epsilon(1e-9));
}

TEST_CASE("Dynkin residual: stored-path and streaming evaluations agree; residual is centred") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const auto F = Nonlinearity::sine(0.5);
  const Field x0{0.2, -0.1};
  const auto grid = TimeGrid::uniform(1.0, 129);
  const std::vector<ExpTestFunction> phis{{Field{0.8, -0.5}, 0.3, Phase::Sin}, {Field{-0.2, 0.6}, 1.0, Phase::Cos}};
  const std::vector<double> times{0.25, 0.5, 1.0};
  const std::size_t N = 4000;
  std::vector<Path> paths;
  for (std::size_t p = 0; p < N; ++p) paths.push_back(simulate_path(m, F, x0, grid, 31, {p}));
  const auto streamed = dynkin_residual_simulated(m, F, x0, grid, phis, N, 31, times, 1);
  const auto streamed4 = dynkin_residual_simulated(m, F, x0, grid, phis, N, 31, times, 4);
  for (std::size_t f = 0; f < phis.size(); ++f) {
    const auto stored = dynkin_residual(paths, phis[f], m, F, times);
    for (std::size_t i = 0; i < times.size(); ++i) {
      CHECK(stored.estimate[i] == doctest::Approx(streamed[f].estimate[i]).epsilon(1e-12).scale(1e-12));
      CHECK(streamed4[f].estimate[i] == streamed[f].estimate[i]);
    }
    CHECK(streamed[f].max_statistic <= 4.0);
  }
}
