#include <cmath>
#include <vector>

#include <doctest.h>

#include "spde/guided_bridge.hpp"
#include "spde/h_transform.hpp"
#include "spde/stats.hpp"

using namespace spde;

namespace {

GuidedSpec exact_spec(Field y, double S = 0.95) { return GuidedSpec{std::move(y), 1.0, Conditioning::Exact, {}, S}; }

}  // namespace

TEST_CASE("guided paths are pinned at y and carry zero weight when F = 0") {
  const auto m = SpectralModel::dirichlet_laplacian(3);
  const Field y{0.5, -0.3, 0.1};
  const GuidedSampler s(m, Nonlinearity::zero(), exact_spec(y), TimeGrid::geometric_toward_end(1.0, 64));
  for (std::size_t p = 0; p < 20; ++p) {
    const auto wp = s.simulate(Field(3), 1, p);
    CHECK(wp.path.states.back() == y);
    CHECK(wp.log_weight == 0.0);
  }
}

TEST_CASE("guided sampler preconditions") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const Field y{0.1, 0.2};
  CHECK_THROWS_AS(GuidedSampler(m, Nonlinearity::zero(), exact_spec(y), TimeGrid::uniform(1.0, 65)), DomainError);
  CHECK_THROWS_AS(GuidedSampler(m, Nonlinearity::zero(), exact_spec(y), TimeGrid::geometric_toward_end(0.9, 65)),
                  DomainError);
  CHECK_THROWS_AS(GuidedSampler(m, Nonlinearity::zero(), exact_spec(y, 1.0), TimeGrid::geometric_toward_end(1.0, 65)),
                  DomainError);
  GuidedSpec noisy{y, 1.0, Conditioning::NoisyObs, {0.1, -0.1}, 0.9};
  CHECK_THROWS_AS(GuidedSampler(m, Nonlinearity::zero(), noisy, TimeGrid::uniform(1.0, 65)), DomainError);
  noisy.obs_var = {0.1, 0.1};
  CHECK_NOTHROW(GuidedSampler(m, Nonlinearity::zero(), noisy, TimeGrid::uniform(1.0, 65)));
}

TEST_CASE("streaming, storage and weight recomputation agree") {
  const auto m = SpectralModel::dirichlet_laplacian(3);
  const auto F = Nonlinearity::bounded_rational(0.8);
  const Field y{0.4, 0.0, -0.2}, x0{0.1, 0.1, 0.1};
  const GuidedSampler s(m, F, exact_spec(y, 0.9), TimeGrid::geometric_toward_end(1.0, 128));
  const std::vector<double> cut{0.5, 0.9};
  for (std::size_t p = 0; p < 5; ++p) {
    const auto wp = s.simulate(x0, 9, p);
    std::size_t mismatches = 0;
    const auto lw = s.stream(x0, 9, p, cut, [&](std::size_t k, const Field& x) { mismatches += !(x == wp.path.states[k]); });
    CHECK(mismatches == 0);
    CHECK(lw[1] == wp.log_weight);
    CHECK(s.log_weight(wp.path, 0.9) == doctest::Approx(wp.log_weight).epsilon(1e-13));
    CHECK(s.log_weight(wp.path, 0.5) == doctest::Approx(lw[0]).epsilon(1e-13));
    CHECK(wp.log_weight != 0.0);
  }
}

TEST_CASE("log weight is the time integral of <F, D log ptilde> along the path") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const auto F = Nonlinearity::sine(0.5);
  const Field y{0.3, -0.2};
  const auto grid = TimeGrid::geometric_toward_end(1.0, 200);
  const auto wp = simulate_guided(m, F, Field{0.0, 0.0}, exact_spec(y, 0.8), grid, 4);
  std::vector<double> integrand;
  for (std::size_t k = 0; k < grid.size() && grid[k] < 1.0; ++k) {
    const Field Fx = apply_nonlinearity(m, F, grid[k], wp.path.states[k]);
    integrand.push_back(dot(Fx, grad_log_ptilde(m, grid[k], wp.path.states[k], 1.0, y)));
  }
  integrand.push_back(integrand.back());
  CHECK(wp.log_weight == doctest::Approx(trapezoid_until(grid.nodes(), integrand, 0.8)).epsilon(1e-12));
}

TEST_CASE("exact law of the linear scheme matches Monte Carlo of the scheme") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const Field y{0.5, -0.3}, x0{0.2, 0.0};
  const auto grid = TimeGrid::geometric_toward_end(1.0, 40);
  const GuidedSampler s(m, Nonlinearity::zero(), exact_spec(y), grid);
  const std::size_t k = grid.nearest_index(0.6), N = 20000;
  std::vector<double> a(N), b(N);
  for (std::size_t p = 0; p < N; ++p) {
    const auto wp = s.simulate(x0, 2, p);
    a[p] = wp.path.states[k][0];
    b[p] = wp.path.states[k][1];
  }
  const auto law = s.linear_scheme_moments(x0, k);
  const auto ma = mean_estimate(a), va = variance_estimate(a), mb = mean_estimate(b), vb = variance_estimate(b);
  CHECK(std::abs(ma.mean - law.mean[0]) < 4 * ma.stderr_);
  CHECK(std::abs(va.mean - law.var.diag[0]) < 4 * va.stderr_);
  CHECK(std::abs(mb.mean - law.mean[1]) < 4 * mb.stderr_);
  CHECK(std::abs(vb.mean - law.var.diag[1]) < 4 * vb.stderr_);
  CHECK(s.linear_scheme_moments(x0, grid.size() - 1).mean == y);
  CHECK_THROWS(GuidedSampler(m, Nonlinearity::sine(1.0), exact_spec(y), grid).linear_scheme_moments(x0, 3));
}

TEST_CASE("time-discretization bias of the guided scheme is first order") {
  const auto m = SpectralModel::dirichlet_laplacian(4);
  const Field y{0.5, -0.3, 0.1, 0.0}, x0(4);
  const OuBridge bridge(m, x0, 1.0, y);
  std::vector<double> bias;
  for (std::size_t n : {128, 256, 512, 1024}) {
    const auto grid = TimeGrid::geometric_toward_end(1.0, n);
    const GuidedSampler s(m, Nonlinearity::zero(), exact_spec(y), grid);
    const std::size_t k = grid.nearest_index(0.5);
    const auto law = s.linear_scheme_moments(x0, k);
    bias.push_back(std::abs(law.mean[0] - bridge.marginal_mean_var(grid[k]).mean[0]));
  }
  for (std::size_t i = 0; i + 1 < bias.size(); ++i) CHECK(bias[i] / bias[i + 1] == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("noisy-observation guiding: scheme law approaches the Gaussian posterior") {
  const SpectralModel m({-1.0, -4.0}, {1.0, 0.5});
  const Field v{0.6, -0.2}, x0{0.1, 0.0};
  const std::vector<double> s2{0.05, 0.1};
  const double T = 1.0, t = 0.5;
  const auto grid = TimeGrid::uniform(T, 2049);
  const GuidedSampler s(m, Nonlinearity::zero(), GuidedSpec{v, T, Conditioning::NoisyObs, s2, 0.9}, grid);
  const auto law = s.linear_scheme_moments(x0, grid.nearest_index(t));
  for (std::size_t j = 0; j < 2; ++j) {
    const double l = m.lambda(j), qt = m.q_t(j, t), e = std::exp(l * (T - t));
    const double mt = std::exp(l * t) * x0[j];
    const double gain = qt * e / (e * e * qt + m.q_t(j, T - t) + s2[j]);
    CHECK(law.mean[j] == doctest::Approx(mt + gain * (v[j] - e * mt)).epsilon(2e-3));
    CHECK(law.var.diag[j] == doctest::Approx(qt - gain * e * qt).epsilon(2e-3));
  }
}

TEST_CASE("self-normalized estimator") {
  std::vector<double> vals{1.0, 2.0, 3.0, 6.0};
  const auto eq = self_normalized_estimate(std::vector<double>(4, -3.0), vals);
  CHECK(eq.value == doctest::Approx(3.0));
  CHECK(eq.ess == doctest::Approx(4.0));
  const auto two = self_normalized_estimate(std::vector<double>{0.0, std::log(3.0)}, std::vector<double>{1.0, 5.0});
  CHECK(two.value == doctest::Approx(4.0));
  CHECK(two.ess == doctest::Approx(16.0 / 10.0));
  CHECK_THROWS_AS(self_normalized_estimate(std::vector<double>{-INFINITY}, std::vector<double>{1.0}), DomainError);

  // Importance sampling N(1, 1) from N(0, 1): log w = x - 1/2; the stderr must be calibrated.
  const NormalStream stream(5, StreamTag::Auxiliary, 0);
  int misses = 0;
  for (std::uint64_t rep = 0; rep < 40; ++rep) {
    std::vector<double> lw(2000), x(2000);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = stream.normal(rep * 2000 + i, 0);
      lw[i] = x[i] - 0.5;
    }
    const auto e = self_normalized_estimate(lw, x);
    misses += std::abs(e.value - 1.0) > 2.0 * e.stderr_;
  }
  CHECK(misses <= 8);  // about 2 expected at a two-sigma band
}

TEST_CASE("tilted endpoint sampler") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  TiltSpec tilt{Field{0.3, -0.1}, {0.02, 0.005}};
  std::vector<double> a(20000);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = endpoint_sampler_tilted(m, tilt, 7, i)[0];
  const auto me = mean_estimate(a), ve = variance_estimate(a);
  CHECK(std::abs(me.mean - 0.3) < 4 * me.stderr_);
  CHECK(std::abs(ve.mean - 0.02) < 4 * ve.stderr_);
  tilt.var[0] = 2 * m.q_inf(0);
  CHECK_THROWS_AS(tilt.validate(m), DomainError);
  CHECK_NOTHROW(TiltSpec::none(m).validate(m));
}

TEST_CASE("two-stage sampling: bridge endpoint, thread invariance") {
  const auto m = SpectralModel::dirichlet_laplacian(2);
  const auto grid = TimeGrid::geometric_toward_end(1.0, 64);
  const Field y{0.2, 0.1};
  const auto one = sample_conditioned(m, Nonlinearity::sine(0.5), Field(2), EndpointSampler{y}, 1.0, grid, 3, 50, 0.9, 1);
  const auto many = sample_conditioned(m, Nonlinearity::sine(0.5), Field(2), EndpointSampler{y}, 1.0, grid, 3, 50, 0.9, 3);
  REQUIRE(one.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(one[i].path.states.back() == y);
    CHECK(one[i].log_weight == many[i].log_weight);
    CHECK(one[i].path.states == many[i].path.states);
  }
  CHECK_THROWS(sample_conditioned(m, Nonlinearity::zero(), Field(2), EndpointSampler{y}, 1.0, grid, 3, 0, 0.9));

  const auto tilted = sample_conditioned(m, Nonlinearity::zero(), Field(2), EndpointSampler{TiltSpec::none(m)}, 1.0,
                                         grid, 3, 10, 0.9);
  CHECK(tilted[0].path.states.back() == draw_endpoint(m, TiltSpec::none(m), 3, 0));
  CHECK(tilted[0].path.states.back() != tilted[1].path.states.back());
}
