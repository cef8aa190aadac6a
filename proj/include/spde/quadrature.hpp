#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace spde {

/// Gauss-Hermite rule for integral f(u) e^{-u^2} du, nodes ascending.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Cached per n; safe to call concurrently.
const GaussHermiteRule& gauss_hermite(std::size_t n);

/// E[f(Z)], Z ~ N(mean, var), by an n-node Gauss-Hermite rule.
double gaussian_expectation(double mean, double var, const std::function<double(double)>& f, std::size_t n = 200);

inline constexpr std::size_t kDefaultHermiteNodes = 200;

}  // namespace spde
