#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace spde {

/// Neumaier-compensated running sum; order of additions fixes the result.
class CompensatedSum {
 public:
  void add(double v);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct MeanEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// Sample mean and its standard error (n - 1 normalization).
MeanEstimate mean_estimate(std::span<const double> values);

/// Sample variance and the standard error of that variance estimate.
MeanEstimate variance_estimate(std::span<const double> values);

/// Trapezoidal integral of node values over [nodes[0], upto], linearly
/// interpolating the integrand inside the interval containing `upto`.
double trapezoid_until(std::span<const double> nodes, std::span<const double> values, double upto);

/// Cumulative trapezoid at every node (first entry 0).
std::vector<double> cumulative_trapezoid(std::span<const double> nodes, std::span<const double> values);

}  // namespace spde
