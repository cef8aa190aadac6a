#include "spde/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace spde {

void CompensatedSum::add(double v) {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v))
    comp_ += (sum_ - t) + v;
  else
    comp_ += (v - t) + sum_;
  sum_ = t;
}

MeanEstimate mean_estimate(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_estimate: no values");
  const auto n = static_cast<double>(values.size());
  CompensatedSum s;
  for (double v : values) s.add(v);
  const double mean = s.value() / n;
  if (values.size() == 1) return {mean, 0.0, 1};
  CompensatedSum ss;
  for (double v : values) ss.add((v - mean) * (v - mean));
  const double var = ss.value() / (n - 1.0);
  return {mean, std::sqrt(var / n), values.size()};
}

MeanEstimate variance_estimate(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("variance_estimate: need at least two values");
  const auto n = static_cast<double>(values.size());
  CompensatedSum s;
  for (double v : values) s.add(v);
  const double mean = s.value() / n;
  CompensatedSum s2, s4;
  for (double v : values) {
    const double d2 = (v - mean) * (v - mean);
    s2.add(d2);
    s4.add(d2 * d2);
  }
  const double m2 = s2.value() / n;
  const double m4 = s4.value() / n;
  const double var = s2.value() / (n - 1.0);
  return {var, std::sqrt(std::max(0.0, m4 - m2 * m2) / n), values.size()};
}

double trapezoid_until(std::span<const double> nodes, std::span<const double> values, double upto) {
  if (nodes.size() != values.size() || nodes.empty())
    throw std::invalid_argument("trapezoid_until: size mismatch");
  if (upto < nodes.front() || upto > nodes.back()) throw std::invalid_argument("trapezoid_until: upper limit outside grid");
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double a = nodes[k], b = nodes[k + 1];
    if (upto <= a) break;
    if (upto >= b) {
      total += 0.5 * (b - a) * (values[k] + values[k + 1]);
    } else {
      const double w = (upto - a) / (b - a);
      const double v_end = values[k] + w * (values[k + 1] - values[k]);
      total += 0.5 * (upto - a) * (values[k] + v_end);
      break;
    }
  }
  return total;
}

std::vector<double> cumulative_trapezoid(std::span<const double> nodes, std::span<const double> values) {
  if (nodes.size() != values.size()) throw std::invalid_argument("cumulative_trapezoid: size mismatch");
  std::vector<double> out(nodes.size(), 0.0);
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k)
    out[k + 1] = out[k] + 0.5 * (nodes[k + 1] - nodes[k]) * (values[k] + values[k + 1]);
  return out;
}

}  // namespace spde
