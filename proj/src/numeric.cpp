#include "mqvr/numeric.hpp"

#include <algorithm>
#include <limits>

#include "mqvr/errors.hpp"

namespace mqvr {

double compensated_sum(std::span<const double> values) {
  NeumaierSum s;
  for (double v : values) s.add(v);
  return s.value();
}

double compensated_mean(std::span<const double> values) {
  if (values.empty()) throw InvariantError("mean of an empty sequence");
  return compensated_sum(values) / static_cast<double>(values.size());
}

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Vector softmax_backward(std::span<const double> y, std::span<const double> dy) {
  if (y.size() != dy.size()) throw ShapeError("softmax_backward: length mismatch");
  const double inner = dot(y, dy);
  Vector dx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - inner);
  return dx;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += std::exp(v - mx);
  return mx + std::log(total);
}

}  // namespace mqvr
