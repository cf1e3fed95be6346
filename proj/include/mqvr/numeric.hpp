#pragma once

#include <cmath>
#include <span>

#include "mqvr/matrix.hpp"

namespace mqvr {

/// Compensated (Neumaier) running sum. Order-sensitive only at the 1-ulp level.
class NeumaierSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double compensated_sum(std::span<const double> values);
double compensated_mean(std::span<const double> values);

/// Numerically stable softmax; max-shifted.
Vector softmax(std::span<const double> logits);

/// Backward of softmax: given y = softmax(x) and dL/dy, returns dL/dx.
Vector softmax_backward(std::span<const double> y, std::span<const double> dy);

double log_sum_exp(std::span<const double> values);

}  // namespace mqvr
