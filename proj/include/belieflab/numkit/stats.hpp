#pragma once

#include <span>

namespace belieflab::numkit {

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_sd(std::span<const double> xs);
/// Standard error of the mean.
double sem(std::span<const double> xs);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  /// Two-sided p-value.
  double p = 1.0;
};

/// Welch's unequal-variance two-sample t-test. Needs at least two values per sample.
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace belieflab::numkit
