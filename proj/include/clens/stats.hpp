#pragma once

#include <cstddef>
#include <span>

namespace clens {

/// Neumaier-compensated running sum, so reordered accumulations agree to
/// rounding of the final result.
class CompensatedSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + correction_; }

 private:
  double sum_ = 0.0;
  double correction_ = 0.0;
};

double compensated_sum(std::span<const double> xs) noexcept;

/// Arithmetic mean. Throws EmptyInput on an empty span.
double mean(std::span<const double> xs);

/// Unbiased sample variance (divisor n-1); 0 for a single value.
double sample_variance(std::span<const double> xs);

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double sd = 0.0;
  double ci_low = 0.0;   ///< mean - 1.96 sd / sqrt(count)
  double ci_high = 0.0;  ///< mean + 1.96 sd / sqrt(count)

  double standard_error() const;
};

/// Mean, sample standard deviation and normal-approximation 95% CI.
Summary summarize(std::span<const double> xs);

}  // namespace clens
