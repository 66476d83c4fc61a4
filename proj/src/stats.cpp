#include "clens/stats.hpp"

#include <cmath>

#include "clens/errors.hpp"

namespace clens {

void CompensatedSum::add(double x) noexcept {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    correction_ += (sum_ - t) + x;
  } else {
    correction_ += (x - t) + sum_;
  }
  sum_ = t;
}

double compensated_sum(std::span<const double> xs) noexcept {
  CompensatedSum acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw EmptyInput("mean of an empty sequence");
  return compensated_sum(xs) / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
  const double m = mean(xs);
  if (xs.size() < 2) return 0.0;
  CompensatedSum acc;
  for (double x : xs) acc.add((x - m) * (x - m));
  return acc.value() / static_cast<double>(xs.size() - 1);
}

double Summary::standard_error() const {
  return count == 0 ? 0.0 : sd / std::sqrt(static_cast<double>(count));
}

Summary summarize(std::span<const double> xs) {
  Summary s;
  s.count = xs.size();
  s.mean = mean(xs);
  s.sd = std::sqrt(sample_variance(xs));
  const double half = 1.96 * s.standard_error();
  s.ci_low = s.mean - half;
  s.ci_high = s.mean + half;
  return s;
}

}  // namespace clens
