#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace clens::testing {

/// Pearson chi-square statistic against equal expected counts.
inline double chi_square_uniform(std::span<const std::size_t> counts) {
  double total = 0.0;
  for (std::size_t c : counts) total += static_cast<double>(c);
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0.0;
  for (std::size_t c : counts) stat += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return stat;
}

/// Upper 0.001 quantile of chi-square with `df` degrees of freedom
/// (Wilson-Hilferty approximation, z = 3.0902).
inline double chi_square_crit_001(double df) {
  const double z = 3.090232306167813;
  const double a = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - a + z * std::sqrt(a), 3);
}

}  // namespace clens::testing
