#include "clens/rng.hpp"

#include <cmath>
#include <numbers>

namespace clens {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double Rng::laplace(double scale) {
  const double u = uniform() - 0.5;
  const double tail = 1.0 - 2.0 * std::abs(u);
  if (tail <= 0.0) return 0.0;
  return (u < 0.0 ? scale : -scale) * std::log(tail);
}

}  // namespace clens
