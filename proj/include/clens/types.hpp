#pragma once

#include <Eigen/Dense>

namespace clens {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace clens
