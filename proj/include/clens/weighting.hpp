#pragma once

// Ensemble weighting schemes for cluster-specific learners and the
// nonnegative least-squares solver behind stacking.
//
// The data-driven schemes work on a prediction matrix P (n x K) with
// P(i, k) = prediction of learner k at training row i, so they apply to any
// kind of single-cluster learner.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "clens/datagen.hpp"
#include "clens/linmodels.hpp"
#include "clens/types.hpp"

namespace clens {

enum class Scheme { average, ivw_oracle, ivw_empirical, stacking };

std::string to_string(Scheme s);

struct WeightVector {
  Vector w;
  Scheme scheme = Scheme::average;
  bool normalized = true;
  /// Sum of the weights before normalization (equals 1 for closed-form schemes).
  double raw_sum = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(w.size()); }
  /// True when w >= 0 and |sum - 1| <= tol.
  bool on_simplex(double tol = 1e-12) const;
};

WeightVector average_weights(std::size_t K);

/// w_t = (sum_s 1/v_s)^{-1} / v_t. Throws NonpositiveVariance unless all v_t > 0.
WeightVector ivw_oracle_weights(std::span<const double> variances);

struct IvwOptions {
  /// Use held-out mean squared error instead of held-out residual variance.
  bool use_mse = false;
};

/// Held-out spread of learner t's residuals over all rows whose label differs
/// from t (population divisor). Inverse-spread weights, normalized.
/// Throws DegenerateVariance if a spread is zero.
WeightVector ivw_empirical_weights(const Matrix& predictions, const Vector& Y,
                                   const std::vector<int>& labels, IvwOptions opts = {});

WeightVector ivw_empirical_weights(std::span<const OlsFit> fits, const Dataset& data,
                                   IvwOptions opts = {});

struct NnlsOptions {
  double tol = 1e-10;
  /// 0 selects the default cap of 10 * K * m iterations.
  std::size_t max_iterations = 0;
};

struct NnlsResult {
  Vector x;
  std::size_t iterations = 0;
};

/// Lawson-Hanson active-set solution of min ||A x - b|| s.t. x >= 0.
/// Throws NoConvergence if the iteration cap is hit.
NnlsResult nnls(const Matrix& A, const Vector& b, NnlsOptions opts = {});

/// Largest KKT violation of `x` for the NNLS problem, relative to ||A^T b||_inf.
/// Zero coordinates need gradient >= 0, positive ones need gradient == 0.
double nnls_kkt_violation(const Matrix& A, const Vector& b, const Vector& x);

struct StackingOptions {
  /// Column k ignores the rows of cluster k (their entries are zeroed).
  bool withhold_own_cluster = true;
  /// Divide the NNLS solution by its sum.
  bool normalize = true;
  NnlsOptions nnls{};
};

/// NNLS of Y on the (optionally masked) prediction matrix.
/// Throws AllZeroWeights when normalization is requested for a zero solution.
WeightVector stacking_weights(const Matrix& predictions, const Vector& Y,
                              const std::vector<int>& labels, StackingOptions opts = {});

WeightVector stacking_weights(std::span<const OlsFit> fits, const Dataset& data,
                              StackingOptions opts = {});

/// P(i, k) = fits[k].predict(row i of X).
Matrix prediction_matrix(std::span<const OlsFit> fits, const Matrix& X);

/// sum_t w_t * prediction_t.
double ensemble_predict(std::span<const double> predictions, const WeightVector& w);
double ensemble_predict(std::span<const OlsFit> fits, const WeightVector& w, const Vector& x);

}  // namespace clens
