#pragma once

// Least-squares learners and the exact conditional prediction variances of
// the merged and optimally weighted ensemble predictors.

#include <cstddef>
#include <span>

#include "clens/types.hpp"

namespace clens {

/// Relative pivot threshold: a Cholesky pivot of X^T X below
/// kRankTolerance * trace(X^T X) / p is treated as rank deficiency.
inline constexpr double kRankTolerance = 1e-10;

class OlsFit {
 public:
  /// Factors `gram` (= X^T X) and solves against `xty` (= X^T Y).
  /// Throws RankDeficient when the factorization pivots fall below tolerance.
  OlsFit(const Matrix& gram, const Vector& xty, std::size_t n_rows);

  const Vector& coefficients() const { return beta_; }
  /// Lower-triangular L with L L^T = X^T X.
  const Matrix& gram_factor() const { return factor_; }
  std::size_t n_rows() const { return n_rows_; }
  std::size_t p_cols() const { return static_cast<std::size_t>(beta_.size()); }

  double predict(const Vector& x) const;
  /// x^T (X^T X)^{-1} x via one triangular solve.
  double qform(const Vector& x) const;
  /// Predictions for every row of X.
  Vector predict_rows(const Matrix& X) const;

 private:
  Matrix factor_;
  Vector beta_;
  std::size_t n_rows_;
};

/// X^T X (full symmetric matrix).
Matrix gram(const Matrix& X);

OlsFit fit_ols(const Matrix& X, const Vector& Y);

double predict(const OlsFit& fit, const Vector& x);

/// x^T (X^T X)^{-1} x.
double qform(const Matrix& X, const Vector& x);

/// sigma^2 x^T [sum_t X_t^T X_t]^{-1} x.
double merged_cond_variance(std::span<const Matrix> blocks, const Vector& x, double sigma = 1.0);

/// sigma^2 [sum_t (x^T (X_t^T X_t)^{-1} x)^{-1}]^{-1}.
double ensemble_opt_cond_variance(std::span<const Matrix> blocks, const Vector& x,
                                  double sigma = 1.0);

/// Same quantities from precomputed Gram matrices (avoids refactoring in loops).
double merged_cond_variance_from_grams(std::span<const Matrix> grams, const Vector& x,
                                       double sigma = 1.0);
double ensemble_opt_cond_variance_from_grams(std::span<const Matrix> grams, const Vector& x,
                                             double sigma = 1.0);

}  // namespace clens
