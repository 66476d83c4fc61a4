#include "clens/linmodels.hpp"

#include <string>
#include <vector>

#include "clens/errors.hpp"

namespace clens {

namespace {

Matrix cholesky_lower(const Matrix& g) {
  if (g.rows() != g.cols() || g.rows() == 0) throw DimensionMismatch("Gram matrix must be square");
  const Eigen::Index p = g.rows();
  const double threshold = kRankTolerance * g.trace() / static_cast<double>(p);
  Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success || !(threshold > 0.0))
    throw RankDeficient("design is not full column rank");
  Matrix L = llt.matrixL();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double pivot = L(j, j) * L(j, j);
    if (!(pivot > threshold))
      throw RankDeficient("Cholesky pivot " + std::to_string(j) + " below rank tolerance");
  }
  return L;
}

double solve_qform(const Matrix& L, const Vector& x) {
  if (x.size() != L.rows()) throw DimensionMismatch("test point dimension mismatch");
  const Vector z = L.triangularView<Eigen::Lower>().solve(x);
  return z.squaredNorm();
}

Matrix sum_grams(std::span<const Matrix> grams) {
  if (grams.empty()) throw DimensionMismatch("at least one design block is required");
  Matrix total = grams.front();
  for (std::size_t t = 1; t < grams.size(); ++t) {
    if (grams[t].rows() != total.rows()) throw DimensionMismatch("blocks differ in column count");
    total += grams[t];
  }
  return total;
}

}  // namespace

OlsFit::OlsFit(const Matrix& g, const Vector& xty, std::size_t n_rows)
    : factor_(cholesky_lower(g)), n_rows_(n_rows) {
  if (xty.size() != g.rows()) throw DimensionMismatch("X^T Y length mismatch");
  const Vector z = factor_.triangularView<Eigen::Lower>().solve(xty);
  beta_ = factor_.transpose().triangularView<Eigen::Upper>().solve(z);
}

double OlsFit::predict(const Vector& x) const {
  if (x.size() != beta_.size()) throw DimensionMismatch("test point dimension mismatch");
  return x.dot(beta_);
}

double OlsFit::qform(const Vector& x) const { return solve_qform(factor_, x); }

Vector OlsFit::predict_rows(const Matrix& X) const {
  if (X.cols() != beta_.size()) throw DimensionMismatch("design column mismatch");
  return X * beta_;
}

Matrix gram(const Matrix& X) {
  Matrix g = Matrix::Zero(X.cols(), X.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
  return g.selfadjointView<Eigen::Lower>();
}

OlsFit fit_ols(const Matrix& X, const Vector& Y) {
  if (X.rows() != Y.size()) throw DimensionMismatch("X rows and Y length differ");
  if (X.rows() < X.cols()) throw RankDeficient("fewer rows than columns");
  return OlsFit(gram(X), X.transpose() * Y, static_cast<std::size_t>(X.rows()));
}

double predict(const OlsFit& fit, const Vector& x) { return fit.predict(x); }

double qform(const Matrix& X, const Vector& x) { return solve_qform(cholesky_lower(gram(X)), x); }

double merged_cond_variance_from_grams(std::span<const Matrix> grams, const Vector& x,
                                       double sigma) {
  return sigma * sigma * solve_qform(cholesky_lower(sum_grams(grams)), x);
}

double ensemble_opt_cond_variance_from_grams(std::span<const Matrix> grams, const Vector& x,
                                             double sigma) {
  if (grams.empty()) throw DimensionMismatch("at least one design block is required");
  double precision = 0.0;
  for (const Matrix& g : grams) precision += 1.0 / solve_qform(cholesky_lower(g), x);
  return sigma * sigma / precision;
}

double merged_cond_variance(std::span<const Matrix> blocks, const Vector& x, double sigma) {
  std::vector<Matrix> grams;
  grams.reserve(blocks.size());
  for (const Matrix& b : blocks) grams.push_back(gram(b));
  return merged_cond_variance_from_grams(grams, x, sigma);
}

double ensemble_opt_cond_variance(std::span<const Matrix> blocks, const Vector& x, double sigma) {
  std::vector<Matrix> grams;
  grams.reserve(blocks.size());
  for (const Matrix& b : blocks) grams.push_back(gram(b));
  return ensemble_opt_cond_variance_from_grams(grams, x, sigma);
}

}  // namespace clens
