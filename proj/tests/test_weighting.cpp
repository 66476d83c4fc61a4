#include <doctest.h>

#include <limits>
#include <vector>

#include <Eigen/QR>

#include "clens/datagen.hpp"
#include "clens/errors.hpp"
#include "clens/linmodels.hpp"
#include "clens/rng.hpp"
#include "clens/weighting.hpp"

using namespace clens;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix A(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) A(i, j) = rng.normal();
  return A;
}

/// Exhaustive active-set oracle: solve the unconstrained problem on every
/// support pattern and keep the best feasible objective.
double nnls_brute_force(const Matrix& A, const Vector& b) {
  const auto K = A.cols();
  double best = b.squaredNorm();  // empty support
  for (unsigned mask = 1; mask < (1U << K); ++mask) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index k = 0; k < K; ++k)
      if (mask & (1U << k)) cols.push_back(k);
    Matrix sub(A.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = A.col(cols[c]);
    const Vector z = sub.colPivHouseholderQr().solve(b);
    if ((z.array() < 0.0).any()) continue;
    best = std::min(best, (sub * z - b).squaredNorm());
  }
  return best;
}

/// Minimum of sum w_t^2 v_t over the simplex by grid search (K = 2 or 3),
/// refined by a finer local grid.
double ivw_grid_min(const std::vector<double>& v) {
  auto objective = [&](const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t t = 0; t < v.size(); ++t) s += w[t] * w[t] * v[t];
    return s;
  };
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> arg;
  auto scan = [&](double lo1, double hi1, double lo2, double hi2, double step) {
    for (double a = std::max(0.0, lo1); a <= std::min(1.0, hi1) + 1e-15; a += step) {
      if (v.size() == 2) {
        const std::vector<double> w = {a, 1.0 - a};
        if (objective(w) < best) best = objective(w), arg = w;
        continue;
      }
      for (double b = std::max(0.0, lo2); b <= std::min(1.0 - a, hi2) + 1e-15; b += step) {
        const std::vector<double> w = {a, b, std::max(0.0, 1.0 - a - b)};
        if (objective(w) < best) best = objective(w), arg = w;
      }
    }
  };
  scan(0.0, 1.0, 0.0, 1.0, 1e-3);
  for (double step : {1e-5, 1e-7}) {
    const std::vector<double> c = arg;
    const double r = step * 1e3;
    scan(c[0] - r, c[0] + r, c.size() > 2 ? c[1] - r : 0.0, c.size() > 2 ? c[1] + r : 1.0, step);
  }
  return best;
}

}  // namespace

TEST_CASE("average weights") {
  CHECK(average_weights(2).w == Vector::Constant(2, 0.5));
  CHECK(average_weights(5).w == Vector::Constant(5, 0.2));
  for (std::size_t K : {1UL, 3UL, 7UL, 1000UL, 1000000UL}) CHECK(average_weights(K).on_simplex(1e-12));
}

TEST_CASE("oracle IVW weights") {
  const std::vector<double> equal = {1.0, 1.0};
  CHECK(ivw_oracle_weights(equal).w.isApprox(Vector::Constant(2, 0.5)));
  const std::vector<double> v = {1.0, 3.0};
  const WeightVector w = ivw_oracle_weights(v);
  CHECK(w.w[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(w.w[1] == doctest::Approx(0.25).epsilon(1e-15));
  const std::vector<double> bad = {1.0, 0.0};
  CHECK_THROWS_AS(ivw_oracle_weights(bad), NonpositiveVariance);
}

TEST_CASE("oracle IVW matches the fine grid argmin for two clusters") {
  const std::vector<double> v = {0.4, 2.6};
  double best_w = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (long i = 0; i <= 1000000; ++i) {
    const double w = static_cast<double>(i) * 1e-6;
    const double obj = w * w * v[0] + (1.0 - w) * (1.0 - w) * v[1];
    if (obj < best) best = obj, best_w = w;
  }
  CHECK(std::abs(ivw_oracle_weights(v).w[0] - best_w) < 1e-5);
}

TEST_CASE("oracle IVW attains the simplex grid minimum") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = trial % 2 == 0 ? 2 : 3;
    std::vector<double> v(K);
    for (double& x : v) x = 0.1 + 5.0 * rng.uniform();
    const WeightVector w = ivw_oracle_weights(v);
    double obj = 0.0;
    for (std::size_t t = 0; t < K; ++t) obj += w.w[static_cast<Eigen::Index>(t)] * w.w[static_cast<Eigen::Index>(t)] * v[t];
    CHECK(obj <= ivw_grid_min(v) + 1e-9);
    CHECK(w.on_simplex(1e-12));
  }
}

TEST_CASE("empirical IVW on constructed residuals") {
  // Three clusters of four rows; Y = 0 and learner t's residuals over other
  // clusters' rows alternate +-a_t, so the held-out spread is a_t^2.
  const std::vector<int> labels = {1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3};
  const Vector Y = Vector::Zero(12);
  const double a[3] = {1.0, 1.0, std::sqrt(10.0)};
  Matrix P(12, 3);
  for (Eigen::Index i = 0; i < 12; ++i)
    for (Eigen::Index t = 0; t < 3; ++t) P(i, t) = (i % 2 == 0 ? 1.0 : -1.0) * a[t];
  const WeightVector w = ivw_empirical_weights(P, Y, labels);
  CHECK(w.w[0] == doctest::Approx(10.0 / 21.0).epsilon(1e-12));
  CHECK(w.w[1] == doctest::Approx(10.0 / 21.0).epsilon(1e-12));
  CHECK(w.w[2] == doctest::Approx(1.0 / 21.0).epsilon(1e-12));
  CHECK(w.on_simplex());
  const Matrix flat = Matrix::Zero(12, 3);
  CHECK_THROWS_AS(ivw_empirical_weights(flat, Y, labels), DegenerateVariance);
}

TEST_CASE("identical clusters get equal weights") {
  const Matrix X1 = gen_cluster(ClusterSpec::gaussian(50, Vector::Zero(3)), 1);
  OutcomeSpec o = gen_beta(3, 3, 2);
  Dataset d;
  d.X.resize(100, 3);
  d.X << X1, X1;
  const Vector y1 = X1 * o.beta + 0.3 * gen_cluster(ClusterSpec::gaussian(50, Vector::Zero(1)), 3).col(0);
  d.Y.resize(100);
  d.Y << y1, y1;
  d.labels.assign(50, 1);
  d.labels.insert(d.labels.end(), 50, 2);
  d.clusters = {ClusterSpec::gaussian(50, Vector::Zero(3)), ClusterSpec::gaussian(50, Vector::Zero(3))};
  d.outcome = o;
  const std::vector<OlsFit> fits = {fit_ols(X1, y1), fit_ols(X1, y1)};
  CHECK(ivw_empirical_weights(fits, d).w.isApprox(Vector::Constant(2, 0.5), 1e-12));
  CHECK(stacking_weights(fits, d).w.isApprox(Vector::Constant(2, 0.5), 1e-12));
}

TEST_CASE("nnls small cases") {
  const Matrix I = Matrix::Identity(2, 2);
  Vector b(2);
  b << 1.0, -2.0;
  CHECK(nnls(I, b).x.isApprox(Vector::Unit(2, 0)));
  b << 0.3, 0.7;
  CHECK((nnls(I, b).x - b).norm() < 1e-15);
}

TEST_CASE("nnls agrees with exhaustive support enumeration") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix A = random_matrix(20, 4, rng);
    const Vector b = random_matrix(20, 1, rng).col(0);
    const Vector x = nnls(A, b).x;
    CHECK((x.array() >= 0.0).all());
    CHECK(std::abs((A * x - b).squaredNorm() - nnls_brute_force(A, b)) < 1e-8);
  }
}

TEST_CASE("nnls KKT conditions on 500 random instances") {
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const auto m = static_cast<Eigen::Index>(3 + rng.index(30));
    const auto K = static_cast<Eigen::Index>(1 + rng.index(8));
    const Matrix A = random_matrix(m, K, rng);
    const Vector b = random_matrix(m, 1, rng).col(0);
    const Vector x = nnls(A, b).x;
    CHECK((x.array() >= 0.0).all());
    CHECK(nnls_kkt_violation(A, b, x) <= 1e-9);
  }
}

TEST_CASE("nnls reports non-convergence at a tiny iteration cap") {
  Rng rng(13);
  const Matrix A = random_matrix(30, 6, rng);
  const Vector b = A * Vector::Ones(6);
  NnlsOptions opts;
  opts.max_iterations = 1;
  CHECK_THROWS_AS(nnls(A, b, opts), NoConvergence);
}

TEST_CASE("stacking on a zero target has no normalizable solution") {
  const Matrix P = Matrix::Ones(4, 2);
  CHECK_THROWS_AS(stacking_weights(P, -Vector::Ones(4), {1, 1, 2, 2}), AllZeroWeights);
  StackingOptions raw;
  raw.normalize = false;
  CHECK(stacking_weights(P, -Vector::Ones(4), {1, 1, 2, 2}, raw).w.isZero());
}

TEST_CASE("weights are unchanged when every cluster's data is duplicated") {
  std::vector<ClusterSpec> clusters;
  for (const Vector& mu : gen_means_on_sphere(3, 4, 1.0, 5)) clusters.push_back(ClusterSpec::gaussian(40, mu));
  const Dataset d = gen_dataset(clusters, gen_beta(4, 4, 6), 7);
  std::vector<OlsFit> fits;
  for (int t = 1; t <= 3; ++t) fits.push_back(fit_ols(d.cluster_X(t), d.cluster_Y(t)));
  const Matrix P = prediction_matrix(fits, d.X);
  Matrix P2(2 * P.rows(), P.cols());
  P2 << P, P;
  Vector Y2(2 * d.Y.size());
  Y2 << d.Y, d.Y;
  std::vector<int> labels2 = d.labels;
  labels2.insert(labels2.end(), d.labels.begin(), d.labels.end());
  CHECK((ivw_empirical_weights(P, d.Y, d.labels).w - ivw_empirical_weights(P2, Y2, labels2).w).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((stacking_weights(P, d.Y, d.labels).w - stacking_weights(P2, Y2, labels2).w).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("stacking weights stay near uniform for five gaussian clusters") {
  int within = 0;
  int masked_sums = 0;
  int plain_sums = 0;
  const int R = 100;
  for (int r = 0; r < R; ++r) {
    std::vector<ClusterSpec> clusters;
    for (const Vector& mu : gen_means_on_sphere(5, 10, 1.0, 1000 + r)) clusters.push_back(ClusterSpec::gaussian(200, mu));
    const Dataset d = gen_dataset(clusters, gen_beta(10, 10, 2000 + r), 3000 + r);
    std::vector<OlsFit> fits;
    for (int t = 1; t <= 5; ++t) fits.push_back(fit_ols(d.cluster_X(t), d.cluster_Y(t)));
    const WeightVector w = stacking_weights(fits, d);
    CHECK(w.on_simplex());
    if ((w.w.array() >= 0.1).all() && (w.w.array() <= 0.3).all()) ++within;
    // With own-cluster rows masked, each row sees only K-1 of the columns,
    // so the raw NNLS sum sits near K/(K-1) = 1.25 rather than 1.
    if (w.raw_sum >= 1.15 && w.raw_sum <= 1.35) ++masked_sums;
    StackingOptions plain;
    plain.withhold_own_cluster = false;
    const double raw = stacking_weights(fits, d, plain).raw_sum;
    if (raw >= 0.9 && raw <= 1.1) ++plain_sums;
  }
  CHECK(within >= 90);
  CHECK(masked_sums == R);
  CHECK(plain_sums == R);
}

TEST_CASE("ensemble prediction") {
  const std::vector<double> preds = {1.0, 3.0};
  CHECK(ensemble_predict(preds, average_weights(2)) == 2.0);
  const std::vector<double> same = {4.5, 4.5, 4.5};
  CHECK(ensemble_predict(same, average_weights(3)) == doctest::Approx(4.5).epsilon(1e-15));
  WeightVector e1 = average_weights(3);
  e1.w = Vector::Unit(3, 0);
  CHECK(ensemble_predict(same, e1) == 4.5);
  const std::vector<double> wrong = {1.0};
  CHECK_THROWS_AS(ensemble_predict(wrong, average_weights(2)), DimensionMismatch);
}
