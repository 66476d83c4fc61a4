#include "clens/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clens/errors.hpp"
#include "clens/stats.hpp"

namespace clens {

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::average: return "average";
    case Scheme::ivw_oracle: return "ivw_oracle";
    case Scheme::ivw_empirical: return "ivw";
    case Scheme::stacking: return "stacking";
  }
  return "unknown";
}

bool WeightVector::on_simplex(double tol) const {
  if (w.size() == 0) return false;
  if ((w.array() < 0.0).any()) return false;
  return std::abs(compensated_sum(std::span<const double>(w.data(), w.size())) - 1.0) <= tol;
}

namespace {

/// Divides by the compensated sum, then folds the leftover rounding error
/// into the largest entry so the normalized weights sum to 1 to the ulp.
Vector normalize_to_simplex(const Vector& raw, double total) {
  Vector w = raw / total;
  Eigen::Index largest = 0;
  w.maxCoeff(&largest);
  const double residual = 1.0 - compensated_sum(std::span<const double>(w.data(), w.size()));
  w[largest] += residual;
  return w;
}

void check_prediction_shapes(const Matrix& P, const Vector& Y, const std::vector<int>& labels) {
  if (P.rows() != Y.size() || static_cast<std::size_t>(Y.size()) != labels.size())
    throw DimensionMismatch("prediction matrix, outcomes and labels disagree in length");
  if (P.cols() < 2) throw DimensionMismatch("at least two learners are required");
}

}  // namespace

WeightVector average_weights(std::size_t K) {
  if (K < 1) throw DimensionMismatch("K must be at least 1");
  WeightVector out;
  out.w = Vector::Constant(static_cast<Eigen::Index>(K), 1.0 / static_cast<double>(K));
  out.scheme = Scheme::average;
  // 1/K rounds for K not a power of two; restore the exact unit sum.
  out.w = normalize_to_simplex(out.w, 1.0);
  return out;
}

WeightVector ivw_oracle_weights(std::span<const double> variances) {
  if (variances.empty()) throw DimensionMismatch("no variances given");
  Vector precision(static_cast<Eigen::Index>(variances.size()));
  for (std::size_t t = 0; t < variances.size(); ++t) {
    if (!(variances[t] > 0.0) || !std::isfinite(variances[t]))
      throw NonpositiveVariance("variance " + std::to_string(t + 1) + " is not positive");
    precision[static_cast<Eigen::Index>(t)] = 1.0 / variances[t];
  }
  WeightVector out;
  out.scheme = Scheme::ivw_oracle;
  out.w = normalize_to_simplex(
      precision, compensated_sum(std::span<const double>(precision.data(), precision.size())));
  return out;
}

WeightVector ivw_empirical_weights(const Matrix& P, const Vector& Y,
                                   const std::vector<int>& labels, IvwOptions opts) {
  check_prediction_shapes(P, Y, labels);
  const Eigen::Index K = P.cols();
  std::vector<double> spreads(static_cast<std::size_t>(K));
  for (Eigen::Index t = 0; t < K; ++t) {
    std::vector<double> residuals;
    for (Eigen::Index i = 0; i < Y.size(); ++i) {
      if (labels[static_cast<std::size_t>(i)] != t + 1) residuals.push_back(Y[i] - P(i, t));
    }
    if (residuals.empty())
      throw DegenerateVariance("learner " + std::to_string(t + 1) + " has no held-out rows");
    const double count = static_cast<double>(residuals.size());
    double spread = 0.0;
    if (opts.use_mse) {
      CompensatedSum acc;
      for (double r : residuals) acc.add(r * r);
      spread = acc.value() / count;
    } else {
      spread = sample_variance(residuals) * (count - 1.0) / count;
    }
    if (!(spread > 0.0))
      throw DegenerateVariance("learner " + std::to_string(t + 1) +
                               " has zero held-out residual spread");
    spreads[static_cast<std::size_t>(t)] = spread;
  }
  WeightVector out = ivw_oracle_weights(spreads);
  out.scheme = Scheme::ivw_empirical;
  return out;
}

WeightVector ivw_empirical_weights(std::span<const OlsFit> fits, const Dataset& data,
                                   IvwOptions opts) {
  return ivw_empirical_weights(prediction_matrix(fits, data.X), data.Y, data.labels, opts);
}

NnlsResult nnls(const Matrix& A, const Vector& b, NnlsOptions opts) {
  if (A.rows() != b.size()) throw DimensionMismatch("NNLS: rows of A and length of b differ");
  if (A.rows() < 1 || A.cols() < 1) throw DimensionMismatch("NNLS: empty problem");
  const Eigen::Index K = A.cols();
  const std::size_t cap = opts.max_iterations > 0
                              ? opts.max_iterations
                              : 10 * static_cast<std::size_t>(K) * static_cast<std::size_t>(A.rows());
  const Vector atb = A.transpose() * b;
  const double scale = std::max(atb.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());

  Vector x = Vector::Zero(K);
  std::vector<bool> passive(static_cast<std::size_t>(K), false);
  std::vector<bool> blocked(static_cast<std::size_t>(K), false);

  auto solve_passive = [&]() {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < K; ++j)
      if (passive[static_cast<std::size_t>(j)]) cols.push_back(j);
    Vector z = Vector::Zero(K);
    if (cols.empty()) return z;
    const Matrix sub = A(Eigen::all, cols);
    const Vector sol = sub.colPivHouseholderQr().solve(b);
    for (std::size_t c = 0; c < cols.size(); ++c) z[cols[c]] = sol[static_cast<Eigen::Index>(c)];
    return z;
  };

  NnlsResult result;
  Vector w = atb - A.transpose() * (A * x);
  while (true) {
    Eigen::Index enter = -1;
    double best = opts.tol * scale;
    for (Eigen::Index j = 0; j < K; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      if (!passive[sj] && !blocked[sj] && w[j] > best) {
        best = w[j];
        enter = j;
      }
    }
    if (enter < 0) break;
    passive[static_cast<std::size_t>(enter)] = true;

    bool first = true;
    while (true) {
      if (++result.iterations > cap)
        throw NoConvergence("NNLS did not converge within " + std::to_string(cap) + " iterations");
      Vector z = solve_passive();
      if (first && !(z[enter] > 0.0)) {
        // Rounding made the entering column useless; skip it until x changes.
        passive[static_cast<std::size_t>(enter)] = false;
        blocked[static_cast<std::size_t>(enter)] = true;
        break;
      }
      first = false;
      double alpha = std::numeric_limits<double>::infinity();
      Eigen::Index leaving = -1;
      for (Eigen::Index j = 0; j < K; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) {
          const double step = x[j] / (x[j] - z[j]);
          if (step < alpha) {
            alpha = step;
            leaving = j;
          }
        }
      }
      if (!std::isfinite(alpha)) {
        x = z;
        std::fill(blocked.begin(), blocked.end(), false);
        break;
      }
      x += alpha * (z - x);
      x[leaving] = 0.0;
      for (Eigen::Index j = 0; j < K; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (passive[sj] && x[j] <= 0.0) {
          passive[sj] = false;
          x[j] = 0.0;
        }
      }
    }
    w = atb - A.transpose() * (A * x);
  }
  result.x = x;
  return result;
}

double nnls_kkt_violation(const Matrix& A, const Vector& b, const Vector& x) {
  const Vector atb = A.transpose() * b;
  const double scale = std::max(atb.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const Vector grad = A.transpose() * (A * x) - atb;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x[j] < 0.0) return std::numeric_limits<double>::infinity();
    const double v = x[j] > 0.0 ? std::abs(grad[j]) : std::max(0.0, -grad[j]);
    worst = std::max(worst, v / scale);
  }
  return worst;
}

WeightVector stacking_weights(const Matrix& P, const Vector& Y, const std::vector<int>& labels,
                              StackingOptions opts) {
  check_prediction_shapes(P, Y, labels);
  Matrix design = P;
  if (opts.withhold_own_cluster) {
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
      const int own = labels[static_cast<std::size_t>(i)];
      if (own >= 1 && own <= design.cols()) design(i, own - 1) = 0.0;
    }
  }
  const Vector raw = nnls(design, Y, opts.nnls).x;
  WeightVector out;
  out.scheme = Scheme::stacking;
  out.raw_sum = compensated_sum(std::span<const double>(raw.data(), raw.size()));
  out.normalized = opts.normalize;
  if (opts.normalize) {
    if (!(out.raw_sum > 0.0)) throw AllZeroWeights("stacking returned the zero vector");
    out.w = normalize_to_simplex(raw, out.raw_sum);
  } else {
    out.w = raw;
  }
  return out;
}

WeightVector stacking_weights(std::span<const OlsFit> fits, const Dataset& data,
                              StackingOptions opts) {
  return stacking_weights(prediction_matrix(fits, data.X), data.Y, data.labels, opts);
}

Matrix prediction_matrix(std::span<const OlsFit> fits, const Matrix& X) {
  Matrix P(X.rows(), static_cast<Eigen::Index>(fits.size()));
  for (std::size_t k = 0; k < fits.size(); ++k)
    P.col(static_cast<Eigen::Index>(k)) = fits[k].predict_rows(X);
  return P;
}

double ensemble_predict(std::span<const double> predictions, const WeightVector& w) {
  if (predictions.size() != w.size())
    throw DimensionMismatch("weight count does not match learner count");
  CompensatedSum acc;
  for (std::size_t t = 0; t < predictions.size(); ++t)
    acc.add(w.w[static_cast<Eigen::Index>(t)] * predictions[t]);
  return acc.value();
}

double ensemble_predict(std::span<const OlsFit> fits, const WeightVector& w, const Vector& x) {
  std::vector<double> preds;
  preds.reserve(fits.size());
  for (const OlsFit& f : fits) preds.push_back(f.predict(x));
  return ensemble_predict(preds, w);
}

}  // namespace clens
