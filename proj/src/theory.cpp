#include "clens/theory.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "clens/errors.hpp"

namespace clens::theory {

namespace {

void require(bool ok, const char* message) {
  if (!ok) throw DomainError(message);
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

std::string to_string(Learner l) { return l == Learner::ensemble ? "ensemble" : "merged"; }

Learner learner_from_string(const std::string& name) {
  if (name == "ensemble") return Learner::ensemble;
  if (name == "merged") return Learner::merged;
  throw DomainError("learner must be 'ensemble' or 'merged', got '" + name + "'");
}

double ols_highdim_ratio(double gamma, int K) {
  require(K >= 1, "K must be at least 1");
  require(finite(gamma) && gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(K * gamma < 1.0, "K * gamma must be below 1");
  return (1.0 - K * gamma) / (1.0 - gamma);
}

double mp_trace_inverse_limit(double gamma) {
  require(finite(gamma) && gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  return gamma / (1.0 - gamma);
}

double scl_qform_limit(double lambda, double gamma) {
  require(finite(lambda) && lambda > 0.0, "lambda must be positive");
  require(finite(gamma) && gamma >= 0.0, "gamma must be nonnegative");
  const double lg = lambda * gamma;
  require(lg < 1.0, "lambda * gamma must be below 1");
  return lg / (1.0 - lg);
}

double ensemble_qform_limit(std::span<const double> lambdas, double gamma) {
  require(!lambdas.empty(), "at least one cluster is required");
  double precision = 0.0;
  for (double l : lambdas) {
    const double q = scl_qform_limit(l, gamma);
    if (q == 0.0) return 0.0;
    precision += 1.0 / q;
  }
  return 1.0 / precision;
}

double fig1_theory_percent_change(double gamma_t) {
  require(finite(gamma_t) && gamma_t >= 0.0 && gamma_t < 1.0, "gamma_t must lie in [0, 1)");
  const double gamma = gamma_t / 2.0;
  return 100.0 * (1.0 / ols_highdim_ratio(gamma, 2) - 1.0);
}

double ensemble_variance_limit_d1(std::size_t p, std::span<const double> cluster_sizes,
                                  std::span<const double> mean_norms) {
  require(p >= 2, "p must be at least 2");
  require(!cluster_sizes.empty() && cluster_sizes.size() == mean_norms.size(),
          "one size and one mean norm per cluster are required");
  double precision = 0.0;
  for (std::size_t t = 0; t < cluster_sizes.size(); ++t) {
    require(cluster_sizes[t] > 0.0, "cluster sizes must be positive");
    const double m = mean_norms[t] * mean_norms[t];
    precision += cluster_sizes[t] / (static_cast<double>(p - 1) + 1.0 / (1.0 + m));
  }
  return 1.0 / precision;
}

double merged_variance_limit_d2(double n, std::span<const double> lambda_tilde,
                                std::span<const Vector> means) {
  require(n > 0.0, "n must be positive");
  require(!means.empty() && lambda_tilde.size() == means.size(),
          "one weight and one mean per cluster are required");
  const Eigen::Index p = means.front().size();
  require(p >= 1, "means must be nonempty");
  Matrix A = Matrix::Identity(p, p);
  for (std::size_t t = 0; t < means.size(); ++t) {
    require(means[t].size() == p, "means differ in length");
    require(lambda_tilde[t] >= 0.0, "cluster fractions must be nonnegative");
    A += lambda_tilde[t] * means[t] * means[t].transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(A, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseInverse().sum() / n;
}

double ensemble_limit_s1(std::size_t p, double lt1, double mm1, double mm2) {
  require(p >= 2, "p must be at least 2");
  require(lt1 > 0.0 && lt1 < 1.0, "cluster fraction must lie in (0, 1)");
  require(mm1 >= 0.0 && mm2 >= 0.0, "squared norms must be nonnegative");
  const double lt2 = 1.0 - lt1;
  const double q = static_cast<double>(p - 1);
  const double num = q * (1.0 + lt2 * mm1 + lt1 * mm2) + 1.0;
  const double den = q * (1.0 + mm1) * (1.0 + mm2) + 1.0 + lt1 * mm1 + lt2 * mm2;
  return q + num / den;
}

double merged_limit_s2_as_printed(std::size_t p, double lt1, const Vector& mu1, const Vector& mu2) {
  require(mu1.size() == mu2.size() && static_cast<std::size_t>(mu1.size()) == p,
          "means must have length p");
  require(lt1 > 0.0 && lt1 < 1.0, "cluster fraction must lie in (0, 1)");
  const double lt2 = 1.0 - lt1;
  const double m1 = mu1.squaredNorm();
  const double m2 = mu2.squaredNorm();
  const double cross = mu1.dot(mu2);
  const double g = 1.0 + lt1 * m1;
  const double num = lt2 * m2 - 2.0 * lt1 * lt2 / g * m2 * m1 + lt2 * lt1 * lt1 / (g * g) * m1 * m1;
  const double den = 1.0 + lt2 * m2 - (lt1 * lt2 / g) * cross * cross;
  return static_cast<double>(p) - lt1 * m1 / g - num / den;
}

double merged_limit_s2_exact(std::size_t p, double lt1, const Vector& mu1, const Vector& mu2) {
  require(mu1.size() == mu2.size() && static_cast<std::size_t>(mu1.size()) == p,
          "means must have length p");
  require(lt1 > 0.0 && lt1 < 1.0, "cluster fraction must lie in (0, 1)");
  const double lt[2] = {lt1, 1.0 - lt1};
  const Vector mus[2] = {mu1, mu2};
  return merged_variance_limit_d2(1.0, lt, mus);
}

double merged_limit_unit_norm_display(std::size_t p, double lt1) {
  require(lt1 > 0.0 && lt1 < 1.0, "cluster fraction must lie in (0, 1)");
  const double l1 = lt1;
  const double l2 = 1.0 - lt1;
  const double a = 1.0 + 2.0 * l1 * l2 - (3.0 * l1 * l1 * l2 + 2.0 * l1 * l2) / (1.0 + l1) +
                   (l1 * l1 * l2 + l1 * l1 * l1 * l2) / ((1.0 + l1) * (1.0 + l1));
  const double b = 2.0 + (l1 * l1 * l2 - l1 * l2) / (1.0 + l1) + l1 * l2;
  return static_cast<double>(p) - a / b;
}

double kappa_orthogonal_unit(std::size_t p) {
  require(p >= 2, "p must be at least 2");
  const double P = static_cast<double>(p);
  return ((P - 2.0) + 4.0 / 3.0) / (P - 0.5);
}

double cf_rate(double k_n, double p_n) {
  require(finite(k_n) && k_n > 2.0, "k_n must exceed 2");
  require(finite(p_n) && p_n > 0.0 && p_n <= 1.0, "p_n must lie in (0, 1]");
  return std::exp(std::log2(k_n) * std::log(1.0 - 0.75 * p_n));
}

double cf_rate_dyadic(int d, double p_n) {
  require(d >= 0, "depth must be nonnegative");
  require(finite(p_n) && p_n >= 0.0 && p_n <= 1.0, "p_n must lie in [0, 1]");
  const double c = 1.0 - 0.75 * p_n;
  double out = 1.0;
  for (int i = 0; i < d; ++i) out *= c;
  return out;
}

double cf_bound(double S, double k_n, double p_n, Learner learner) {
  require(finite(S) && S >= 1.0, "S must be at least 1");
  const double factor = learner == Learner::ensemble ? S / 8.0 : S / 4.0;
  return factor * cf_rate(k_n, p_n);
}

double cf_bound_general(std::uint64_t K, double omega, double S, double k_n, double p_n,
                        Learner learner) {
  require(K >= 1 && (K & (K - 1)) == 0, "K must be a power of two");
  require(finite(omega) && omega > 0.0, "omega must be positive");
  require(finite(S) && S >= 1.0, "S must be at least 1");
  int log2K = 0;
  while ((std::uint64_t{1} << log2K) < K) ++log2K;
  const double scale = omega * omega * S * cf_rate(k_n, p_n);
  if (learner == Learner::ensemble) return static_cast<double>(K) / 4.0 * scale;
  return std::ldexp(1.0, 2 * (log2K - 1)) * scale;
}

double dyadic_second_moment(double p_j, int d) { return cf_rate_dyadic(d, p_j); }

}  // namespace clens::theory
