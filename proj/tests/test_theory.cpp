#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/LU>

#include "clens/errors.hpp"
#include "clens/rng.hpp"
#include "clens/theory.hpp"

using namespace clens;
using namespace clens::theory;

namespace {

double binomial_pmf(int d, int k, double p) {
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * static_cast<double>(d - k + i) / static_cast<double>(i);
  return c * std::pow(p, k) * std::pow(1.0 - p, d - k);
}

Vector unit(std::size_t p, Eigen::Index j) { return Vector::Unit(static_cast<Eigen::Index>(p), j); }

// (1/n) trace of the explicit inverse.
double trace_oracle(double n, const std::vector<double>& lt, const std::vector<Vector>& means) {
  const Eigen::Index p = means[0].size();
  Matrix A = Matrix::Identity(p, p);
  for (std::size_t t = 0; t < lt.size(); ++t) A += lt[t] * means[t] * means[t].transpose();
  return A.fullPivLu().inverse().trace() / n;
}

}  // namespace

TEST_CASE("high-dimensional OLS ratio") {
  CHECK(ols_highdim_ratio(0.25, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(ols_highdim_ratio(0.0, 5) == 1.0);
  CHECK(ols_highdim_ratio(0.1, 1) == 1.0);
  double prev = 1.0;
  for (double g = 0.01; g < 0.5; g += 0.01) {
    const double r = ols_highdim_ratio(g, 2);
    CHECK(r < prev);
    prev = r;
  }
  CHECK_THROWS_AS(ols_highdim_ratio(0.5, 2), DomainError);
  CHECK_THROWS_AS(ols_highdim_ratio(-0.1, 2), DomainError);
  CHECK_THROWS_AS(ols_highdim_ratio(0.1, 0), DomainError);
}

TEST_CASE("trace limits and their harmonic combination") {
  CHECK(mp_trace_inverse_limit(0.25) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(scl_qform_limit(1.0, 0.3) == mp_trace_inverse_limit(0.3));
  CHECK(scl_qform_limit(2.0, 0.25) == doctest::Approx(1.0).epsilon(1e-15));
  const std::array<double, 2> balanced = {2.0, 2.0};
  // Equal clusters: harmonic combination halves one cluster's limit.
  CHECK(ensemble_qform_limit(balanced, 0.125) == doctest::Approx(0.5 * scl_qform_limit(2.0, 0.125)).epsilon(1e-14));
  // Ratio of merged to ensemble limit reproduces the closed form.
  for (double g : {0.05, 0.1, 0.2, 0.3, 0.45})
    CHECK(mp_trace_inverse_limit(g) / ensemble_qform_limit(balanced, g) == doctest::Approx(ols_highdim_ratio(g, 2)).epsilon(1e-12));
  CHECK_THROWS_AS(mp_trace_inverse_limit(1.0), DomainError);
  CHECK_THROWS_AS(scl_qform_limit(2.0, 0.5), DomainError);
}

TEST_CASE("percent change curve") {
  CHECK(fig1_theory_percent_change(0.5) == doctest::Approx(50.0).epsilon(1e-13));
  CHECK(fig1_theory_percent_change(0.8) == doctest::Approx(200.0).epsilon(1e-13));
  CHECK(fig1_theory_percent_change(0.9) == doctest::Approx(450.0).epsilon(1e-13));
  CHECK(fig1_theory_percent_change(0.1) == doctest::Approx(100.0 / 18.0).epsilon(1e-13));
  CHECK_THROWS_AS(fig1_theory_percent_change(1.0), DomainError);
}

TEST_CASE("dyadic second moment equals the binomial sum") {
  for (int d = 0; d <= 30; ++d)
    for (double p : {0.0, 0.1, 1.0 / 3.0, 0.5, 0.77, 1.0}) {
      double brute = 0.0;
      for (int k = 0; k <= d; ++k) brute += binomial_pmf(d, k, p) * std::ldexp(1.0, -2 * k);
      CHECK(std::abs(dyadic_second_moment(p, d) - brute) < 1e-14);
    }
}

TEST_CASE("rate by power and by repeated multiplication agree") {
  for (int d = 2; d <= 20; ++d)
    for (double p : {0.05, 0.2, 1.0 / 3.0, 1.0})
      CHECK(cf_rate(std::ldexp(1.0, d), p) == doctest::Approx(cf_rate_dyadic(d, p)).epsilon(1e-12));
  CHECK(cf_rate_dyadic(10, 0.2) == doctest::Approx(std::pow(0.85, 10)).epsilon(1e-15));
}

TEST_CASE("forest bounds") {
  const double e = cf_bound(5.0, 1024.0, 0.2, Learner::ensemble);
  const double m = cf_bound(5.0, 1024.0, 0.2, Learner::merged);
  CHECK(e == doctest::Approx(0.625 * std::pow(0.85, 10)).epsilon(1e-12));
  CHECK(std::abs(e - 0.1230465) < 1e-7);
  CHECK(std::abs(m - 0.2460930) < 1e-7);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double S = 1.0 + static_cast<double>(rng.index(20));
    const double k = 3.0 + rng.uniform() * 1e6;
    const double p = 0.01 + 0.99 * rng.uniform();
    CHECK(cf_bound(S, k, p, Learner::merged) / cf_bound(S, k, p, Learner::ensemble) == doctest::Approx(2.0).epsilon(1e-14));
    for (std::uint64_t K : {1u, 2u, 4u, 8u, 64u}) {
      const double ratio = cf_bound_general(K, 0.5, S, k, p, Learner::merged) / cf_bound_general(K, 0.5, S, k, p, Learner::ensemble);
      CHECK(ratio == doctest::Approx(static_cast<double>(K)).epsilon(1e-12));
    }
  }
  CHECK(std::abs(cf_bound_general(4, 0.5, 5.0, 1024.0, 0.2, Learner::ensemble) - 0.2460930) < 1e-7);
  CHECK(std::abs(cf_bound_general(4, 0.5, 5.0, 1024.0, 0.2, Learner::merged) - 0.9843720) < 1e-7);
  // K = 2, omega = 1/2 reduces to the two-cluster bound.
  CHECK(cf_bound_general(2, 0.5, 5.0, 1024.0, 0.2, Learner::ensemble) == doctest::Approx(e).epsilon(1e-14));
  CHECK(cf_bound_general(2, 0.5, 5.0, 1024.0, 0.2, Learner::merged) == doctest::Approx(m).epsilon(1e-14));
}

TEST_CASE("forest bounds shrink with k_n and grow with S") {
  double prev = cf_bound(3.0, 4.0, 1.0 / 3.0, Learner::ensemble);
  for (double k = 8.0; k <= 1 << 20; k *= 2.0) {
    const double b = cf_bound(3.0, k, 1.0 / 3.0, Learner::ensemble);
    CHECK(b < prev);
    prev = b;
  }
  CHECK(cf_bound(4.0, 64.0, 0.25, Learner::merged) > cf_bound(3.0, 64.0, 0.25, Learner::merged));
}

TEST_CASE("forest bound domain errors") {
  CHECK_THROWS_AS(cf_bound(0.5, 64.0, 0.3, Learner::ensemble), DomainError);
  CHECK_THROWS_AS(cf_bound(2.0, 2.0, 0.3, Learner::ensemble), DomainError);
  CHECK_THROWS_AS(cf_bound(2.0, 64.0, 0.0, Learner::ensemble), DomainError);
  CHECK_THROWS_AS(cf_bound(2.0, 64.0, 1.5, Learner::ensemble), DomainError);
  CHECK_THROWS_AS(cf_bound_general(3, 0.5, 2.0, 64.0, 0.3, Learner::merged), DomainError);
  CHECK_THROWS_AS(dyadic_second_moment(1.2, 3), DomainError);
  CHECK_THROWS_AS(learner_from_string("forest"), DomainError);
  CHECK(learner_from_string(to_string(Learner::merged)) == Learner::merged);
}

TEST_CASE("fixed-p ensemble limit") {
  const std::array<double, 2> sizes = {0.5, 0.5};
  const std::array<double, 2> norms = {1.0, 1.0};
  CHECK(ensemble_variance_limit_d1(10, sizes, norms) == doctest::Approx(9.5).epsilon(1e-14));
  CHECK(ensemble_limit_s1(10, 0.5, 1.0, 1.0) == doctest::Approx(9.5).epsilon(1e-14));
  CHECK_THROWS_AS(ensemble_variance_limit_d1(1, sizes, norms), DomainError);
}

TEST_CASE("s1 is the simplified d1 on random tuples") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const std::size_t p = 2 + rng.index(40);
    const double lt1 = 0.01 + 0.98 * rng.uniform();
    const double n1 = 3.0 * rng.uniform();
    const double n2 = 3.0 * rng.uniform();
    const std::array<double, 2> sizes = {lt1, 1.0 - lt1};
    const std::array<double, 2> norms = {n1, n2};
    const double d1 = ensemble_variance_limit_d1(p, sizes, norms);
    CHECK(std::abs(ensemble_limit_s1(p, lt1, n1 * n1, n2 * n2) - d1) <= 1e-10 * d1);
  }
}

TEST_CASE("fixed-p merged limit") {
  const std::vector<double> lt = {0.5, 0.5};
  const std::vector<Vector> orth = {unit(10, 0), unit(10, 1)};
  const std::vector<Vector> same = {unit(10, 0), unit(10, 0)};
  CHECK(merged_variance_limit_d2(1.0, lt, orth) == doctest::Approx(28.0 / 3.0).epsilon(1e-13));
  CHECK(merged_variance_limit_d2(1.0, lt, same) == doctest::Approx(9.5).epsilon(1e-13));
  CHECK(merged_variance_limit_d2(4000.0, lt, orth) == doctest::Approx(28.0 / 3.0 / 4000.0).epsilon(1e-13));
  CHECK(merged_limit_s2_exact(10, 0.5, orth[0], orth[1]) == doctest::Approx(28.0 / 3.0).epsilon(1e-13));
  CHECK(merged_limit_s2_exact(10, 0.5, same[0], same[1]) == doctest::Approx(9.5).epsilon(1e-13));
  CHECK(merged_limit_s2_as_printed(10, 0.5, same[0], same[1]) == doctest::Approx(9.5).epsilon(1e-13));
  CHECK(merged_limit_unit_norm_display(10, 0.5) == doctest::Approx(10.0 - 6.0 / 13.0).epsilon(1e-14));
  CHECK(kappa_orthogonal_unit(10) == doctest::Approx((28.0 / 3.0) / 9.5).epsilon(1e-14));
}

TEST_CASE("merged limit matches an explicit-inverse trace") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const std::size_t p = 2 + rng.index(8);
    const double lt1 = 0.05 + 0.9 * rng.uniform();
    std::vector<Vector> means(2, Vector(static_cast<Eigen::Index>(p)));
    for (auto& m : means)
      for (Eigen::Index j = 0; j < m.size(); ++j) m[j] = rng.normal();
    const std::vector<double> lt = {lt1, 1.0 - lt1};
    const double oracle = trace_oracle(1.0, lt, means);
    CHECK(merged_variance_limit_d2(1.0, lt, means) == doctest::Approx(oracle).epsilon(1e-10));
    CHECK(merged_limit_s2_exact(p, lt1, means[0], means[1]) == doctest::Approx(oracle).epsilon(1e-10));
    // Printed display agrees for parallel means with a unit second mean.
    const Vector direction = means[0].normalized();
    CHECK(merged_limit_s2_as_printed(p, lt1, means[0], direction) ==
          doctest::Approx(merged_limit_s2_exact(p, lt1, means[0], direction)).epsilon(1e-10));
    CHECK(merged_limit_s2_as_printed(p, lt1, means[0], -direction) ==
          doctest::Approx(merged_limit_s2_exact(p, lt1, means[0], direction)).epsilon(1e-10));
  }
}

TEST_CASE("merged limit below ensemble limit for orthogonal unit means") {
  for (std::size_t p = 2; p <= 200; ++p) {
    const double k = kappa_orthogonal_unit(p);
    CHECK(k < 1.0);
    CHECK(k == doctest::Approx((static_cast<double>(p) - 2.0 + 4.0 / 3.0) / (static_cast<double>(p) - 0.5)).epsilon(1e-14));
  }
}
