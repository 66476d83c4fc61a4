#pragma once

// Closed-form limits and bounds for merged versus cluster-ensembled learners.
// All functions are pure; invalid inputs raise DomainError.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "clens/types.hpp"

namespace clens::theory {

enum class Learner { ensemble, merged };

std::string to_string(Learner l);
Learner learner_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// Least squares, p/n -> gamma

/// Merged over optimally weighted ensemble variance for K balanced clusters:
/// (1 - K gamma) / (1 - gamma). Needs 0 <= gamma < 1 and K gamma < 1.
double ols_highdim_ratio(double gamma, int K);

/// gamma / (1 - gamma): limit of x^T (X^T X)^{-1} x for standard normal x.
double mp_trace_inverse_limit(double gamma);

/// lambda gamma / (1 - lambda gamma): the same limit for one cluster of
/// n / lambda rows.
double scl_qform_limit(double lambda, double gamma);

/// Harmonic combination [sum_t 1 / scl_qform_limit(lambda_t, gamma)]^{-1}.
double ensemble_qform_limit(std::span<const double> lambdas, double gamma);

/// 100 (1/ratio - 1) for two balanced clusters with gamma = gamma_t / 2,
/// i.e. 100 gamma / (1 - 2 gamma).
double fig1_theory_percent_change(double gamma_t);

// ---------------------------------------------------------------------------
// Least squares, fixed p

/// d1 = [sum_t n_t / ((p-1) + 1/(1 + |mu_t|^2))]^{-1}.
double ensemble_variance_limit_d1(std::size_t p, std::span<const double> cluster_sizes,
                                  std::span<const double> mean_norms);

/// d2 = (1/n) trace[(I + sum_t lt_t mu_t mu_t^T)^{-1}], evaluated from an
/// eigendecomposition of the explicit matrix.
double merged_variance_limit_d2(double n, std::span<const double> lambda_tilde,
                                std::span<const Vector> means);

/// n s1 for two clusters: the simplified form of n d1, with
/// lt1 = n_1 / n and mm_t = mu_t^T mu_t.
double ensemble_limit_s1(std::size_t p, double lt1, double mm1, double mm2);

/// n s2 evaluated literally from the two-cluster Sherman-Morrison display,
/// which replaces trace(mu2 mu2^T mu1 mu1^T) by |mu1|^2 |mu2|^2 and drops a
/// |mu2|^2 factor from its last numerator term. Agrees with n d2 only for
/// parallel means with |mu2| = 1.
double merged_limit_s2_as_printed(std::size_t p, double lt1, const Vector& mu1, const Vector& mu2);

/// n d2 for two clusters (exact trace).
double merged_limit_s2_exact(std::size_t p, double lt1, const Vector& mu1, const Vector& mu2);

/// p - a/b with a and b the unit-norm reductions used in the fixed-p
/// ordering argument (lt2 = 1 - lt1). Gives 10 - 6/13 at p = 10, lt1 = 1/2.
double merged_limit_unit_norm_display(std::size_t p, double lt1);

/// d2 / d1 for two balanced clusters with orthogonal unit means:
/// ((p - 2) + 4/3) / (p - 1/2).
double kappa_orthogonal_unit(std::size_t p);

// ---------------------------------------------------------------------------
// Centered forests

/// k_n^{log2(1 - 3 p_n / 4)}, computed as exp(log2(k_n) ln(1 - 3 p_n / 4)).
double cf_rate(double k_n, double p_n);

/// Same rate by repeated multiplication when k_n = 2^d.
double cf_rate_dyadic(int d, double p_n);

/// (S/8) rate for the ensemble, (S/4) rate for the merged forest.
/// Needs S >= 1, k_n > 2, 0 < p_n <= 1.
double cf_bound(double S, double k_n, double p_n, Learner learner);

/// K clusters of width omega: (K/4) omega^2 S rate for the ensemble and
/// 4^{log2 K - 1} omega^2 S rate for the merged forest. K must be a power of two.
double cf_bound_general(std::uint64_t K, double omega, double S, double k_n, double p_n,
                        Learner learner);

/// E[(2^{-K_j})^2] with K_j ~ Binomial(d, p_j): (1 - 3 p_j / 4)^d.
double dyadic_second_moment(double p_j, int d);

}  // namespace clens::theory
