#pragma once

// Monte-Carlo experiments: the weighting-scheme comparison, the
// high-dimensional percent-change curve, forest RMSE versus the number of
// clusters, forest squared-bias estimation and conditional-variance checks.
//
// Every replicate draws from its own seed, derive_seed(stream, replicate),
// and results are reduced in replicate order, so outputs do not depend on
// the worker count.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "clens/datagen.hpp"
#include "clens/stats.hpp"
#include "clens/types.hpp"

namespace clens {

struct Record {
  std::string experiment;
  std::string family;
  double grid_value = 0.0;
  std::size_t replicate = 0;
  std::string scheme;
  std::string metric;
  double value = 0.0;
};

struct AggregateRow {
  std::string experiment;
  std::string family;
  double grid_value = 0.0;
  std::string scheme;
  std::string metric;
  Summary summary;
};

/// Groups records by (experiment, family, grid_value, scheme, metric) in order
/// of first appearance. Throws EmptyInput on no records.
std::vector<AggregateRow> aggregate(const std::vector<Record>& records);

struct WeightRow {
  std::size_t replicate = 0;
  std::string scheme;
  int rank = 0;     ///< 1 = smallest IVW weight
  int cluster = 0;  ///< training cluster id
  double weight = 0.0;
  double raw_sum = 1.0;
};

struct ExperimentResult {
  std::string experiment;
  nlohmann::json config;
  std::vector<Record> records;
  std::vector<AggregateRow> aggregates;
  /// Curves, theory overlays and derived estimates.
  nlohmann::json summary;
  std::vector<WeightRow> weight_rows;
  std::vector<std::string> notes;
};

/// Runs body(i) for i in [0, n) on up to `workers` threads. Each index is
/// handled exactly once; callers write into per-index slots.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body);

// ---------------------------------------------------------------------------
// Configurations. Each has JSON round-tripping with defaults for missing keys.

struct Table1Config {
  std::size_t K = 5;
  std::size_t n_t = 200;
  std::size_t p = 10;
  std::size_t S = 10;
  double sigma = 1.0;
  double radius = 1.0;
  std::size_t replicates = 100;
  std::size_t m_test = 1000;
  std::size_t test_clusters = 2;
  /// Test clusters reuse the first training means; otherwise fresh means.
  bool reuse_train_means = true;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

struct Fig1Config {
  std::size_t n_t = 400;
  std::vector<double> gamma_t = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t replicates = 100;
  std::size_t m_test = 1000;
  double sigma = 1.0;
  double radius = 1.0;
  /// Cluster 2 outcomes use -beta.
  bool sign_flip = false;
  /// Also run average and stacking weights (IVW always runs).
  bool all_schemes = false;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

struct Fig2Config {
  std::vector<Family> families = {Family::uniform, Family::gaussian, Family::laplace};
  std::vector<std::size_t> K_grid = {2, 4, 8, 16};
  std::size_t n_t = 500;
  std::size_t p = 5;
  std::size_t S = 5;
  std::uint64_t k_n = 64;
  std::size_t trees = 100;
  std::size_t replicates = 20;
  std::size_t m_test = 500;
  /// Uniform cluster width.
  double width = 1.0;
  /// "diagonal": cluster t at location t * spacing * (1, ..., 1).
  /// "random": locations i.i.d. U(0, spread * sd) per coordinate, redrawn per
  /// replicate, where sd is the within-cluster standard deviation.
  std::string placement = "random";
  double spacing = 1.0;
  double spread = 6.0;
  double sigma = 1.0;
  /// Score against noisy outcomes instead of the regression function.
  bool noisy_targets = false;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

struct BiasConfig {
  std::size_t n_t = 1000;
  std::size_t p = 3;
  std::size_t S = 3;
  std::uint64_t k_n = 64;
  std::size_t trees = 200;
  std::size_t datasets = 100;  ///< R_d
  std::size_t m_test = 500;
  std::size_t outer = 20;
  double sigma = 1.0;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

struct VarianceConfig {
  std::size_t K = 2;
  std::size_t n_t = 2000;
  std::size_t p = 10;
  std::size_t designs = 200;
  std::size_t m_test = 50;
  /// "orthogonal": mu_t = e_t (needs K <= p); "sphere": random directions.
  std::string means = "orthogonal";
  double radius = 1.0;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

struct RandomMatrixConfig {
  std::size_t n = 2000;
  std::size_t p = 500;
  std::size_t draws = 200;
  double tolerance = 0.02;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const Table1Config& c);
nlohmann::json to_json(const Fig1Config& c);
nlohmann::json to_json(const Fig2Config& c);
nlohmann::json to_json(const BiasConfig& c);
nlohmann::json to_json(const VarianceConfig& c);
nlohmann::json to_json(const RandomMatrixConfig& c);
Table1Config table1_config_from_json(const nlohmann::json& j);
Fig1Config fig1_config_from_json(const nlohmann::json& j);
Fig2Config fig2_config_from_json(const nlohmann::json& j);
BiasConfig bias_config_from_json(const nlohmann::json& j);
VarianceConfig variance_config_from_json(const nlohmann::json& j);
RandomMatrixConfig random_matrix_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Experiments

/// Per replicate: RMSE on noisy test outcomes for merged, average, ivw and
/// stacking, plus IVW and stacking weights ranked by IVW weight.
ExperimentResult run_table1(const Table1Config& cfg);

/// Per gamma_t and replicate: test MSE against the regression function for
/// merged and ensembled OLS; curve of percent change with theory overlay.
ExperimentResult run_fig1(const Fig1Config& cfg);

/// Per family, K and replicate: RMSE of merged and cluster-ensembled centered forests.
ExperimentResult run_fig2(const Fig2Config& cfg);

struct BiasEstimate {
  double ensemble = 0.0;
  double ensemble_se = 0.0;
  double merged = 0.0;
  double merged_se = 0.0;
  /// merged - ensemble, paired over outer replicates.
  double difference = 0.0;
  double difference_se = 0.0;
  double ensemble_bound = 0.0;
  double merged_bound = 0.0;
  std::vector<double> outer_ensemble;
  std::vector<double> outer_merged;
};

/// Nested Monte Carlo on two uniform clusters U(0,1/2)^p and U(1,3/2)^p with
/// idealized splits on the first S coordinates. bias^2(x) is estimated as
/// (mean prediction - f(x))^2 minus the variance of that mean, averaged over
/// test points; standard errors are jackknife over outer replicates.
BiasEstimate estimate_squared_bias(const BiasConfig& cfg);
ExperimentResult run_bias(const BiasConfig& cfg);

struct VarianceEstimate {
  double n_var_ensemble = 0.0;  ///< n * mean exact Var of the optimal ensemble
  double n_var_merged = 0.0;
  double ratio = 0.0;           ///< mean over designs of Var_M / Var_E
  Summary ensemble_summary, merged_summary, ratio_summary;
  double d1 = 0.0;  ///< n d1
  double d2 = 0.0;  ///< n d2
};

/// Exact conditional variances (sigma = 1) averaged over random designs and
/// standard-normal test points.
VarianceEstimate estimate_cond_variance(const VarianceConfig& cfg);
ExperimentResult run_variance(const VarianceConfig& cfg);

struct NoiseVarianceCheck {
  double empirical_merged = 0.0;
  double empirical_ensemble = 0.0;
  double exact_merged = 0.0;
  double exact_ensemble = 0.0;
  std::size_t replicates = 0;
};

/// Fixed design blocks and test point; redraws only the noise R times and
/// compares the empirical prediction variances (ensemble with oracle IVW
/// weights) against the exact values.
NoiseVarianceCheck noise_replicate_variance(const std::vector<Matrix>& blocks, const Vector& beta,
                                            double sigma, const Vector& x, std::size_t R,
                                            std::uint64_t seed);

struct RandomMatrixResult {
  double scaled_trace = 0.0;  ///< (gamma / p) trace((X^T X / n)^{-1})
  double trace_target = 0.0;  ///< gamma / (1 - gamma)
  double pass_fraction = 0.0;
  std::vector<double> deviations;
};

/// One standard Gaussian design; for each standard-normal test point the
/// deviation |x^T (X^T X)^{-1} x - trace((X^T X / n)^{-1}) / n|.
RandomMatrixResult random_matrix_check(const RandomMatrixConfig& cfg);

// ---------------------------------------------------------------------------
// Output

/// Header experiment,family,grid_value,replicate,scheme,metric,value.
void write_records_csv(const std::vector<Record>& records, std::ostream& out);
/// Header replicate,scheme,rank,cluster,weight,raw_sum.
void write_weights_csv(const std::vector<WeightRow>& rows, std::ostream& out);
/// Aggregates, config and experiment summary.
nlohmann::json summary_json(const ExperimentResult& result);

}  // namespace clens
