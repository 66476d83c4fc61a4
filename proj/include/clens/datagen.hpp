#pragma once

// Seedable generators for clustered covariates, sparse linear outcomes and
// test points.
//
// Covariate families (all coordinates independent, unit covariance except
// for the uniform family):
//   gaussian  N(mean, I)
//   laplace   mean + Laplace(0, 1/sqrt(2)) per coordinate (unit variance)
//   uniform   U(start_j, start_j + width) per coordinate

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clens/types.hpp"

namespace clens {

enum class Family { gaussian, uniform, laplace };

std::string to_string(Family f);
Family family_from_string(const std::string& name);

class ClusterSpec {
 public:
  static ClusterSpec gaussian(std::size_t n, Vector mean);
  static ClusterSpec laplace(std::size_t n, Vector mean);
  static ClusterSpec uniform(std::size_t n, Vector start, double width);

  Family family() const { return family_; }
  std::size_t size() const { return n_; }
  std::size_t dim() const { return static_cast<std::size_t>(location_.size()); }
  /// Mean for gaussian/laplace, interval start for uniform.
  const Vector& location() const { return location_; }
  /// Interval width for uniform; 1 otherwise.
  double width() const { return width_; }

  /// Coordinate-wise mean of the family.
  Vector mean() const;
  /// True when `x` is inside the family's support (always for unbounded families).
  bool contains(const Vector& x) const;

  ClusterSpec with_size(std::size_t n) const;

 private:
  ClusterSpec(Family family, std::size_t n, Vector location, double width);

  Family family_;
  std::size_t n_;
  Vector location_;
  double width_;
};

struct OutcomeSpec {
  Vector beta;
  std::vector<int> support;  ///< 0-based indices of the nonzero coefficients
  double noise_sd = 1.0;
  bool per_cluster_sign_flip = false;

  /// Throws InvalidSpec unless beta vanishes exactly off `support` and noise_sd >= 0.
  void validate() const;
  double regression(const Vector& x) const { return x.dot(beta); }
};

struct Dataset {
  Matrix X;
  Vector Y;
  std::vector<int> labels;  ///< cluster ids in 1..K, rows grouped by cluster
  std::vector<ClusterSpec> clusters;
  OutcomeSpec outcome;
  std::uint64_t seed = 0;

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(X.cols()); }
  int num_clusters() const { return static_cast<int>(clusters.size()); }

  /// Rows of cluster `t` (1-based).
  Matrix cluster_X(int t) const;
  Vector cluster_Y(int t) const;
  /// The cluster as a stand-alone dataset (single label 1).
  Dataset cluster(int t) const;
};

struct TestPoint {
  Vector x;
  int membership = 1;  ///< generating cluster id in 1..K
};

/// i.i.d. rows from the cluster's family.
Matrix gen_cluster(const ClusterSpec& spec, std::uint64_t seed);

/// K vectors of Euclidean norm exactly `radius`, directions uniform on the sphere.
std::vector<Vector> gen_means_on_sphere(std::size_t K, std::size_t p, double radius,
                                        std::uint64_t seed);

/// Coefficients with i.i.d. N(0,1) entries on the support, zero elsewhere.
/// The support defaults to the first S coordinates.
OutcomeSpec gen_beta(std::size_t p, std::size_t S, std::uint64_t seed,
                     std::optional<std::vector<int>> support = std::nullopt);

/// Y = X beta + eps, eps ~ N(0, noise_sd^2). With per_cluster_sign_flip,
/// rows labelled 2 use -beta (two-cluster designs only).
Vector gen_outcome(const Matrix& X, const OutcomeSpec& outcome, const std::vector<int>& labels,
                   std::uint64_t seed);

/// Clusters stacked in order, then outcomes.
Dataset gen_dataset(const std::vector<ClusterSpec>& clusters, const OutcomeSpec& outcome,
                    std::uint64_t seed);

/// Mixture test points: membership uniform on 1..K, then a draw from that
/// cluster's family (the cluster size field is ignored).
std::vector<TestPoint> gen_testpoints(const std::vector<ClusterSpec>& clusters, std::size_t m,
                                      std::uint64_t seed);

/// Standard-normal test points in dimension p; membership is always 1.
std::vector<TestPoint> gen_testpoints_standard_normal(std::size_t p, std::size_t m,
                                                      std::uint64_t seed);

/// CSV with header x1..xp,y,label; numbers printed with 17 significant digits.
void write_csv(const Dataset& data, std::ostream& out);

nlohmann::json to_json(const ClusterSpec& spec);
ClusterSpec cluster_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const OutcomeSpec& spec);
OutcomeSpec outcome_spec_from_json(const nlohmann::json& j);
/// Sidecar carrying the generating configuration and seed.
nlohmann::json sidecar_json(const Dataset& data);

}  // namespace clens
