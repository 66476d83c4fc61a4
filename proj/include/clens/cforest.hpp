#pragma once

// Centered random forests: trees whose partitions are drawn independently of
// the training data. Every split halves the current quantile interval of one
// coordinate, so a leaf on coordinate j with K_j splits covers a dyadic
// quantile interval of width 2^{-K_j}. Data-space boxes are obtained through
// the inverse of the covariate marginal CDF.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "clens/datagen.hpp"
#include "clens/rng.hpp"
#include "clens/types.hpp"

namespace clens {

enum class SplitMode { explicit_probs, mtry };

struct SplitScheme {
  SplitMode mode = SplitMode::explicit_probs;
  /// Selection probability per coordinate (explicit mode).
  std::vector<double> probs;
  /// 0-based strong coordinates.
  std::vector<int> strong;
  /// Candidates drawn with replacement per split (mtry mode).
  std::size_t M = 1;
  std::size_t p = 0;

  /// Probability 1/S on each strong coordinate, 0 elsewhere.
  static SplitScheme idealized(std::size_t p, std::vector<int> strong);
  static SplitScheme explicit_probs(std::vector<double> probs, std::vector<int> strong = {});
  static SplitScheme mtry(std::size_t p, std::vector<int> strong, std::size_t M);

  /// Throws InvalidSpec on bad probabilities, indices or M.
  void validate() const;
  /// Probability that coordinate j is chosen at a split.
  double coordinate_prob(std::size_t j) const;
  /// Smallest selection probability over the strong coordinates.
  double min_strong_prob() const;
};

/// Categorical draw (explicit) or M-with-replacement then strong-first rule (mtry).
std::size_t sample_split_coord(const SplitScheme& scheme, Rng& rng);

/// ceil(log2 k_n). Throws DomainError unless k_n > 2.
int tree_depth(std::uint64_t k_n);

/// Per-coordinate marginal CDF of the covariates.
///
/// `mixture` builds F_j = sum_t pi_t F_{t,j} from cluster specs with weights
/// proportional to cluster sizes. `linear` maps a bounding box affinely onto
/// [0,1] (midpoint splits in data space).
class MarginalCDF {
 public:
  static MarginalCDF mixture(const std::vector<ClusterSpec>& clusters);
  static MarginalCDF linear(Vector lower, Vector upper);

  std::size_t dim() const { return dim_; }
  bool is_linear() const { return linear_; }

  double cdf(std::size_t j, double x) const;
  /// inf{x : F_j(x) >= u}. Maps the upper end of a quantile cell.
  double inverse_inf(std::size_t j, double u) const;
  /// sup{x : F_j(x) <= u}. Maps the lower end of a quantile cell, so a cell
  /// starting on a plateau of F begins at the next component's support.
  double inverse_sup(std::size_t j, double u) const;
  /// True when every coordinate of x lies in the closure of the support.
  bool in_support(const Vector& x) const;

  /// F applied coordinatewise. Throws OutOfSupport.
  Vector transform(const Vector& x) const;

 private:
  struct Component {
    Family family;
    double weight;
    std::vector<double> location;
    double width;
  };

  MarginalCDF() = default;
  double component_cdf(const Component& c, std::size_t j, double x) const;
  bool bounded() const;
  /// Sorted breakpoints of the piecewise-linear F_j and F_j at each of them.
  void knots(std::size_t j, std::vector<double>& xs, std::vector<double>& fs) const;

  std::size_t dim_ = 0;
  bool linear_ = false;
  std::vector<Component> components_;
  Vector lower_;
  Vector upper_;
};

/// Full binary tree of split coordinates in heap order (node i has children
/// 2i+1 and 2i+2); every root-to-leaf path carries exactly `depth` splits.
class CenteredTree {
 public:
  CenteredTree(int depth, std::size_t p, std::vector<std::uint16_t> coords, std::uint64_t seed);

  int depth() const { return depth_; }
  std::size_t dim() const { return p_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_leaves() const { return std::size_t{1} << depth_; }
  const std::vector<std::uint16_t>& split_coords() const { return coords_; }

  /// Leaf index in [0, 2^depth) of a point given its quantile codes (see quantile_codes).
  std::size_t leaf_of_codes(const std::uint64_t* codes) const;
  /// Leaf index of a point in quantile coordinates u in [0,1]^p.
  std::size_t leaf_of(const Vector& u) const;
  /// Number of splits on each coordinate along the path to `leaf`.
  std::vector<int> split_counts(std::size_t leaf) const;

 private:
  int depth_;
  std::size_t p_;
  std::vector<std::uint16_t> coords_;
  std::uint64_t seed_;
};

/// floor(u_j 2^depth), clamped to 2^depth - 1, for each coordinate.
std::vector<std::uint64_t> quantile_codes(const Vector& u, int depth);

CenteredTree build_tree(int depth, const SplitScheme& scheme, std::uint64_t seed);

struct LeafBox {
  std::vector<int> splits;  ///< K_j per coordinate
  Vector q_lower, q_upper;  ///< quantile-space interval per coordinate
  Vector lower, upper;      ///< data-space interval per coordinate
  std::size_t leaf = 0;

  bool contains(const Vector& x) const;
};

/// The leaf cell of the tree containing x. Throws OutOfSupport.
LeafBox leaf_box(const CenteredTree& tree, const MarginalCDF& cdf, const Vector& x);

/// Mean of Y over training rows in x's leaf; 0 when the leaf is empty.
/// Direct scan over the rows, intended for checks and small problems.
double tree_predict(const CenteredTree& tree, const MarginalCDF& cdf, const Matrix& X,
                    const Vector& Y, const Vector& x);

struct ForestSpec {
  int depth = 6;
  std::size_t trees = 200;
  SplitScheme scheme;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const ForestSpec& spec);
ForestSpec forest_spec_from_json(const nlohmann::json& j);

/// Tree b uses seed derive_seed(spec.seed, b), so a forest with more trees
/// extends the one with fewer.
struct CenteredForest {
  ForestSpec spec;
  MarginalCDF cdf;
  std::vector<CenteredTree> trees;
};

CenteredForest build_forest(const ForestSpec& spec, MarginalCDF cdf);

/// A forest with per-leaf outcome sums for one training set.
class FittedForest {
 public:
  /// Training rows must lie in the forest CDF's support (OutOfSupport otherwise).
  FittedForest(CenteredForest forest, const Matrix& X, const Vector& Y);

  /// Mean over trees of the leaf mean (0 for an empty leaf).
  double predict(const Vector& x) const;
  /// Per-tree predictions at x, in tree order.
  std::vector<double> tree_predictions(const Vector& x) const;
  const CenteredForest& forest() const { return forest_; }

 private:
  struct Leaves {
    std::vector<double> sum;
    std::vector<std::uint32_t> count;
  };

  CenteredForest forest_;
  std::vector<Leaves> leaves_;
};

/// Mean of the B tree predictions, scanning the training rows per tree.
double forest_predict(const CenteredForest& forest, const Matrix& X, const Vector& Y,
                      const Vector& x);

/// Prediction of the forest trained on the test point's own cluster.
double ensemble_forest_predict(const std::vector<FittedForest>& per_cluster, const Vector& x,
                               int membership);

/// Prediction of a forest built on the merged data's mixture CDF.
double merged_forest_predict(const FittedForest& merged, const Vector& x);

}  // namespace clens
