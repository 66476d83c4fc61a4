#include "clens/cforest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "clens/errors.hpp"
#include "clens/stats.hpp"

namespace clens {

namespace {

constexpr int kMaxDepth = 30;
constexpr double kLaplaceScale = 0.70710678118654752440;  // unit variance

std::string mode_name(SplitMode m) { return m == SplitMode::mtry ? "mtry" : "explicit"; }

}  // namespace

SplitScheme SplitScheme::idealized(std::size_t p, std::vector<int> strong) {
  if (strong.empty()) throw InvalidSpec("idealized scheme needs at least one strong coordinate");
  std::vector<double> probs(p, 0.0);
  for (int j : strong) {
    if (j < 0 || static_cast<std::size_t>(j) >= p) throw InvalidSpec("strong index out of range");
    probs[static_cast<std::size_t>(j)] = 1.0 / static_cast<double>(strong.size());
  }
  return explicit_probs(std::move(probs), std::move(strong));
}

SplitScheme SplitScheme::explicit_probs(std::vector<double> probs, std::vector<int> strong) {
  SplitScheme s;
  s.mode = SplitMode::explicit_probs;
  s.p = probs.size();
  s.probs = std::move(probs);
  s.strong = std::move(strong);
  s.validate();
  return s;
}

SplitScheme SplitScheme::mtry(std::size_t p, std::vector<int> strong, std::size_t M) {
  SplitScheme s;
  s.mode = SplitMode::mtry;
  s.p = p;
  s.strong = std::move(strong);
  s.M = M;
  s.validate();
  return s;
}

void SplitScheme::validate() const {
  if (p < 1 || p > 65535) throw InvalidSpec("split scheme dimension must be in [1, 65535]");
  std::vector<bool> seen(p, false);
  for (int j : strong) {
    if (j < 0 || static_cast<std::size_t>(j) >= p) throw InvalidSpec("strong index out of range");
    if (seen[static_cast<std::size_t>(j)]) throw InvalidSpec("duplicate strong index");
    seen[static_cast<std::size_t>(j)] = true;
  }
  if (mode == SplitMode::explicit_probs) {
    if (probs.size() != p) throw InvalidSpec("probability vector length differs from p");
    for (double q : probs)
      if (!(q >= 0.0) || !std::isfinite(q)) throw InvalidSpec("split probabilities must be >= 0");
    const double total = compensated_sum(probs);
    if (std::abs(total - 1.0) > 1e-9) throw InvalidSpec("split probabilities must sum to 1");
  } else if (M < 1) {
    throw InvalidSpec("mtry needs M >= 1");
  }
}

double SplitScheme::coordinate_prob(std::size_t j) const {
  if (j >= p) throw DimensionMismatch("coordinate out of range");
  if (mode == SplitMode::explicit_probs) return probs[j];
  const double S = static_cast<double>(strong.size());
  const double P = static_cast<double>(p);
  if (strong.empty()) return 1.0 / P;
  const double all_weak = std::pow(1.0 - S / P, static_cast<double>(M));
  const bool is_strong = std::find(strong.begin(), strong.end(), static_cast<int>(j)) != strong.end();
  if (is_strong) return (1.0 - all_weak) / S;
  return all_weak / (P - S);
}

double SplitScheme::min_strong_prob() const {
  if (strong.empty()) throw InvalidSpec("no strong coordinates");
  double best = std::numeric_limits<double>::infinity();
  for (int j : strong) best = std::min(best, coordinate_prob(static_cast<std::size_t>(j)));
  return best;
}

std::size_t sample_split_coord(const SplitScheme& scheme, Rng& rng) {
  if (scheme.mode == SplitMode::explicit_probs) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t j = 0; j < scheme.p; ++j) {
      if (scheme.probs[j] <= 0.0) continue;
      acc += scheme.probs[j];
      last = j;
      if (u < acc) return j;
    }
    return last;
  }
  // mtry: M draws with replacement; prefer a strong one if any was drawn.
  std::array<std::size_t, 64> small{};
  std::vector<std::size_t> large;
  std::size_t* drawn = small.data();
  if (scheme.M > small.size()) {
    large.resize(scheme.M);
    drawn = large.data();
  }
  std::size_t strong_hits = 0;
  for (std::size_t m = 0; m < scheme.M; ++m) drawn[m] = rng.index(scheme.p);
  std::vector<std::size_t> distinct_strong;
  for (int j : scheme.strong) {
    const auto sj = static_cast<std::size_t>(j);
    if (std::find(drawn, drawn + scheme.M, sj) != drawn + scheme.M) {
      distinct_strong.push_back(sj);
      ++strong_hits;
    }
  }
  if (strong_hits > 0) return distinct_strong[rng.index(distinct_strong.size())];
  return drawn[rng.index(scheme.M)];
}

int tree_depth(std::uint64_t k_n) {
  if (k_n <= 2) throw DomainError("k_n must exceed 2");
  int d = 0;
  while ((std::uint64_t{1} << d) < k_n) ++d;
  return d;
}

// ---------------------------------------------------------------------------
// MarginalCDF

MarginalCDF MarginalCDF::mixture(const std::vector<ClusterSpec>& clusters) {
  if (clusters.empty()) throw InvalidSpec("mixture needs at least one cluster");
  MarginalCDF m;
  m.dim_ = clusters.front().dim();
  double total = 0.0;
  for (const ClusterSpec& c : clusters) {
    if (c.dim() != m.dim_) throw DimensionMismatch("clusters differ in dimension");
    total += static_cast<double>(c.size());
  }
  for (const ClusterSpec& c : clusters) {
    Component comp;
    comp.family = c.family();
    comp.weight = static_cast<double>(c.size()) / total;
    comp.location.assign(c.location().data(), c.location().data() + c.location().size());
    comp.width = c.width();
    m.components_.push_back(std::move(comp));
  }
  return m;
}

MarginalCDF MarginalCDF::linear(Vector lower, Vector upper) {
  if (lower.size() != upper.size() || lower.size() == 0)
    throw DimensionMismatch("bounding box corners differ in length");
  for (Eigen::Index j = 0; j < lower.size(); ++j)
    if (!(upper[j] > lower[j])) throw InvalidSpec("bounding box must have positive width");
  MarginalCDF m;
  m.dim_ = static_cast<std::size_t>(lower.size());
  m.linear_ = true;
  m.lower_ = std::move(lower);
  m.upper_ = std::move(upper);
  return m;
}

double MarginalCDF::component_cdf(const Component& c, std::size_t j, double x) const {
  const double loc = c.location[j];
  switch (c.family) {
    case Family::uniform:
      if (x <= loc) return 0.0;
      if (x >= loc + c.width) return 1.0;
      return (x - loc) / c.width;
    case Family::gaussian:
      return 0.5 * std::erfc(-(x - loc) / std::sqrt(2.0));
    case Family::laplace:
      if (x < loc) return 0.5 * std::exp((x - loc) / kLaplaceScale);
      return 1.0 - 0.5 * std::exp(-(x - loc) / kLaplaceScale);
  }
  return 0.0;
}

bool MarginalCDF::bounded() const {
  if (linear_) return true;
  return std::all_of(components_.begin(), components_.end(),
                     [](const Component& c) { return c.family == Family::uniform; });
}

double MarginalCDF::cdf(std::size_t j, double x) const {
  if (j >= dim_) throw DimensionMismatch("coordinate out of range");
  if (linear_) return std::clamp((x - lower_[j]) / (upper_[j] - lower_[j]), 0.0, 1.0);
  if (components_.size() == 1) return component_cdf(components_.front(), j, x);
  CompensatedSum acc;
  for (const Component& c : components_) acc.add(c.weight * component_cdf(c, j, x));
  return std::clamp(acc.value(), 0.0, 1.0);
}

void MarginalCDF::knots(std::size_t j, std::vector<double>& xs, std::vector<double>& fs) const {
  xs.clear();
  for (const Component& c : components_) {
    xs.push_back(c.location[j]);
    xs.push_back(c.location[j] + c.width);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  fs.resize(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) fs[k] = cdf(j, xs[k]);
}

double MarginalCDF::inverse_inf(std::size_t j, double u) const {
  if (j >= dim_) throw DimensionMismatch("coordinate out of range");
  if (!(u >= 0.0 && u <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  if (linear_) return lower_[j] + u * (upper_[j] - lower_[j]);
  if (bounded()) {
    std::vector<double> xs, fs;
    knots(j, xs, fs);
    std::size_t k = 0;
    while (k < xs.size() && fs[k] < u) ++k;
    if (k == 0) return xs.front();
    if (k == xs.size()) return xs.back();
    const double t = (u - fs[k - 1]) / (fs[k] - fs[k - 1]);
    return xs[k - 1] + t * (xs[k] - xs[k - 1]);
  }
  if (u <= 0.0) return -std::numeric_limits<double>::infinity();
  if (u >= 1.0) return std::numeric_limits<double>::infinity();
  // Bisection for the smallest x with F(x) >= u.
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const Component& c : components_) {
    lo = std::min(lo, c.location[j]);
    hi = std::max(hi, c.location[j] + c.width);
  }
  lo -= 1.0;
  hi += 1.0;
  while (cdf(j, lo) >= u) lo -= 2.0 * (hi - lo);
  while (cdf(j, hi) < u) hi += 2.0 * (hi - lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (cdf(j, mid) >= u) hi = mid;
    else lo = mid;
  }
  return hi;
}

double MarginalCDF::inverse_sup(std::size_t j, double u) const {
  if (j >= dim_) throw DimensionMismatch("coordinate out of range");
  if (!(u >= 0.0 && u <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  if (linear_) return lower_[j] + u * (upper_[j] - lower_[j]);
  if (bounded()) {
    std::vector<double> xs, fs;
    knots(j, xs, fs);
    // Last knot with F <= u.
    std::size_t k = xs.size();
    while (k > 0 && fs[k - 1] > u) --k;
    if (k == 0) return xs.front();
    if (k == xs.size()) return xs.back();
    const std::size_t a = k - 1;
    const double t = (u - fs[a]) / (fs[a + 1] - fs[a]);
    return xs[a] + t * (xs[a + 1] - xs[a]);
  }
  // F is strictly increasing for the unbounded families.
  return inverse_inf(j, u);
}

bool MarginalCDF::in_support(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != dim_) throw DimensionMismatch("point dimension mismatch");
  for (std::size_t j = 0; j < dim_; ++j) {
    const double v = x[static_cast<Eigen::Index>(j)];
    if (!std::isfinite(v)) return false;
    if (linear_) {
      if (v < lower_[j] || v > upper_[j]) return false;
      continue;
    }
    bool inside = false;
    for (const Component& c : components_) {
      if (c.family != Family::uniform ||
          (v >= c.location[j] && v <= c.location[j] + c.width)) {
        inside = true;
        break;
      }
    }
    if (!inside) return false;
  }
  return true;
}

Vector MarginalCDF::transform(const Vector& x) const {
  if (!in_support(x)) throw OutOfSupport("point lies outside the covariate support");
  Vector u(x.size());
  for (std::size_t j = 0; j < dim_; ++j)
    u[static_cast<Eigen::Index>(j)] = cdf(j, x[static_cast<Eigen::Index>(j)]);
  return u;
}

// ---------------------------------------------------------------------------
// Trees

CenteredTree::CenteredTree(int depth, std::size_t p, std::vector<std::uint16_t> coords,
                           std::uint64_t seed)
    : depth_(depth), p_(p), coords_(std::move(coords)), seed_(seed) {
  if (depth < 0 || depth > kMaxDepth) throw DomainError("tree depth out of range");
  if (coords_.size() != (std::size_t{1} << depth) - 1)
    throw DimensionMismatch("split coordinate count does not match depth");
}

std::size_t CenteredTree::leaf_of_codes(const std::uint64_t* codes) const {
  // Splits seen so far per coordinate along the path; paths are short.
  std::array<std::uint16_t, kMaxDepth> seen_coord{};
  std::array<int, kMaxDepth> seen_count{};
  int seen = 0;
  std::size_t node = 0;
  for (int level = 0; level < depth_; ++level) {
    const std::uint16_t j = coords_[node];
    int c = 0;
    int slot = 0;
    while (slot < seen && seen_coord[static_cast<std::size_t>(slot)] != j) ++slot;
    if (slot == seen) {
      seen_coord[static_cast<std::size_t>(slot)] = j;
      seen_count[static_cast<std::size_t>(slot)] = 0;
      ++seen;
    }
    c = seen_count[static_cast<std::size_t>(slot)]++;
    const std::uint64_t bit = (codes[j] >> (depth_ - 1 - c)) & 1U;
    node = 2 * node + 1 + bit;
  }
  return node - ((std::size_t{1} << depth_) - 1);
}

std::size_t CenteredTree::leaf_of(const Vector& u) const {
  if (static_cast<std::size_t>(u.size()) != p_) throw DimensionMismatch("point dimension mismatch");
  const std::vector<std::uint64_t> codes = quantile_codes(u, depth_);
  return leaf_of_codes(codes.data());
}

std::vector<int> CenteredTree::split_counts(std::size_t leaf) const {
  if (leaf >= num_leaves()) throw DimensionMismatch("leaf index out of range");
  std::vector<int> counts(p_, 0);
  std::size_t node = leaf + (std::size_t{1} << depth_) - 1;
  while (node > 0) {
    node = (node - 1) / 2;
    ++counts[coords_[node]];
  }
  return counts;
}

std::vector<std::uint64_t> quantile_codes(const Vector& u, int depth) {
  const double scale = std::ldexp(1.0, depth);
  const std::uint64_t top = (std::uint64_t{1} << depth) - 1;
  std::vector<std::uint64_t> codes(static_cast<std::size_t>(u.size()));
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    const double v = std::floor(std::clamp(u[j], 0.0, 1.0) * scale);
    codes[static_cast<std::size_t>(j)] = std::min(static_cast<std::uint64_t>(v), top);
  }
  return codes;
}

CenteredTree build_tree(int depth, const SplitScheme& scheme, std::uint64_t seed) {
  if (depth < 0 || depth > kMaxDepth) throw DomainError("tree depth out of range");
  scheme.validate();
  Rng rng(seed);
  std::vector<std::uint16_t> coords((std::size_t{1} << depth) - 1);
  for (auto& c : coords) c = static_cast<std::uint16_t>(sample_split_coord(scheme, rng));
  return CenteredTree(depth, scheme.p, std::move(coords), seed);
}

bool LeafBox::contains(const Vector& x) const {
  if (x.size() != lower.size()) return false;
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (x[j] < lower[j] || x[j] > upper[j]) return false;
  return true;
}

LeafBox leaf_box(const CenteredTree& tree, const MarginalCDF& cdf, const Vector& x) {
  if (cdf.dim() != tree.dim()) throw DimensionMismatch("CDF and tree dimensions differ");
  const Vector u = cdf.transform(x);
  const std::vector<std::uint64_t> codes = quantile_codes(u, tree.depth());
  LeafBox box;
  box.leaf = tree.leaf_of_codes(codes.data());
  box.splits = tree.split_counts(box.leaf);
  const auto p = static_cast<Eigen::Index>(tree.dim());
  box.q_lower.resize(p);
  box.q_upper.resize(p);
  box.lower.resize(p);
  box.upper.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const int k = box.splits[static_cast<std::size_t>(j)];
    const std::uint64_t cell = codes[static_cast<std::size_t>(j)] >> (tree.depth() - k);
    const double width = std::ldexp(1.0, -k);
    box.q_lower[j] = static_cast<double>(cell) * width;
    box.q_upper[j] = static_cast<double>(cell + 1) * width;
    box.lower[j] = cdf.inverse_sup(static_cast<std::size_t>(j), box.q_lower[j]);
    box.upper[j] = cdf.inverse_inf(static_cast<std::size_t>(j), box.q_upper[j]);
  }
  return box;
}

double tree_predict(const CenteredTree& tree, const MarginalCDF& cdf, const Matrix& X,
                    const Vector& Y, const Vector& x) {
  if (X.rows() != Y.size()) throw DimensionMismatch("X rows and Y length differ");
  const std::vector<std::uint64_t> target = quantile_codes(cdf.transform(x), tree.depth());
  const std::size_t leaf = tree.leaf_of_codes(target.data());
  CompensatedSum acc;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vector row = X.row(i).transpose();
    if (!cdf.in_support(row)) continue;
    const std::vector<std::uint64_t> codes = quantile_codes(cdf.transform(row), tree.depth());
    if (tree.leaf_of_codes(codes.data()) != leaf) continue;
    acc.add(Y[i]);
    ++count;
  }
  return count == 0 ? 0.0 : acc.value() / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Forests

nlohmann::json to_json(const ForestSpec& spec) {
  nlohmann::json scheme = {{"mode", mode_name(spec.scheme.mode)},
                           {"p", spec.scheme.p},
                           {"strong", spec.scheme.strong}};
  if (spec.scheme.mode == SplitMode::explicit_probs) scheme["probs"] = spec.scheme.probs;
  else scheme["M"] = spec.scheme.M;
  return {{"depth", spec.depth}, {"trees", spec.trees}, {"seed", spec.seed}, {"scheme", scheme}};
}

ForestSpec forest_spec_from_json(const nlohmann::json& j) {
  try {
    ForestSpec spec;
    spec.depth = j.at("depth").get<int>();
    spec.trees = j.at("trees").get<std::size_t>();
    spec.seed = j.value("seed", std::uint64_t{0});
    const auto& s = j.at("scheme");
    const std::string mode = s.at("mode").get<std::string>();
    auto strong = s.value("strong", std::vector<int>{});
    if (mode == "explicit") {
      spec.scheme = SplitScheme::explicit_probs(s.at("probs").get<std::vector<double>>(), strong);
    } else if (mode == "mtry") {
      spec.scheme = SplitScheme::mtry(s.at("p").get<std::size_t>(), strong, s.at("M").get<std::size_t>());
    } else if (mode == "idealized") {
      spec.scheme = SplitScheme::idealized(s.at("p").get<std::size_t>(), strong);
    } else {
      throw InvalidSpec("unknown split mode '" + mode + "'");
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("bad forest spec: ") + e.what());
  }
}

CenteredForest build_forest(const ForestSpec& spec, MarginalCDF cdf) {
  if (spec.trees < 1) throw InvalidSpec("a forest needs at least one tree");
  if (cdf.dim() != spec.scheme.p) throw DimensionMismatch("CDF and split scheme dimensions differ");
  CenteredForest forest{spec, std::move(cdf), {}};
  forest.trees.reserve(spec.trees);
  for (std::size_t b = 0; b < spec.trees; ++b)
    forest.trees.push_back(build_tree(spec.depth, spec.scheme, derive_seed(spec.seed, b)));
  return forest;
}

FittedForest::FittedForest(CenteredForest forest, const Matrix& X, const Vector& Y)
    : forest_(std::move(forest)) {
  if (X.rows() != Y.size()) throw DimensionMismatch("X rows and Y length differ");
  if (static_cast<std::size_t>(X.cols()) != forest_.cdf.dim())
    throw DimensionMismatch("design and forest dimensions differ");
  const int depth = forest_.spec.depth;
  // Leaf tables are dense, 2^depth entries per tree.
  if (depth > 20) throw DomainError("fitted forests support depth <= 20");
  const std::size_t p = forest_.cdf.dim();
  std::vector<std::uint64_t> codes(static_cast<std::size_t>(X.rows()) * p);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto row = quantile_codes(forest_.cdf.transform(X.row(i).transpose()), depth);
    std::copy(row.begin(), row.end(), codes.begin() + static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(p));
  }
  leaves_.resize(forest_.trees.size());
  for (std::size_t b = 0; b < forest_.trees.size(); ++b) {
    const CenteredTree& tree = forest_.trees[b];
    Leaves& lv = leaves_[b];
    lv.sum.assign(tree.num_leaves(), 0.0);
    lv.count.assign(tree.num_leaves(), 0);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const std::size_t leaf = tree.leaf_of_codes(&codes[static_cast<std::size_t>(i) * p]);
      lv.sum[leaf] += Y[i];
      ++lv.count[leaf];
    }
  }
}

std::vector<double> FittedForest::tree_predictions(const Vector& x) const {
  const auto codes = quantile_codes(forest_.cdf.transform(x), forest_.spec.depth);
  std::vector<double> out(forest_.trees.size());
  for (std::size_t b = 0; b < forest_.trees.size(); ++b) {
    const std::size_t leaf = forest_.trees[b].leaf_of_codes(codes.data());
    const std::uint32_t n = leaves_[b].count[leaf];
    out[b] = n == 0 ? 0.0 : leaves_[b].sum[leaf] / static_cast<double>(n);
  }
  return out;
}

double FittedForest::predict(const Vector& x) const {
  const std::vector<double> preds = tree_predictions(x);
  return compensated_sum(preds) / static_cast<double>(preds.size());
}

double forest_predict(const CenteredForest& forest, const Matrix& X, const Vector& Y,
                      const Vector& x) {
  CompensatedSum acc;
  for (const CenteredTree& tree : forest.trees) acc.add(tree_predict(tree, forest.cdf, X, Y, x));
  return acc.value() / static_cast<double>(forest.trees.size());
}

double ensemble_forest_predict(const std::vector<FittedForest>& per_cluster, const Vector& x,
                               int membership) {
  if (membership < 1 || static_cast<std::size_t>(membership) > per_cluster.size())
    throw DimensionMismatch("membership outside 1..K");
  return per_cluster[static_cast<std::size_t>(membership - 1)].predict(x);
}

double merged_forest_predict(const FittedForest& merged, const Vector& x) {
  return merged.predict(x);
}

}  // namespace clens
