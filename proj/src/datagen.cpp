#include "clens/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "clens/errors.hpp"
#include "clens/rng.hpp"

namespace clens {

namespace {

const double kLaplaceScale = 1.0 / std::numbers::sqrt2;

bool all_finite(const Vector& v) { return v.allFinite(); }

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::uniform: return "uniform";
    case Family::laplace: return "laplace";
  }
  return "unknown";
}

Family family_from_string(const std::string& name) {
  if (name == "gaussian") return Family::gaussian;
  if (name == "uniform") return Family::uniform;
  if (name == "laplace") return Family::laplace;
  throw InvalidSpec("unknown covariate family '" + name + "'");
}

ClusterSpec::ClusterSpec(Family family, std::size_t n, Vector location, double width)
    : family_(family), n_(n), location_(std::move(location)), width_(width) {
  if (n_ < 1) throw InvalidSpec("cluster size must be at least 1");
  if (location_.size() < 1) throw InvalidSpec("cluster dimension must be at least 1");
  if (!all_finite(location_) || !std::isfinite(width_))
    throw InvalidSpec("cluster parameters must be finite");
  if (family_ == Family::uniform && !(width_ > 0.0))
    throw InvalidSpec("uniform cluster width must be positive");
}

ClusterSpec ClusterSpec::gaussian(std::size_t n, Vector mean) {
  return ClusterSpec(Family::gaussian, n, std::move(mean), 1.0);
}

ClusterSpec ClusterSpec::laplace(std::size_t n, Vector mean) {
  return ClusterSpec(Family::laplace, n, std::move(mean), 1.0);
}

ClusterSpec ClusterSpec::uniform(std::size_t n, Vector start, double width) {
  return ClusterSpec(Family::uniform, n, std::move(start), width);
}

Vector ClusterSpec::mean() const {
  if (family_ == Family::uniform) return location_.array() + 0.5 * width_;
  return location_;
}

bool ClusterSpec::contains(const Vector& x) const {
  if (x.size() != location_.size()) return false;
  if (family_ != Family::uniform) return true;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x[j] < location_[j] || x[j] > location_[j] + width_) return false;
  }
  return true;
}

ClusterSpec ClusterSpec::with_size(std::size_t n) const {
  return ClusterSpec(family_, n, location_, width_);
}

void OutcomeSpec::validate() const {
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd))
    throw InvalidSpec("noise_sd must be finite and nonnegative");
  std::vector<bool> on(static_cast<std::size_t>(beta.size()), false);
  for (int j : support) {
    if (j < 0 || j >= beta.size()) throw InvalidSpec("support index out of range");
    on[static_cast<std::size_t>(j)] = true;
  }
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (!on[static_cast<std::size_t>(j)] && beta[j] != 0.0)
      throw InvalidSpec("beta is nonzero outside its support");
  }
}

Matrix Dataset::cluster_X(int t) const {
  std::vector<Eigen::Index> rows_of;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == t) rows_of.push_back(static_cast<Eigen::Index>(i));
  return X(rows_of, Eigen::all);
}

Vector Dataset::cluster_Y(int t) const {
  std::vector<Eigen::Index> rows_of;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == t) rows_of.push_back(static_cast<Eigen::Index>(i));
  return Y(rows_of);
}

Dataset Dataset::cluster(int t) const {
  if (t < 1 || t > num_clusters()) throw DimensionMismatch("cluster id out of range");
  Dataset out;
  out.X = cluster_X(t);
  out.Y = cluster_Y(t);
  out.labels.assign(static_cast<std::size_t>(out.X.rows()), 1);
  out.clusters = {clusters[static_cast<std::size_t>(t - 1)]};
  out.outcome = outcome;
  out.seed = seed;
  return out;
}

Matrix gen_cluster(const ClusterSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = static_cast<Eigen::Index>(spec.size());
  const auto p = static_cast<Eigen::Index>(spec.dim());
  Matrix X(n, p);
  const Vector& loc = spec.location();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      switch (spec.family()) {
        case Family::gaussian: X(i, j) = loc[j] + rng.normal(); break;
        case Family::laplace: X(i, j) = loc[j] + rng.laplace(kLaplaceScale); break;
        case Family::uniform: X(i, j) = loc[j] + spec.width() * rng.uniform(); break;
      }
    }
  }
  return X;
}

std::vector<Vector> gen_means_on_sphere(std::size_t K, std::size_t p, double radius,
                                        std::uint64_t seed) {
  if (!(radius >= 0.0)) throw InvalidSpec("sphere radius must be nonnegative");
  if (p < 1) throw InvalidSpec("dimension must be at least 1");
  Rng rng(seed);
  std::vector<Vector> means;
  means.reserve(K);
  for (std::size_t t = 0; t < K; ++t) {
    Vector v(static_cast<Eigen::Index>(p));
    double norm = 0.0;
    do {
      for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = rng.normal();
      norm = v.norm();
    } while (norm == 0.0);
    means.push_back(radius == 0.0 ? Vector(Vector::Zero(v.size())) : Vector(v * (radius / norm)));
  }
  return means;
}

OutcomeSpec gen_beta(std::size_t p, std::size_t S, std::uint64_t seed,
                     std::optional<std::vector<int>> support) {
  if (S < 1 || S > p) throw InvalidSpec("support size must satisfy 1 <= S <= p");
  OutcomeSpec out;
  out.beta = Vector::Zero(static_cast<Eigen::Index>(p));
  if (support) {
    if (support->size() != S) throw InvalidSpec("support list does not have S entries");
    out.support = *support;
  } else {
    for (std::size_t j = 0; j < S; ++j) out.support.push_back(static_cast<int>(j));
  }
  Rng rng(seed);
  for (int j : out.support) {
    if (j < 0 || static_cast<std::size_t>(j) >= p) throw InvalidSpec("support index out of range");
    double b = 0.0;
    while (b == 0.0) b = rng.normal();
    out.beta[j] = b;
  }
  out.validate();
  return out;
}

Vector gen_outcome(const Matrix& X, const OutcomeSpec& outcome, const std::vector<int>& labels,
                   std::uint64_t seed) {
  if (X.cols() != outcome.beta.size())
    throw DimensionMismatch("covariate columns do not match beta length");
  if (static_cast<std::size_t>(X.rows()) != labels.size())
    throw DimensionMismatch("label count does not match rows");
  if (outcome.per_cluster_sign_flip) {
    for (int l : labels)
      if (l != 1 && l != 2) throw InvalidSpec("sign-flip outcome requires exactly two clusters");
  }
  Rng rng(seed);
  Vector Y = X * outcome.beta;
  for (Eigen::Index i = 0; i < Y.size(); ++i) {
    if (outcome.per_cluster_sign_flip && labels[static_cast<std::size_t>(i)] == 2) Y[i] = -Y[i];
    if (outcome.noise_sd > 0.0) Y[i] += outcome.noise_sd * rng.normal();
  }
  return Y;
}

Dataset gen_dataset(const std::vector<ClusterSpec>& clusters, const OutcomeSpec& outcome,
                    std::uint64_t seed) {
  if (clusters.empty()) throw InvalidSpec("at least one cluster is required");
  outcome.validate();
  const std::size_t p = clusters.front().dim();
  std::size_t n = 0;
  for (const auto& c : clusters) {
    if (c.dim() != p) throw DimensionMismatch("clusters have different dimensions");
    n += c.size();
  }
  Dataset data;
  data.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  data.labels.reserve(n);
  Eigen::Index row = 0;
  for (std::size_t t = 0; t < clusters.size(); ++t) {
    const Matrix block = gen_cluster(clusters[t], derive_seed(seed, t + 1));
    data.X.middleRows(row, block.rows()) = block;
    row += block.rows();
    data.labels.insert(data.labels.end(), clusters[t].size(), static_cast<int>(t + 1));
  }
  data.Y = gen_outcome(data.X, outcome, data.labels, derive_seed(seed, 0));
  data.clusters = clusters;
  data.outcome = outcome;
  data.seed = seed;
  return data;
}

std::vector<TestPoint> gen_testpoints(const std::vector<ClusterSpec>& clusters, std::size_t m,
                                      std::uint64_t seed) {
  if (clusters.empty()) throw InvalidSpec("at least one cluster is required");
  if (m < 1) throw InvalidSpec("at least one test point is required");
  Rng rng(seed);
  std::vector<TestPoint> points;
  points.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto t = static_cast<std::size_t>(rng.index(clusters.size()));
    const ClusterSpec one = clusters[t].with_size(1);
    Matrix row = gen_cluster(one, rng.bits());
    points.push_back(TestPoint{row.row(0).transpose(), static_cast<int>(t + 1)});
  }
  return points;
}

std::vector<TestPoint> gen_testpoints_standard_normal(std::size_t p, std::size_t m,
                                                      std::uint64_t seed) {
  if (m < 1) throw InvalidSpec("at least one test point is required");
  Rng rng(seed);
  std::vector<TestPoint> points;
  points.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    Vector x(static_cast<Eigen::Index>(p));
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = rng.normal();
    points.push_back(TestPoint{std::move(x), 1});
  }
  return points;
}

void write_csv(const Dataset& data, std::ostream& out) {
  const auto p = data.X.cols();
  for (Eigen::Index j = 0; j < p; ++j) out << 'x' << (j + 1) << ',';
  out << "y,label\n";
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    for (Eigen::Index j = 0; j < p; ++j) out << format_double(data.X(i, j)) << ',';
    out << format_double(data.Y[i]) << ',' << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

namespace {

nlohmann::json vector_json(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto xs = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

}  // namespace

nlohmann::json to_json(const ClusterSpec& spec) {
  nlohmann::json j;
  j["family"] = to_string(spec.family());
  j["n"] = spec.size();
  if (spec.family() == Family::uniform) {
    j["start"] = vector_json(spec.location());
    j["width"] = spec.width();
  } else {
    j["mean"] = vector_json(spec.location());
  }
  return j;
}

ClusterSpec cluster_spec_from_json(const nlohmann::json& j) {
  const Family f = family_from_string(j.at("family").get<std::string>());
  const auto n = j.at("n").get<std::size_t>();
  switch (f) {
    case Family::uniform:
      return ClusterSpec::uniform(n, vector_from_json(j.at("start")), j.at("width").get<double>());
    case Family::gaussian: return ClusterSpec::gaussian(n, vector_from_json(j.at("mean")));
    case Family::laplace: return ClusterSpec::laplace(n, vector_from_json(j.at("mean")));
  }
  throw InvalidSpec("unreachable family");
}

nlohmann::json to_json(const OutcomeSpec& spec) {
  return {{"beta", vector_json(spec.beta)},
          {"support", spec.support},
          {"noise_sd", spec.noise_sd},
          {"per_cluster_sign_flip", spec.per_cluster_sign_flip}};
}

OutcomeSpec outcome_spec_from_json(const nlohmann::json& j) {
  OutcomeSpec out;
  out.beta = vector_from_json(j.at("beta"));
  out.support = j.at("support").get<std::vector<int>>();
  out.noise_sd = j.value("noise_sd", 1.0);
  out.per_cluster_sign_flip = j.value("per_cluster_sign_flip", false);
  out.validate();
  return out;
}

nlohmann::json sidecar_json(const Dataset& data) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : data.clusters) clusters.push_back(to_json(c));
  return {{"schema", 1},
          {"seed", data.seed},
          {"rows", data.rows()},
          {"dim", data.dim()},
          {"clusters", clusters},
          {"outcome", to_json(data.outcome)}};
}

}  // namespace clens
