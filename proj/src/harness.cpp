#include "clens/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>
#include <tuple>

#include "clens/cforest.hpp"
#include "clens/errors.hpp"
#include "clens/linmodels.hpp"
#include "clens/rng.hpp"
#include "clens/theory.hpp"
#include "clens/weighting.hpp"

namespace clens {

namespace {

using nlohmann::json;

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Vector constant_vector(std::size_t p, double v) {
  return Vector::Constant(static_cast<Eigen::Index>(p), v);
}

Matrix stack_points(const std::vector<TestPoint>& points) {
  Matrix X(static_cast<Eigen::Index>(points.size()), points.front().x.size());
  for (std::size_t i = 0; i < points.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = points[i].x.transpose();
  return X;
}

double rmse(const Vector& pred, const Vector& target) {
  return std::sqrt((pred - target).squaredNorm() / static_cast<double>(pred.size()));
}

double mse(const Vector& pred, const Vector& target) {
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

/// Jackknife standard error of the mean of `xs`.
double jackknife_se(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const double total = compensated_sum(xs);
  std::vector<double> loo(n);
  for (std::size_t i = 0; i < n; ++i) loo[i] = (total - xs[i]) / static_cast<double>(n - 1);
  const double centre = mean(loo);
  CompensatedSum acc;
  for (double v : loo) acc.add((v - centre) * (v - centre));
  return std::sqrt(static_cast<double>(n - 1) / static_cast<double>(n) * acc.value());
}

json summary_to_json(const Summary& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"sd", s.sd}, {"ci_low", s.ci_low},
          {"ci_high", s.ci_high}};
}

/// Per-cluster Gram matrices and X^T Y, combined into per-cluster and merged fits.
struct OlsBundle {
  std::vector<OlsFit> scl;
  std::vector<Matrix> grams;
  OlsFit merged;
};

OlsBundle fit_bundle(const Dataset& data) {
  const int K = data.num_clusters();
  std::vector<OlsFit> scl;
  std::vector<Matrix> grams;
  Matrix g_total = Matrix::Zero(data.X.cols(), data.X.cols());
  Vector xty_total = Vector::Zero(data.X.cols());
  for (int t = 1; t <= K; ++t) {
    const Matrix Xt = data.cluster_X(t);
    const Vector Yt = data.cluster_Y(t);
    if (Xt.rows() < Xt.cols()) throw RankDeficient("cluster " + std::to_string(t) + " has fewer rows than columns");
    Matrix g = gram(Xt);
    const Vector xty = Xt.transpose() * Yt;
    scl.emplace_back(g, xty, static_cast<std::size_t>(Xt.rows()));
    g_total += g;
    xty_total += xty;
    grams.push_back(std::move(g));
  }
  OlsFit merged(g_total, xty_total, data.rows());
  return OlsBundle{std::move(scl), std::move(grams), std::move(merged)};
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void check_schema(const json& j) {
  if (j.contains("schema") && j.at("schema").get<int>() != 1)
    throw InvalidSpec("unsupported config schema version");
}

template <typename F>
auto parse_config(const json& j, F&& body) {
  try {
    check_schema(j);
    return body();
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("bad config: ") + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<AggregateRow> aggregate(const std::vector<Record>& records) {
  if (records.empty()) throw EmptyInput("no records to aggregate");
  using Key = std::tuple<std::string, std::string, double, std::string, std::string>;
  std::map<Key, std::size_t> index;
  std::vector<AggregateRow> rows;
  std::vector<std::vector<double>> values;
  for (const Record& r : records) {
    const Key key{r.experiment, r.family, r.grid_value, r.scheme, r.metric};
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, rows.size()).first;
      rows.push_back(AggregateRow{r.experiment, r.family, r.grid_value, r.scheme, r.metric, {}});
      values.emplace_back();
    }
    values[it->second].push_back(r.value);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].summary = summarize(values[i]);
  return rows;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex guard;
  std::exception_ptr first_error;
  std::size_t first_index = std::numeric_limits<std::size_t>::max();
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(guard);
        // Report the lowest failing index so errors are scheduling independent.
        if (i < first_index) {
          first_index = i;
          first_error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min(workers, n);
  pool.reserve(count);
  for (std::size_t w = 0; w < count; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Config JSON

json to_json(const Table1Config& c) {
  return {{"schema", 1},          {"experiment", "table1"},
          {"K", c.K},             {"n_t", c.n_t},
          {"p", c.p},             {"S", c.S},
          {"sigma", c.sigma},     {"radius", c.radius},
          {"replicates", c.replicates}, {"m_test", c.m_test},
          {"test_clusters", c.test_clusters}, {"reuse_train_means", c.reuse_train_means},
          {"seed", c.seed}};
}

Table1Config table1_config_from_json(const json& j) {
  return parse_config(j, [&] {
    Table1Config c;
    c.K = get_or(j, "K", c.K);
    c.n_t = get_or(j, "n_t", c.n_t);
    c.p = get_or(j, "p", c.p);
    c.S = get_or(j, "S", c.p);
    c.sigma = get_or(j, "sigma", c.sigma);
    c.radius = get_or(j, "radius", c.radius);
    c.replicates = get_or(j, "replicates", c.replicates);
    c.m_test = get_or(j, "m_test", c.m_test);
    c.test_clusters = get_or(j, "test_clusters", c.test_clusters);
    c.reuse_train_means = get_or(j, "reuse_train_means", c.reuse_train_means);
    c.seed = get_or(j, "seed", c.seed);
    c.workers = get_or(j, "workers", c.workers);
    return c;
  });
}

json to_json(const Fig1Config& c) {
  return {{"schema", 1},         {"experiment", "fig1"},  {"n_t", c.n_t},
          {"gamma_t", c.gamma_t}, {"replicates", c.replicates}, {"m_test", c.m_test},
          {"sigma", c.sigma},    {"radius", c.radius},    {"sign_flip", c.sign_flip},
          {"all_schemes", c.all_schemes}, {"seed", c.seed}};
}

Fig1Config fig1_config_from_json(const json& j) {
  return parse_config(j, [&] {
    Fig1Config c;
    c.n_t = get_or(j, "n_t", c.n_t);
    c.gamma_t = get_or(j, "gamma_t", c.gamma_t);
    c.replicates = get_or(j, "replicates", c.replicates);
    c.m_test = get_or(j, "m_test", c.m_test);
    c.sigma = get_or(j, "sigma", c.sigma);
    c.radius = get_or(j, "radius", c.radius);
    c.sign_flip = get_or(j, "sign_flip", c.sign_flip);
    c.all_schemes = get_or(j, "all_schemes", c.all_schemes);
    c.seed = get_or(j, "seed", c.seed);
    c.workers = get_or(j, "workers", c.workers);
    return c;
  });
}

json to_json(const Fig2Config& c) {
  std::vector<std::string> fams;
  for (Family f : c.families) fams.push_back(to_string(f));
  return {{"schema", 1},       {"experiment", "fig2"}, {"families", fams},
          {"K_grid", c.K_grid}, {"n_t", c.n_t},        {"p", c.p},
          {"S", c.S},          {"k_n", c.k_n},         {"trees", c.trees},
          {"replicates", c.replicates}, {"m_test", c.m_test}, {"width", c.width},
          {"placement", c.placement}, {"spacing", c.spacing}, {"spread", c.spread}, {"sigma", c.sigma}, {"noisy_targets", c.noisy_targets},
          {"seed", c.seed}};
}

Fig2Config fig2_config_from_json(const json& j) {
  return parse_config(j, [&] {
    Fig2Config c;
    if (j.contains("families")) {
      c.families.clear();
      for (const auto& f : j.at("families")) c.families.push_back(family_from_string(f.get<std::string>()));
    }
    c.K_grid = get_or(j, "K_grid", c.K_grid);
    c.n_t = get_or(j, "n_t", c.n_t);
    c.p = get_or(j, "p", c.p);
    c.S = get_or(j, "S", c.S);
    c.k_n = get_or(j, "k_n", c.k_n);
    c.trees = get_or(j, "trees", c.trees);
    c.replicates = get_or(j, "replicates", c.replicates);
    c.m_test = get_or(j, "m_test", c.m_test);
    c.width = get_or(j, "width", c.width);
    c.placement = get_or(j, "placement", c.placement);
    if (c.placement != "diagonal" && c.placement != "random")
      throw InvalidSpec("placement must be 'diagonal' or 'random'");
    c.spacing = get_or(j, "spacing", c.spacing);
    c.spread = get_or(j, "spread", c.spread);
    c.sigma = get_or(j, "sigma", c.sigma);
    c.noisy_targets = get_or(j, "noisy_targets", c.noisy_targets);
    c.seed = get_or(j, "seed", c.seed);
    c.workers = get_or(j, "workers", c.workers);
    return c;
  });
}

json to_json(const BiasConfig& c) {
  return {{"schema", 1},     {"experiment", "bias"}, {"n_t", c.n_t},   {"p", c.p},
          {"S", c.S},        {"k_n", c.k_n},         {"trees", c.trees}, {"datasets", c.datasets},
          {"m_test", c.m_test}, {"outer", c.outer},  {"sigma", c.sigma}, {"seed", c.seed}};
}

BiasConfig bias_config_from_json(const json& j) {
  return parse_config(j, [&] {
    BiasConfig c;
    c.n_t = get_or(j, "n_t", c.n_t);
    c.p = get_or(j, "p", c.p);
    c.S = get_or(j, "S", c.S);
    c.k_n = get_or(j, "k_n", c.k_n);
    c.trees = get_or(j, "trees", c.trees);
    c.datasets = get_or(j, "datasets", c.datasets);
    c.m_test = get_or(j, "m_test", c.m_test);
    c.outer = get_or(j, "outer", c.outer);
    c.sigma = get_or(j, "sigma", c.sigma);
    c.seed = get_or(j, "seed", c.seed);
    c.workers = get_or(j, "workers", c.workers);
    return c;
  });
}

json to_json(const VarianceConfig& c) {
  return {{"schema", 1},  {"experiment", "variance"}, {"K", c.K},         {"n_t", c.n_t},
          {"p", c.p},     {"designs", c.designs},     {"m_test", c.m_test}, {"means", c.means},
          {"radius", c.radius}, {"seed", c.seed}};
}

VarianceConfig variance_config_from_json(const json& j) {
  return parse_config(j, [&] {
    VarianceConfig c;
    c.K = get_or(j, "K", c.K);
    c.n_t = get_or(j, "n_t", c.n_t);
    c.p = get_or(j, "p", c.p);
    c.designs = get_or(j, "designs", c.designs);
    c.m_test = get_or(j, "m_test", c.m_test);
    c.means = get_or(j, "means", c.means);
    c.radius = get_or(j, "radius", c.radius);
    c.seed = get_or(j, "seed", c.seed);
    c.workers = get_or(j, "workers", c.workers);
    return c;
  });
}

json to_json(const RandomMatrixConfig& c) {
  return {{"schema", 1}, {"experiment", "random_matrix"}, {"n", c.n}, {"p", c.p},
          {"draws", c.draws}, {"tolerance", c.tolerance}, {"seed", c.seed}};
}

RandomMatrixConfig random_matrix_config_from_json(const json& j) {
  return parse_config(j, [&] {
    RandomMatrixConfig c;
    c.n = get_or(j, "n", c.n);
    c.p = get_or(j, "p", c.p);
    c.draws = get_or(j, "draws", c.draws);
    c.tolerance = get_or(j, "tolerance", c.tolerance);
    c.seed = get_or(j, "seed", c.seed);
    return c;
  });
}

// ---------------------------------------------------------------------------
// Weighting comparison (table1)

ExperimentResult run_table1(const Table1Config& cfg) {
  if (cfg.replicates < 1) throw InvalidSpec("replicates must be at least 1");
  if (cfg.K < 2) throw InvalidSpec("table1 needs at least two clusters");
  if (cfg.test_clusters < 1 || (cfg.reuse_train_means && cfg.test_clusters > cfg.K))
    throw InvalidSpec("test cluster count must be in 1..K when reusing training means");

  struct Slot {
    std::vector<Record> records;
    std::vector<WeightRow> weights;
  };
  std::vector<Slot> slots(cfg.replicates);

  parallel_for(cfg.replicates, cfg.workers, [&](std::size_t r) {
    const std::uint64_t s = derive_seed(cfg.seed, r);
    try {
      const auto means = gen_means_on_sphere(cfg.K, cfg.p, cfg.radius, derive_seed(s, 1));
      std::vector<ClusterSpec> clusters;
      for (const Vector& mu : means) clusters.push_back(ClusterSpec::gaussian(cfg.n_t, mu));
      OutcomeSpec outcome = gen_beta(cfg.p, cfg.S, derive_seed(s, 2));
      outcome.noise_sd = cfg.sigma;
      const Dataset data = gen_dataset(clusters, outcome, derive_seed(s, 3));
      const OlsBundle fits = fit_bundle(data);

      std::vector<ClusterSpec> test_clusters;
      if (cfg.reuse_train_means) {
        test_clusters.assign(clusters.begin(), clusters.begin() + static_cast<std::ptrdiff_t>(cfg.test_clusters));
      } else {
        for (const Vector& mu : gen_means_on_sphere(cfg.test_clusters, cfg.p, cfg.radius, derive_seed(s, 4)))
          test_clusters.push_back(ClusterSpec::gaussian(1, mu));
      }
      const auto points = gen_testpoints(test_clusters, cfg.m_test, derive_seed(s, 5));
      const Matrix Xtest = stack_points(points);
      Rng noise(derive_seed(s, 6));
      Vector Ytest = Xtest * outcome.beta;
      for (Eigen::Index i = 0; i < Ytest.size(); ++i) Ytest[i] += noise.normal(0.0, cfg.sigma);

      const Matrix Ptest = prediction_matrix(fits.scl, Xtest);
      const WeightVector w_avg = average_weights(cfg.K);
      const WeightVector w_ivw = ivw_empirical_weights(fits.scl, data);
      const WeightVector w_stack = stacking_weights(fits.scl, data);

      Slot& slot = slots[r];
      auto add = [&](const std::string& scheme, const std::string& metric, double grid, double v) {
        slot.records.push_back(Record{"table1", "gaussian", grid, r, scheme, metric, v});
      };
      add("merged", "rmse", 0.0, rmse(fits.merged.predict_rows(Xtest), Ytest));
      add("average", "rmse", 0.0, rmse(Ptest * w_avg.w, Ytest));
      add("ivw", "rmse", 0.0, rmse(Ptest * w_ivw.w, Ytest));
      add("stacking", "rmse", 0.0, rmse(Ptest * w_stack.w, Ytest));

      std::vector<int> order(cfg.K);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return w_ivw.w[a] < w_ivw.w[b]; });
      for (const WeightVector* wv : {&w_ivw, &w_stack}) {
        const std::string scheme = to_string(wv->scheme);
        for (std::size_t k = 0; k < order.size(); ++k) {
          const double v = wv->w[order[k]];
          add(scheme, "weight", static_cast<double>(k + 1), v);
          slot.weights.push_back(WeightRow{r, scheme, static_cast<int>(k + 1), order[k] + 1, v, wv->raw_sum});
        }
      }
    } catch (const RankDeficient& e) {
      throw RankDeficient("replicate " + std::to_string(r) + ": " + e.what());
    }
  });

  ExperimentResult out;
  out.experiment = "table1";
  out.config = to_json(cfg);
  for (Slot& s : slots) {
    out.records.insert(out.records.end(), s.records.begin(), s.records.end());
    out.weight_rows.insert(out.weight_rows.end(), s.weights.begin(), s.weights.end());
  }
  out.aggregates = aggregate(out.records);

  json rmse_table = json::object();
  double merged_rmse = 0.0;
  for (const auto& a : out.aggregates)
    if (a.metric == "rmse" && a.scheme == "merged") merged_rmse = a.summary.mean;
  json weights = json::object();
  for (const auto& a : out.aggregates) {
    if (a.metric == "rmse") {
      rmse_table[a.scheme] = summary_to_json(a.summary);
      rmse_table[a.scheme]["relative_to_merged"] = (a.summary.mean - merged_rmse) / merged_rmse;
    } else {
      weights[a.scheme].push_back({{"rank", static_cast<int>(a.grid_value)}, {"summary", summary_to_json(a.summary)}});
    }
  }
  std::vector<double> raw_sums;
  for (const auto& w : out.weight_rows)
    if (w.scheme == "stacking" && w.rank == 1) raw_sums.push_back(w.raw_sum);
  out.summary = {{"rmse", rmse_table},
                 {"weights_by_ivw_rank", weights},
                 {"stacking_raw_sum", summary_to_json(summarize(raw_sums))}};
  return out;
}

// ---------------------------------------------------------------------------
// High-dimensional percent-change curve (fig1)

ExperimentResult run_fig1(const Fig1Config& cfg) {
  if (cfg.replicates < 1) throw InvalidSpec("replicates must be at least 1");
  if (cfg.gamma_t.empty()) throw InvalidSpec("gamma grid is empty");
  ExperimentResult out;
  out.experiment = "fig1";
  out.config = to_json(cfg);
  json curve = json::array();

  for (std::size_t g = 0; g < cfg.gamma_t.size(); ++g) {
    const double gamma_t = cfg.gamma_t[g];
    const auto p = static_cast<std::size_t>(std::llround(gamma_t * static_cast<double>(cfg.n_t)));
    if (p < 1) {
      out.notes.push_back("gamma_t=" + shortest(gamma_t) + " skipped: p rounds to 0");
      continue;
    }
    if (p >= cfg.n_t) {
      out.notes.push_back("gamma_t=" + shortest(gamma_t) + " skipped: p >= n_t");
      continue;
    }
    const std::uint64_t stream = derive_seed(cfg.seed, g + 1);
    struct Slot {
      std::vector<Record> records;
      bool failed = false;
      std::string why;
    };
    std::vector<Slot> slots(cfg.replicates);
    parallel_for(cfg.replicates, cfg.workers, [&](std::size_t r) {
      const std::uint64_t s = derive_seed(stream, r);
      Slot& slot = slots[r];
      try {
        const auto means = gen_means_on_sphere(2, p, cfg.radius, derive_seed(s, 1));
        const std::vector<ClusterSpec> clusters = {ClusterSpec::gaussian(cfg.n_t, means[0]),
                                                   ClusterSpec::gaussian(cfg.n_t, means[1])};
        OutcomeSpec outcome = gen_beta(p, p, derive_seed(s, 2));
        outcome.noise_sd = cfg.sigma;
        outcome.per_cluster_sign_flip = cfg.sign_flip;
        const Dataset data = gen_dataset(clusters, outcome, derive_seed(s, 3));
        const OlsBundle fits = fit_bundle(data);

        const auto points = gen_testpoints(clusters, cfg.m_test, derive_seed(s, 5));
        const Matrix Xtest = stack_points(points);
        Vector f = Xtest * outcome.beta;
        if (cfg.sign_flip)
          for (std::size_t i = 0; i < points.size(); ++i)
            if (points[i].membership == 2) f[static_cast<Eigen::Index>(i)] = -f[static_cast<Eigen::Index>(i)];
        const Matrix Ptest = prediction_matrix(fits.scl, Xtest);
        auto add = [&](const std::string& scheme, double v) {
          slot.records.push_back(Record{"fig1", "gaussian", gamma_t, r, scheme, "mse", v});
        };
        add("merged", mse(fits.merged.predict_rows(Xtest), f));
        add("ivw", mse(Ptest * ivw_empirical_weights(fits.scl, data).w, f));
        if (cfg.all_schemes) {
          add("average", mse(Ptest * average_weights(2).w, f));
          add("stacking", mse(Ptest * stacking_weights(fits.scl, data).w, f));
        }
      } catch (const RankDeficient& e) {
        slot.failed = true;
        slot.why = e.what();
      }
    });
    const auto failed = std::find_if(slots.begin(), slots.end(), [](const Slot& s) { return s.failed; });
    if (failed != slots.end()) {
      out.notes.push_back("gamma_t=" + shortest(gamma_t) + " skipped: rank deficient design (" +
                          failed->why + ")");
      continue;
    }
    std::vector<double> merged_mse, ivw_mse;
    for (Slot& s : slots) {
      for (const Record& rec : s.records) {
        if (rec.scheme == "merged") merged_mse.push_back(rec.value);
        if (rec.scheme == "ivw") ivw_mse.push_back(rec.value);
      }
      out.records.insert(out.records.end(), s.records.begin(), s.records.end());
    }
    const double mm = mean(merged_mse);
    const double me = mean(ivw_mse);
    curve.push_back({{"gamma_t", gamma_t},
                     {"p", p},
                     {"mse_merged", mm},
                     {"mse_ensemble", me},
                     {"percent_change", 100.0 * (me / mm - 1.0)},
                     {"theory", theory::fig1_theory_percent_change(gamma_t)}});
  }
  if (out.records.empty()) throw EmptyInput("every grid point was skipped");
  out.aggregates = aggregate(out.records);
  out.summary = {{"curve", curve}};
  return out;
}

// ---------------------------------------------------------------------------
// Forest RMSE versus number of clusters (fig2)

namespace {

std::vector<ClusterSpec> fig2_clusters(const Fig2Config& cfg, Family family, std::size_t K,
                                       std::uint64_t seed) {
  std::vector<ClusterSpec> clusters;
  Rng rng(seed);
  for (std::size_t t = 0; t < K; ++t) {
    Vector loc = constant_vector(cfg.p, cfg.spacing * static_cast<double>(t));
    if (cfg.placement == "random") {
      // spread is in units of the within-cluster standard deviation.
      const double sd = family == Family::uniform ? cfg.width / std::sqrt(12.0) : 1.0;
      for (Eigen::Index j = 0; j < loc.size(); ++j) loc[j] = cfg.spread * sd * rng.uniform();
    }
    switch (family) {
      case Family::uniform: clusters.push_back(ClusterSpec::uniform(cfg.n_t, loc, cfg.width)); break;
      case Family::gaussian: clusters.push_back(ClusterSpec::gaussian(cfg.n_t, loc)); break;
      case Family::laplace: clusters.push_back(ClusterSpec::laplace(cfg.n_t, loc)); break;
    }
  }
  return clusters;
}

std::vector<int> first_indices(std::size_t S) {
  std::vector<int> idx(S);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

ExperimentResult run_fig2(const Fig2Config& cfg) {
  if (cfg.replicates < 1) throw InvalidSpec("replicates must be at least 1");
  if (cfg.K_grid.empty() || cfg.families.empty()) throw InvalidSpec("fig2 grid is empty");
  if (cfg.S < 1 || cfg.S > cfg.p) throw InvalidSpec("S must be in 1..p");
  if (cfg.placement != "diagonal" && cfg.placement != "random")
    throw InvalidSpec("placement must be 'diagonal' or 'random'");
  const int depth = tree_depth(cfg.k_n);
  const SplitScheme scheme = SplitScheme::idealized(cfg.p, first_indices(cfg.S));

  ExperimentResult out;
  out.experiment = "fig2";
  out.config = to_json(cfg);
  json curves = json::object();

  for (std::size_t fi = 0; fi < cfg.families.size(); ++fi) {
    const Family family = cfg.families[fi];
    json curve = json::array();
    for (std::size_t K : cfg.K_grid) {
      if (K < 1) throw InvalidSpec("K must be at least 1");
      const std::uint64_t stream = derive_seed(derive_seed(cfg.seed, fi + 1), K);
      std::vector<std::array<double, 2>> scores(cfg.replicates);
      parallel_for(cfg.replicates, cfg.workers, [&](std::size_t r) {
        const std::uint64_t s = derive_seed(stream, r);
        const auto clusters = fig2_clusters(cfg, family, K, derive_seed(s, 5));
        OutcomeSpec outcome = gen_beta(cfg.p, cfg.S, derive_seed(s, 1));
        outcome.noise_sd = cfg.sigma;
        const Dataset data = gen_dataset(clusters, outcome, derive_seed(s, 2));

        std::vector<FittedForest> per_cluster;
        per_cluster.reserve(K);
        for (std::size_t t = 0; t < K; ++t) {
          const ForestSpec spec{depth, cfg.trees, scheme, derive_seed(s, 100 + t)};
          const int label = static_cast<int>(t + 1);
          per_cluster.emplace_back(build_forest(spec, MarginalCDF::mixture({clusters[t]})),
                                   data.cluster_X(label), data.cluster_Y(label));
        }
        const ForestSpec merged_spec{depth, cfg.trees, scheme, derive_seed(s, 99)};
        const FittedForest merged(build_forest(merged_spec, MarginalCDF::mixture(clusters)), data.X, data.Y);

        const auto points = gen_testpoints(clusters, cfg.m_test, derive_seed(s, 3));
        Rng noise(derive_seed(s, 4));
        CompensatedSum se_e, se_m;
        for (const TestPoint& tp : points) {
          double target = outcome.regression(tp.x);
          if (cfg.noisy_targets) target += noise.normal(0.0, cfg.sigma);
          const double e = ensemble_forest_predict(per_cluster, tp.x, tp.membership) - target;
          const double m = merged_forest_predict(merged, tp.x) - target;
          se_e.add(e * e);
          se_m.add(m * m);
        }
        const double count = static_cast<double>(points.size());
        scores[r] = {std::sqrt(se_e.value() / count), std::sqrt(se_m.value() / count)};
      });

      std::vector<double> ens, mer, diff;
      for (std::size_t r = 0; r < cfg.replicates; ++r) {
        out.records.push_back(Record{"fig2", to_string(family), static_cast<double>(K), r, "ensemble", "rmse", scores[r][0]});
        out.records.push_back(Record{"fig2", to_string(family), static_cast<double>(K), r, "merged", "rmse", scores[r][1]});
        ens.push_back(scores[r][0]);
        mer.push_back(scores[r][1]);
        diff.push_back(scores[r][1] - scores[r][0]);
      }
      const double me = mean(ens);
      const double mm = mean(mer);
      curve.push_back({{"K", K},
                       {"rmse_ensemble", me},
                       {"rmse_merged", mm},
                       {"improvement_percent", 100.0 * (1.0 - me / mm)},
                       {"paired_difference", summary_to_json(summarize(diff))},
                       {"bound_ratio", (K & (K - 1)) == 0 ? json(static_cast<double>(K)) : json(nullptr)}});
    }
    curves[to_string(family)] = curve;
  }
  out.aggregates = aggregate(out.records);
  out.summary = {{"curves", curves}, {"depth", depth}};
  return out;
}

// ---------------------------------------------------------------------------
// Squared bias

BiasEstimate estimate_squared_bias(const BiasConfig& cfg) {
  if (cfg.outer < 1 || cfg.datasets < 2 || cfg.m_test < 1 || cfg.trees < 1)
    throw InvalidSpec("bias estimation needs outer >= 1, datasets >= 2, m_test >= 1, trees >= 1");
  if (cfg.S < 1 || cfg.S > cfg.p) throw InvalidSpec("S must be in 1..p");
  const int depth = tree_depth(cfg.k_n);
  const SplitScheme scheme = SplitScheme::idealized(cfg.p, first_indices(cfg.S));
  const std::vector<ClusterSpec> clusters = {
      ClusterSpec::uniform(cfg.n_t, constant_vector(cfg.p, 0.0), 0.5),
      ClusterSpec::uniform(cfg.n_t, constant_vector(cfg.p, 1.0), 0.5)};
  const std::vector<MarginalCDF> own_cdf = {MarginalCDF::mixture({clusters[0]}),
                                            MarginalCDF::mixture({clusters[1]})};
  const MarginalCDF merged_cdf = MarginalCDF::mixture(clusters);
  const std::size_t p = cfg.p;
  const std::size_t leaves = std::size_t{1} << depth;

  std::vector<double> outer_e(cfg.outer), outer_m(cfg.outer);
  parallel_for(cfg.outer, cfg.workers, [&](std::size_t o) {
    const std::uint64_t s = derive_seed(cfg.seed, o);
    OutcomeSpec outcome = gen_beta(cfg.p, cfg.S, derive_seed(s, 1));
    outcome.noise_sd = cfg.sigma;
    const auto points = gen_testpoints(clusters, cfg.m_test, derive_seed(s, 2));
    const std::vector<CenteredForest> own = {
        build_forest({depth, cfg.trees, scheme, derive_seed(s, 3)}, own_cdf[0]),
        build_forest({depth, cfg.trees, scheme, derive_seed(s, 4)}, own_cdf[1])};
    const CenteredForest merged = build_forest({depth, cfg.trees, scheme, derive_seed(s, 5)}, merged_cdf);

    const std::size_t m = points.size();
    const std::size_t B = cfg.trees;
    // Leaf of every test point in every tree of its own-cluster forest and of the merged forest.
    std::vector<std::uint32_t> leaf_e(m * B), leaf_m(m * B);
    std::vector<double> f(m);
    for (std::size_t i = 0; i < m; ++i) {
      const TestPoint& tp = points[i];
      f[i] = outcome.regression(tp.x);
      const auto ce = quantile_codes(own_cdf[static_cast<std::size_t>(tp.membership - 1)].transform(tp.x), depth);
      const auto cm = quantile_codes(merged_cdf.transform(tp.x), depth);
      const CenteredForest& forest = own[static_cast<std::size_t>(tp.membership - 1)];
      for (std::size_t b = 0; b < B; ++b) {
        leaf_e[i * B + b] = static_cast<std::uint32_t>(forest.trees[b].leaf_of_codes(ce.data()));
        leaf_m[i * B + b] = static_cast<std::uint32_t>(merged.trees[b].leaf_of_codes(cm.data()));
      }
    }

    std::vector<double> sum_e(m, 0.0), sq_e(m, 0.0), sum_m(m, 0.0), sq_m(m, 0.0);
    std::vector<double> pred_e(m), pred_m(m);
    std::vector<double> leaf_sum(leaves);
    std::vector<std::uint32_t> leaf_count(leaves);
    const std::size_t n = 2 * cfg.n_t;
    std::vector<std::uint64_t> codes_own(n * p), codes_merged(n * p);

    auto accumulate_tree = [&](const CenteredTree& tree, const std::uint64_t* codes, const Vector& Y,
                               std::size_t first, std::size_t last) {
      std::fill(leaf_sum.begin(), leaf_sum.end(), 0.0);
      std::fill(leaf_count.begin(), leaf_count.end(), 0U);
      for (std::size_t i = first; i < last; ++i) {
        const std::size_t leaf = tree.leaf_of_codes(codes + i * p);
        leaf_sum[leaf] += Y[static_cast<Eigen::Index>(i)];
        ++leaf_count[leaf];
      }
    };
    auto leaf_mean = [&](std::uint32_t leaf) {
      return leaf_count[leaf] == 0 ? 0.0 : leaf_sum[leaf] / static_cast<double>(leaf_count[leaf]);
    };

    for (std::size_t d = 0; d < cfg.datasets; ++d) {
      const Dataset data = gen_dataset(clusters, outcome, derive_seed(s, 1000 + d));
      for (std::size_t i = 0; i < n; ++i) {
        const Vector row = data.X.row(static_cast<Eigen::Index>(i)).transpose();
        const auto co = quantile_codes(own_cdf[static_cast<std::size_t>(data.labels[i] - 1)].transform(row), depth);
        const auto cm = quantile_codes(merged_cdf.transform(row), depth);
        std::copy(co.begin(), co.end(), codes_own.begin() + static_cast<std::ptrdiff_t>(i * p));
        std::copy(cm.begin(), cm.end(), codes_merged.begin() + static_cast<std::ptrdiff_t>(i * p));
      }
      std::fill(pred_e.begin(), pred_e.end(), 0.0);
      std::fill(pred_m.begin(), pred_m.end(), 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        for (int t = 0; t < 2; ++t) {
          const std::size_t first = static_cast<std::size_t>(t) * cfg.n_t;
          accumulate_tree(own[static_cast<std::size_t>(t)].trees[b], codes_own.data(), data.Y, first, first + cfg.n_t);
          for (std::size_t i = 0; i < m; ++i)
            if (points[i].membership == t + 1) pred_e[i] += leaf_mean(leaf_e[i * B + b]);
        }
        accumulate_tree(merged.trees[b], codes_merged.data(), data.Y, 0, n);
        for (std::size_t i = 0; i < m; ++i) pred_m[i] += leaf_mean(leaf_m[i * B + b]);
      }
      for (std::size_t i = 0; i < m; ++i) {
        const double e = pred_e[i] / static_cast<double>(B);
        const double mg = pred_m[i] / static_cast<double>(B);
        sum_e[i] += e;
        sq_e[i] += e * e;
        sum_m[i] += mg;
        sq_m[i] += mg * mg;
      }
    }

    const double R = static_cast<double>(cfg.datasets);
    auto bias2 = [&](const std::vector<double>& sum, const std::vector<double>& sq) {
      CompensatedSum acc;
      for (std::size_t i = 0; i < m; ++i) {
        const double mu = sum[i] / R;
        const double var = std::max(0.0, (sq[i] - R * mu * mu) / (R - 1.0));
        acc.add((mu - f[i]) * (mu - f[i]) - var / R);
      }
      return acc.value() / static_cast<double>(m);
    };
    outer_e[o] = bias2(sum_e, sq_e);
    outer_m[o] = bias2(sum_m, sq_m);
  });

  BiasEstimate est;
  est.outer_ensemble = outer_e;
  est.outer_merged = outer_m;
  est.ensemble = mean(outer_e);
  est.merged = mean(outer_m);
  est.ensemble_se = jackknife_se(outer_e);
  est.merged_se = jackknife_se(outer_m);
  std::vector<double> diff(cfg.outer);
  for (std::size_t o = 0; o < cfg.outer; ++o) diff[o] = outer_m[o] - outer_e[o];
  est.difference = mean(diff);
  est.difference_se = jackknife_se(diff);
  const double p_n = scheme.min_strong_prob();
  const auto S = static_cast<double>(cfg.S);
  const auto k_n = static_cast<double>(cfg.k_n);
  est.ensemble_bound = theory::cf_bound(S, k_n, p_n, theory::Learner::ensemble);
  est.merged_bound = theory::cf_bound(S, k_n, p_n, theory::Learner::merged);
  return est;
}

ExperimentResult run_bias(const BiasConfig& cfg) {
  const BiasEstimate est = estimate_squared_bias(cfg);
  ExperimentResult out;
  out.experiment = "bias";
  out.config = to_json(cfg);
  for (std::size_t o = 0; o < cfg.outer; ++o) {
    out.records.push_back(Record{"bias", "uniform", static_cast<double>(cfg.k_n), o, "ensemble", "squared_bias", est.outer_ensemble[o]});
    out.records.push_back(Record{"bias", "uniform", static_cast<double>(cfg.k_n), o, "merged", "squared_bias", est.outer_merged[o]});
  }
  out.aggregates = aggregate(out.records);
  out.summary = {{"ensemble", {{"estimate", est.ensemble}, {"jackknife_se", est.ensemble_se}, {"bound", est.ensemble_bound}}},
                 {"merged", {{"estimate", est.merged}, {"jackknife_se", est.merged_se}, {"bound", est.merged_bound}}},
                 {"difference", {{"estimate", est.difference}, {"jackknife_se", est.difference_se}}}};
  return out;
}

// ---------------------------------------------------------------------------
// Conditional variances

namespace {

std::vector<Vector> variance_means(const VarianceConfig& cfg) {
  if (cfg.means == "orthogonal") {
    if (cfg.K > cfg.p) throw InvalidSpec("orthogonal means need K <= p");
    std::vector<Vector> out;
    for (std::size_t t = 0; t < cfg.K; ++t) {
      Vector mu = Vector::Zero(static_cast<Eigen::Index>(cfg.p));
      mu[static_cast<Eigen::Index>(t)] = cfg.radius;
      out.push_back(mu);
    }
    return out;
  }
  if (cfg.means == "sphere")
    return gen_means_on_sphere(cfg.K, cfg.p, cfg.radius, derive_seed(cfg.seed, std::numeric_limits<std::uint64_t>::max()));
  throw InvalidSpec("means must be 'orthogonal' or 'sphere'");
}

}  // namespace

VarianceEstimate estimate_cond_variance(const VarianceConfig& cfg) {
  if (cfg.designs < 1 || cfg.m_test < 1 || cfg.K < 1) throw InvalidSpec("designs, m_test and K must be positive");
  if (cfg.n_t < cfg.p) throw InvalidSpec("each cluster needs n_t >= p");
  const auto means = variance_means(cfg);
  const double n = static_cast<double>(cfg.K * cfg.n_t);

  std::vector<double> ens(cfg.designs), mer(cfg.designs), ratio(cfg.designs);
  parallel_for(cfg.designs, cfg.workers, [&](std::size_t r) {
    const std::uint64_t s = derive_seed(cfg.seed, r);
    std::vector<Matrix> factors;
    Matrix total = Matrix::Zero(static_cast<Eigen::Index>(cfg.p), static_cast<Eigen::Index>(cfg.p));
    for (std::size_t t = 0; t < cfg.K; ++t) {
      const Matrix Xt = gen_cluster(ClusterSpec::gaussian(cfg.n_t, means[t]), derive_seed(s, t + 1));
      const Matrix g = gram(Xt);
      total += g;
      factors.push_back(OlsFit(g, Vector::Zero(g.rows()), cfg.n_t).gram_factor());
    }
    const Matrix merged_factor = OlsFit(total, Vector::Zero(total.rows()), cfg.K * cfg.n_t).gram_factor();
    const auto points = gen_testpoints_standard_normal(cfg.p, cfg.m_test, derive_seed(s, 1000));
    CompensatedSum acc_e, acc_m, acc_r;
    for (const TestPoint& tp : points) {
      double precision = 0.0;
      for (const Matrix& L : factors)
        precision += 1.0 / L.triangularView<Eigen::Lower>().solve(tp.x).squaredNorm();
      const double ve = 1.0 / precision;
      const double vm = merged_factor.triangularView<Eigen::Lower>().solve(tp.x).squaredNorm();
      acc_e.add(n * ve);
      acc_m.add(n * vm);
      acc_r.add(vm / ve);
    }
    const double count = static_cast<double>(points.size());
    ens[r] = acc_e.value() / count;
    mer[r] = acc_m.value() / count;
    ratio[r] = acc_r.value() / count;
  });

  VarianceEstimate est;
  est.ensemble_summary = summarize(ens);
  est.merged_summary = summarize(mer);
  est.ratio_summary = summarize(ratio);
  est.n_var_ensemble = est.ensemble_summary.mean;
  est.n_var_merged = est.merged_summary.mean;
  est.ratio = est.ratio_summary.mean;
  if (cfg.p >= 2) {
    std::vector<double> sizes(cfg.K, static_cast<double>(cfg.n_t));
    std::vector<double> norms;
    for (const Vector& mu : means) norms.push_back(mu.norm());
    est.d1 = n * theory::ensemble_variance_limit_d1(cfg.p, sizes, norms);
  }
  std::vector<double> lt(cfg.K, 1.0 / static_cast<double>(cfg.K));
  est.d2 = n * theory::merged_variance_limit_d2(n, lt, means);
  return est;
}

ExperimentResult run_variance(const VarianceConfig& cfg) {
  const VarianceEstimate est = estimate_cond_variance(cfg);
  ExperimentResult out;
  out.experiment = "variance";
  out.config = to_json(cfg);
  out.records.push_back(Record{"variance", "gaussian", static_cast<double>(cfg.p), 0, "ensemble", "n_var", est.n_var_ensemble});
  out.records.push_back(Record{"variance", "gaussian", static_cast<double>(cfg.p), 0, "merged", "n_var", est.n_var_merged});
  out.records.push_back(Record{"variance", "gaussian", static_cast<double>(cfg.p), 0, "merged_over_ensemble", "ratio", est.ratio});
  out.aggregates = aggregate(out.records);
  const double K = static_cast<double>(cfg.K);
  const double gamma = static_cast<double>(cfg.p) / (K * static_cast<double>(cfg.n_t));
  json summary = {{"ensemble", summary_to_json(est.ensemble_summary)},
                  {"merged", summary_to_json(est.merged_summary)},
                  {"ratio", summary_to_json(est.ratio_summary)},
                  {"n_d1", est.d1},
                  {"n_d2", est.d2}};
  if (K * gamma < 1.0) summary["highdim_ratio"] = theory::ols_highdim_ratio(gamma, static_cast<int>(cfg.K));
  out.summary = summary;
  return out;
}

NoiseVarianceCheck noise_replicate_variance(const std::vector<Matrix>& blocks, const Vector& beta,
                                            double sigma, const Vector& x, std::size_t R,
                                            std::uint64_t seed) {
  if (blocks.empty() || R < 2) throw InvalidSpec("need at least one block and two replicates");
  const Eigen::Index p = beta.size();
  std::vector<Matrix> grams;
  std::vector<Matrix> factors;
  Matrix total = Matrix::Zero(p, p);
  for (const Matrix& b : blocks) {
    if (b.cols() != p) throw DimensionMismatch("block and beta dimensions differ");
    grams.push_back(gram(b));
    total += grams.back();
    factors.push_back(OlsFit(grams.back(), Vector::Zero(p), static_cast<std::size_t>(b.rows())).gram_factor());
  }
  const Matrix total_factor = OlsFit(total, Vector::Zero(p), 0).gram_factor();
  auto solve = [](const Matrix& L, const Vector& v) {
    const Vector z = L.triangularView<Eigen::Lower>().solve(v);
    return Vector(L.transpose().triangularView<Eigen::Upper>().solve(z));
  };
  std::vector<double> q(blocks.size());
  double precision = 0.0;
  for (std::size_t t = 0; t < blocks.size(); ++t) {
    q[t] = factors[t].triangularView<Eigen::Lower>().solve(x).squaredNorm();
    precision += 1.0 / q[t];
  }
  Rng rng(seed);
  std::vector<double> merged_preds(R), ensemble_preds(R);
  for (std::size_t r = 0; r < R; ++r) {
    Vector xty_total = Vector::Zero(p);
    double ens = 0.0;
    for (std::size_t t = 0; t < blocks.size(); ++t) {
      Vector y = blocks[t] * beta;
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += rng.normal(0.0, sigma);
      const Vector xty = blocks[t].transpose() * y;
      xty_total += xty;
      ens += (1.0 / q[t]) / precision * x.dot(solve(factors[t], xty));
    }
    merged_preds[r] = x.dot(solve(total_factor, xty_total));
    ensemble_preds[r] = ens;
  }
  NoiseVarianceCheck out;
  out.replicates = R;
  out.empirical_merged = sample_variance(merged_preds);
  out.empirical_ensemble = sample_variance(ensemble_preds);
  out.exact_merged = sigma * sigma * total_factor.triangularView<Eigen::Lower>().solve(x).squaredNorm();
  out.exact_ensemble = sigma * sigma / precision;
  return out;
}

RandomMatrixResult random_matrix_check(const RandomMatrixConfig& cfg) {
  if (cfg.p < 1 || cfg.n <= cfg.p || cfg.draws < 1) throw InvalidSpec("need n > p >= 1 and draws >= 1");
  const Matrix X = gen_cluster(ClusterSpec::gaussian(cfg.n, Vector::Zero(static_cast<Eigen::Index>(cfg.p))),
                               derive_seed(cfg.seed, 0));
  const Matrix L = OlsFit(gram(X), Vector::Zero(static_cast<Eigen::Index>(cfg.p)), cfg.n).gram_factor();
  const Matrix Linv = L.triangularView<Eigen::Lower>().solve(Matrix::Identity(L.rows(), L.cols()));
  // trace((X^T X)^{-1}) = ||L^{-1}||_F^2; (gamma / p) trace((X^T X / n)^{-1}) = trace((X^T X)^{-1}).
  const double trace_inv = Linv.squaredNorm();
  const double gamma = static_cast<double>(cfg.p) / static_cast<double>(cfg.n);
  RandomMatrixResult out;
  out.scaled_trace = trace_inv;
  out.trace_target = gamma / (1.0 - gamma);
  const auto points = gen_testpoints_standard_normal(cfg.p, cfg.draws, derive_seed(cfg.seed, 1));
  std::size_t pass = 0;
  for (const TestPoint& tp : points) {
    const double q = (Linv * tp.x).squaredNorm();
    const double dev = std::abs(q - trace_inv);
    out.deviations.push_back(dev);
    if (dev < cfg.tolerance) ++pass;
  }
  out.pass_fraction = static_cast<double>(pass) / static_cast<double>(points.size());
  return out;
}

// ---------------------------------------------------------------------------
// Output

void write_records_csv(const std::vector<Record>& records, std::ostream& out) {
  out << "experiment,family,grid_value,replicate,scheme,metric,value\n";
  for (const Record& r : records) {
    out << r.experiment << ',' << r.family << ',' << shortest(r.grid_value) << ',' << r.replicate
        << ',' << r.scheme << ',' << r.metric << ',' << shortest(r.value) << '\n';
  }
}

void write_weights_csv(const std::vector<WeightRow>& rows, std::ostream& out) {
  out << "replicate,scheme,rank,cluster,weight,raw_sum\n";
  for (const WeightRow& w : rows) {
    out << w.replicate << ',' << w.scheme << ',' << w.rank << ',' << w.cluster << ','
        << shortest(w.weight) << ',' << shortest(w.raw_sum) << '\n';
  }
}

json summary_json(const ExperimentResult& result) {
  json aggregates = json::array();
  for (const AggregateRow& a : result.aggregates) {
    json row = summary_to_json(a.summary);
    row["family"] = a.family;
    row["grid_value"] = a.grid_value;
    row["scheme"] = a.scheme;
    row["metric"] = a.metric;
    aggregates.push_back(row);
  }
  return {{"schema", 1},
          {"experiment", result.experiment},
          {"config", result.config},
          {"aggregates", aggregates},
          {"summary", result.summary},
          {"notes", result.notes}};
}

}  // namespace clens
