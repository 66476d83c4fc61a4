#include <doctest.h>

#include <atomic>
#include <sstream>
#include <stdexcept>

#include "clens/errors.hpp"
#include "clens/harness.hpp"

using namespace clens;

namespace {

bool same_records(const std::vector<Record>& a, const std::vector<Record>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Record& x = a[i];
    const Record& y = b[i];
    if (x.family != y.family || x.grid_value != y.grid_value || x.replicate != y.replicate ||
        x.scheme != y.scheme || x.metric != y.metric || x.value != y.value)
      return false;
  }
  return true;
}

Table1Config small_table1() {
  Table1Config c;
  c.K = 3;
  c.n_t = 40;
  c.p = 4;
  c.S = 4;
  c.replicates = 6;
  c.m_test = 50;
  return c;
}

Fig2Config small_fig2() {
  Fig2Config c;
  c.families = {Family::uniform, Family::laplace};
  c.K_grid = {2, 4};
  c.n_t = 60;
  c.p = 3;
  c.S = 3;
  c.k_n = 8;
  c.trees = 5;
  c.replicates = 3;
  c.m_test = 40;
  return c;
}

}  // namespace

TEST_CASE("parallel_for visits every index once and rethrows") {
  for (std::size_t workers : {1u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(97);
    parallel_for(hits.size(), workers, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(parallel_for(10, 2, [](std::size_t i) {
                    if (i == 4) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
  parallel_for(0, 4, [](std::size_t) { FAIL("no indices expected"); });
}

TEST_CASE("aggregate groups by key in order of first appearance") {
  const std::vector<Record> records = {{"e", "f", 1.0, 0, "a", "rmse", 1.0},
                                       {"e", "f", 1.0, 0, "b", "rmse", 10.0},
                                       {"e", "f", 1.0, 1, "a", "rmse", 3.0},
                                       {"e", "f", 2.0, 0, "a", "rmse", 5.0}};
  const auto rows = aggregate(records);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].scheme == "a");
  CHECK(rows[0].grid_value == 1.0);
  CHECK(rows[0].summary.count == 2);
  CHECK(rows[0].summary.mean == 2.0);
  CHECK(rows[0].summary.sd == doctest::Approx(std::sqrt(2.0)));
  CHECK(rows[1].scheme == "b");
  CHECK(rows[2].grid_value == 2.0);
  CHECK_THROWS_AS(aggregate({}), EmptyInput);
}

TEST_CASE("csv writers emit the documented headers") {
  std::ostringstream out;
  write_records_csv({{"fig2", "uniform", 4.0, 2, "merged", "rmse", 0.25}}, out);
  CHECK(out.str() == "experiment,family,grid_value,replicate,scheme,metric,value\nfig2,uniform,4,2,merged,rmse,0.25\n");
  std::ostringstream w;
  write_weights_csv({{0, "ivw", 1, 3, 0.5, 1.0}}, w);
  CHECK(w.str().rfind("replicate,scheme,rank,cluster,weight,raw_sum\n", 0) == 0);
}

TEST_CASE("config json round trips and rejects bad input") {
  Table1Config t = small_table1();
  t.seed = 77;
  const Table1Config back = table1_config_from_json(to_json(t));
  CHECK(back.K == 3);
  CHECK(back.seed == 77);
  CHECK(back.m_test == 50);
  const Fig2Config f = fig2_config_from_json(to_json(small_fig2()));
  CHECK(f.families.size() == 2);
  CHECK(f.K_grid == std::vector<std::size_t>{2, 4});
  CHECK(f.placement == "random");
  CHECK(fig1_config_from_json(nlohmann::json::object()).gamma_t.size() == 9);
  CHECK(variance_config_from_json({{"means", "sphere"}}).means == "sphere");
  CHECK(bias_config_from_json(to_json(BiasConfig{})).outer == 20);
  CHECK(random_matrix_config_from_json(to_json(RandomMatrixConfig{})).p == 500);
  CHECK_THROWS_AS(table1_config_from_json({{"schema", 2}}), InvalidSpec);
  CHECK_THROWS_AS(table1_config_from_json({{"K", "five"}}), InvalidSpec);
}

TEST_CASE("table1 records and determinism across worker counts") {
  Table1Config c = small_table1();
  const ExperimentResult one = run_table1(c);
  c.workers = 3;
  const ExperimentResult three = run_table1(c);
  CHECK(same_records(one.records, three.records));
  // 4 rmse records and K weights for each of two schemes.
  CHECK(one.records.size() == c.replicates * (4 + 2 * c.K));
  CHECK(one.summary.at("rmse").at("merged").at("relative_to_merged").get<double>() == 0.0);
  for (const WeightRow& w : one.weight_rows) {
    CHECK(w.weight >= 0.0);
    CHECK(w.rank >= 1);
    CHECK(w.rank <= static_cast<int>(c.K));
  }
  c.seed = 2;
  CHECK_FALSE(same_records(one.records, run_table1(c).records));
}

TEST_CASE("table1 rejects a rank deficient cluster design") {
  Table1Config c = small_table1();
  c.n_t = 3;
  CHECK_THROWS_AS(run_table1(c), RankDeficient);
}

TEST_CASE("fig1 curve, theory overlay and skipped points") {
  Fig1Config c;
  c.n_t = 100;
  c.gamma_t = {0.001, 0.2, 0.5};
  c.replicates = 4;
  c.m_test = 50;
  const ExperimentResult r = run_fig1(c);
  const auto& curve = r.summary.at("curve");
  REQUIRE(curve.size() == 2);
  CHECK(r.notes.size() == 1);
  CHECK(curve[0].at("p").get<int>() == 20);
  CHECK(curve[1].at("theory").get<double>() == doctest::Approx(50.0));
  CHECK(curve[1].at("percent_change").get<double>() > 0.0);
  c.workers = 2;
  CHECK(same_records(r.records, run_fig1(c).records));
}

TEST_CASE("fig2 small run is deterministic and complete") {
  Fig2Config c = small_fig2();
  const ExperimentResult a = run_fig2(c);
  CHECK(a.records.size() == 2 * 2 * 3 * 2);
  const auto& curves = a.summary.at("curves");
  CHECK(curves.contains("uniform"));
  CHECK(curves.at("laplace").size() == 2);
  CHECK(curves.at("uniform")[1].at("bound_ratio").get<double>() == 4.0);
  for (const Record& rec : a.records) CHECK(rec.value > 0.0);
  c.workers = 2;
  CHECK(same_records(a.records, run_fig2(c).records));
  c.placement = "diagonal";
  CHECK_NOTHROW(run_fig2(c));
  c.placement = "spiral";
  CHECK_THROWS_AS(run_fig2(c), InvalidSpec);
}

TEST_CASE("conditional variance estimate tracks the fixed-p limits") {
  VarianceConfig c;
  c.n_t = 500;
  c.designs = 10;
  c.m_test = 20;
  const VarianceEstimate v = estimate_cond_variance(c);
  CHECK(v.d1 == doctest::Approx(9.5));
  CHECK(v.d2 == doctest::Approx(28.0 / 3.0));
  CHECK(std::abs(v.n_var_ensemble / 9.5 - 1.0) < 0.1);
  CHECK(std::abs(v.n_var_merged / (28.0 / 3.0) - 1.0) < 0.1);
  CHECK(v.ratio < 1.0);
  c.K = 11;
  CHECK_THROWS_AS(estimate_cond_variance(c), InvalidSpec);
}

TEST_CASE("random matrix trace limit on a small design") {
  RandomMatrixConfig c;
  c.n = 400;
  c.p = 100;
  c.draws = 20;
  const RandomMatrixResult r = random_matrix_check(c);
  CHECK(r.trace_target == doctest::Approx(1.0 / 3.0));
  CHECK(std::abs(r.scaled_trace - r.trace_target) < 0.05);
  CHECK(r.deviations.size() == 20);
  CHECK(r.pass_fraction >= 0.0);
  CHECK(r.pass_fraction <= 1.0);
}

TEST_CASE("squared bias estimate on a tiny configuration") {
  BiasConfig c;
  c.n_t = 100;
  c.trees = 10;
  c.datasets = 4;
  c.m_test = 30;
  c.outer = 3;
  const BiasEstimate b = estimate_squared_bias(c);
  CHECK(b.outer_ensemble.size() == 3);
  CHECK(b.merged_bound == doctest::Approx(2.0 * b.ensemble_bound));
  CHECK(b.difference == doctest::Approx(b.merged - b.ensemble));
  CHECK(b.ensemble_se >= 0.0);
  const ExperimentResult r = run_bias(c);
  const nlohmann::json s = summary_json(r);
  CHECK(s.at("schema").get<int>() == 1);
  CHECK(s.at("experiment").get<std::string>() == "bias");
}
