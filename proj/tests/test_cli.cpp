#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clens/cli.hpp"
#include "clens/errors.hpp"

using namespace clens;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "clens");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

double value_of(const Run& r) { return nlohmann::json::parse(r.out).at("value").get<double>(); }

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("clens_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const nlohmann::json& j) { std::ofstream(path) << j.dump(); }

}  // namespace

TEST_CASE("theory calculators print a value") {
  const Run r = run({"theory", "ols_ratio", "--gamma", "0.25", "--k", "2"});
  CHECK(r.code == 0);
  CHECK(r.out == "{\"value\": 0.6666666666666666}\n");
  CHECK(value_of(run({"theory", "cf_bound", "--s", "5", "--kn", "1024", "--pn", "0.2", "--learner", "merged"})) ==
        doctest::Approx(0.2460930).epsilon(1e-6));
  CHECK(value_of(run({"theory", "fig1_percent", "--gamma-t", "0.8"})) == doctest::Approx(200.0));
  CHECK(value_of(run({"theory", "kappa", "--p", "10"})) == doctest::Approx((28.0 / 3.0) / 9.5));
  CHECK(value_of(run({"theory", "d2", "--n", "1", "--lt", "0.5,0.5", "--mu", "1,0,0", "--mu", "0,1,0"})) ==
        doctest::Approx(1.0 + 4.0 / 3.0));
}

TEST_CASE("theory domain errors are runtime failures") {
  const Run r = run({"theory", "ols_ratio", "--gamma", "0.6", "--k", "2"});
  CHECK(r.code == 1);
  CHECK(r.out.empty());
  const auto err = nlohmann::json::parse(r.err);
  CHECK(err.at("error").get<std::string>() == "DomainError");
  CHECK(run({"theory", "cf_bound", "--s", "5", "--kn", "1024", "--pn", "0.2"}).code != 0);
}

TEST_CASE("usage errors exit with code 2") {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"bogus"}, {"theory", "not_a_calculator"}, {"reproduce", "table9"}, {"gen", "--nt", "abc"}}) {
    const Run r = run(args);
    CHECK(r.code == 2);
    CHECK(nlohmann::json::parse(r.err).at("error").get<std::string>() == "usage");
  }
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("reproduce") != std::string::npos);
}

TEST_CASE("parse_args fills the configuration") {
  const char* argv[] = {"clens", "reproduce", "fig2", "--seed", "9", "--workers", "2", "--format", "json", "-v"};
  std::ostringstream out, err;
  const ParseResult p = parse_args(10, argv, out, err);
  REQUIRE(p.config.has_value());
  CHECK(p.config->subcommand == "reproduce");
  CHECK(p.config->target == "fig2");
  CHECK(p.config->seed == 9u);
  CHECK(p.config->workers == 2);
  CHECK(p.config->format == "json");
  CHECK(p.config->verbosity == 1);
}

TEST_CASE("gen writes csv to stdout and files to --out") {
  const Run r = run({"gen", "--k", "2", "--nt", "5", "--p", "3", "--seed", "4"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("x1,x2,x3,y,label\n", 0) == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 11);
  CHECK(run({"gen", "--k", "2", "--nt", "5", "--p", "3", "--seed", "4"}).out == r.out);
  const fs::path dir = scratch("gen");
  CHECK(run({"gen", "--family", "uniform", "--nt", "5", "--out", dir.string()}).code == 0);
  CHECK(fs::exists(dir / "dataset.csv"));
  std::ifstream sidecar(dir / "dataset.json");
  const auto meta = nlohmann::json::parse(sidecar);
  CHECK(meta.contains("seed"));
}

TEST_CASE("simulate and reproduce write records and summaries") {
  const fs::path dir = scratch("sim");
  write_file(dir / "rm.json", {{"experiment", "random_matrix"}, {"n", 200}, {"p", 50}, {"draws", 5}});
  CHECK(run({"simulate", (dir / "rm.json").string(), "--out", dir.string()}).code == 0);
  CHECK(fs::exists(dir / "random_matrix_summary.json"));

  write_file(dir / "t1.json", {{"K", 2}, {"n_t", 30}, {"p", 3}, {"S", 3}, {"replicates", 3}, {"m_test", 20}});
  const Run csv = run({"reproduce", "table1", "--config", (dir / "t1.json").string()});
  CHECK(csv.code == 0);
  CHECK(csv.out.rfind("experiment,family,grid_value,replicate,scheme,metric,value\n", 0) == 0);
  const Run js = run({"reproduce", "table1", "--config", (dir / "t1.json").string(), "--format", "json"});
  CHECK(nlohmann::json::parse(js.out).at("experiment").get<std::string>() == "table1");
  CHECK(run({"reproduce", "table1", "--config", (dir / "t1.json").string(), "--out", dir.string()}).code == 0);
  CHECK(fs::exists(dir / "table1_records.csv"));
  CHECK(fs::exists(dir / "table1_weights.csv"));
  // --seed overrides the file and changes the records.
  CHECK(run({"reproduce", "table1", "--config", (dir / "t1.json").string(), "--seed", "3"}).out != csv.out);

  write_file(dir / "bad.json", {{"experiment", "table1"}, {"schema", 5}});
  const Run bad = run({"simulate", (dir / "bad.json").string()});
  CHECK(bad.code == 1);
  CHECK(nlohmann::json::parse(bad.err).at("error").get<std::string>() == "InvalidSpec");
  CHECK(run({"simulate", (dir / "missing.json").string()}).code != 0);
}

TEST_CASE("evaluate_theory directly") {
  TheoryArgs a;
  a.calculator = "dyadic_moment";
  a.scalars = {{"pn", 0.2}, {"d", 10}};
  CHECK(evaluate_theory(a) == doctest::Approx(std::pow(0.85, 10)));
  a.scalars.erase("d");
  CHECK_THROWS(evaluate_theory(a));
}
