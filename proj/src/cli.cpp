#include "clens/cli.hpp"

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "clens/datagen.hpp"
#include "clens/errors.hpp"
#include "clens/harness.hpp"
#include "clens/rng.hpp"
#include "clens/theory.hpp"

namespace clens {

namespace {

using nlohmann::json;

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void report(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    const char* first = item.data();
    while (first != item.data() + item.size() && *first == ' ') ++first;
    const auto res = std::from_chars(first, item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size())
      throw InvalidSpec("not a number list: '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidSpec("empty number list");
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidSpec("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidSpec("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// theory

const std::vector<std::string> kCalculators = {
    "ols_ratio", "mp_trace", "scl_qform", "ensemble_qform", "fig1_percent", "d1", "d2", "s1", "s2_printed",
    "s2_exact", "s2_unit_display", "kappa", "cf_rate", "cf_bound", "cf_bound_general", "dyadic_moment"};
const std::vector<std::string> kScalarFlags = {"gamma", "gamma-t", "k", "lambda", "s", "kn", "pn",
                                               "p", "n", "lt1", "mm1", "mm2", "omega", "d"};
const std::vector<std::string> kListFlags = {"lambdas", "sizes", "norms", "lt", "mu1", "mu2"};

double need(const TheoryArgs& a, const std::string& name) {
  const auto it = a.scalars.find(name);
  if (it == a.scalars.end()) throw InvalidSpec("calculator '" + a.calculator + "' needs --" + name);
  return it->second;
}

const std::vector<double>& need_list(const TheoryArgs& a, const std::string& name) {
  const auto it = a.lists.find(name);
  if (it == a.lists.end()) throw InvalidSpec("calculator '" + a.calculator + "' needs --" + name);
  return it->second;
}

std::size_t need_count(const TheoryArgs& a, const std::string& name) {
  const double v = need(a, name);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15)
    throw InvalidSpec("--" + name + " must be a nonnegative integer");
  return static_cast<std::size_t>(v);
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

theory::Learner need_learner(const TheoryArgs& a) {
  if (!a.learner) throw InvalidSpec("calculator '" + a.calculator + "' needs --learner");
  return theory::learner_from_string(*a.learner);
}

// ---------------------------------------------------------------------------
// experiments

ExperimentResult run_experiment(const std::string& name, json config, const CliConfig& cli) {
  if (cli.seed) config["seed"] = *cli.seed;
  config["workers"] = cli.workers;
  if (name == "table1") return run_table1(table1_config_from_json(config));
  if (name == "fig1") return run_fig1(fig1_config_from_json(config));
  if (name == "fig2") return run_fig2(fig2_config_from_json(config));
  if (name == "bias") return run_bias(bias_config_from_json(config));
  if (name == "variance") return run_variance(variance_config_from_json(config));
  if (name == "random_matrix") {
    const RandomMatrixConfig c = random_matrix_config_from_json(config);
    const RandomMatrixResult r = random_matrix_check(c);
    ExperimentResult out;
    out.experiment = "random_matrix";
    out.config = to_json(c);
    for (std::size_t i = 0; i < r.deviations.size(); ++i)
      out.records.push_back(Record{"random_matrix", "gaussian", static_cast<double>(c.p), i, "qform", "deviation", r.deviations[i]});
    out.aggregates = aggregate(out.records);
    out.summary = {{"scaled_trace", r.scaled_trace}, {"trace_target", r.trace_target}, {"pass_fraction", r.pass_fraction}};
    return out;
  }
  throw InvalidSpec("unknown experiment '" + name + "'");
}

json default_config(const std::string& name) {
  if (name == "table1") return to_json(Table1Config{});
  if (name == "fig1") return to_json(Fig1Config{});
  if (name == "fig2") return to_json(Fig2Config{});
  if (name == "bias") return to_json(BiasConfig{});
  if (name == "variance") return to_json(VarianceConfig{});
  if (name == "random_matrix") return to_json(RandomMatrixConfig{});
  throw InvalidSpec("unknown experiment '" + name + "'");
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidSpec("cannot write '" + path.string() + "'");
  f << content;
}

void emit(const ExperimentResult& result, const CliConfig& cli, std::ostream& out) {
  std::ostringstream records;
  if (cli.format == "json") {
    json rows = json::array();
    for (const Record& r : result.records)
      rows.push_back({{"experiment", r.experiment}, {"family", r.family}, {"grid_value", r.grid_value},
                      {"replicate", r.replicate}, {"scheme", r.scheme}, {"metric", r.metric}, {"value", r.value}});
    records << rows.dump(1) << '\n';
  } else {
    write_records_csv(result.records, records);
  }
  const std::string summary = summary_json(result).dump(2) + "\n";
  if (cli.out_dir.empty()) {
    out << (cli.format == "json" ? summary : records.str());
    return;
  }
  const std::filesystem::path dir(cli.out_dir);
  std::filesystem::create_directories(dir);
  const std::string stem = result.experiment;
  write_file(dir / (stem + (cli.format == "json" ? "_records.json" : "_records.csv")), records.str());
  write_file(dir / (stem + "_summary.json"), summary);
  if (!result.weight_rows.empty()) {
    std::ostringstream w;
    write_weights_csv(result.weight_rows, w);
    write_file(dir / (stem + "_weights.csv"), w.str());
  }
}

int run_gen(const CliConfig& cli, std::ostream& out) {
  const std::uint64_t seed = cli.seed.value_or(1);
  std::vector<ClusterSpec> clusters;
  OutcomeSpec outcome;
  if (!cli.config_path.empty()) {
    const json j = read_json_file(cli.config_path);
    try {
      for (const auto& c : j.at("clusters")) clusters.push_back(cluster_spec_from_json(c));
      outcome = outcome_spec_from_json(j.at("outcome"));
    } catch (const json::exception& e) {
      throw InvalidSpec(std::string("bad dataset spec: ") + e.what());
    }
  } else {
    const GenArgs& g = cli.gen;
    const Family family = family_from_string(g.family);
    for (const Vector& mu : gen_means_on_sphere(g.K, g.p, g.radius, derive_seed(seed, 1))) {
      switch (family) {
        case Family::gaussian: clusters.push_back(ClusterSpec::gaussian(g.n_t, mu)); break;
        case Family::laplace: clusters.push_back(ClusterSpec::laplace(g.n_t, mu)); break;
        case Family::uniform: clusters.push_back(ClusterSpec::uniform(g.n_t, mu, g.width)); break;
      }
    }
    outcome = gen_beta(g.p, g.S.value_or(g.p), derive_seed(seed, 2));
    outcome.noise_sd = g.sigma;
  }
  const Dataset data = gen_dataset(clusters, outcome, derive_seed(seed, 3));
  if (cli.out_dir.empty()) {
    if (cli.format == "json") out << sidecar_json(data).dump(2) << '\n';
    else write_csv(data, out);
    return 0;
  }
  const std::filesystem::path dir(cli.out_dir);
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  write_csv(data, csv);
  write_file(dir / "dataset.csv", csv.str());
  write_file(dir / "dataset.json", sidecar_json(data).dump(2) + "\n");
  return 0;
}

}  // namespace

double evaluate_theory(const TheoryArgs& a) {
  const std::string& c = a.calculator;
  if (c == "ols_ratio") return theory::ols_highdim_ratio(need(a, "gamma"), static_cast<int>(need_count(a, "k")));
  if (c == "mp_trace") return theory::mp_trace_inverse_limit(need(a, "gamma"));
  if (c == "scl_qform") return theory::scl_qform_limit(need(a, "lambda"), need(a, "gamma"));
  if (c == "ensemble_qform") return theory::ensemble_qform_limit(need_list(a, "lambdas"), need(a, "gamma"));
  if (c == "fig1_percent") return theory::fig1_theory_percent_change(need(a, "gamma-t"));
  if (c == "d1") return theory::ensemble_variance_limit_d1(need_count(a, "p"), need_list(a, "sizes"), need_list(a, "norms"));
  if (c == "d2") {
    std::vector<Vector> means;
    for (const auto& m : a.means) means.push_back(to_vector(m));
    if (means.empty()) throw InvalidSpec("calculator 'd2' needs at least one --mu");
    return theory::merged_variance_limit_d2(need(a, "n"), need_list(a, "lt"), means);
  }
  if (c == "s1") return theory::ensemble_limit_s1(need_count(a, "p"), need(a, "lt1"), need(a, "mm1"), need(a, "mm2"));
  if (c == "s2_printed" || c == "s2_exact") {
    const Vector mu1 = to_vector(need_list(a, "mu1"));
    const Vector mu2 = to_vector(need_list(a, "mu2"));
    const std::size_t p = need_count(a, "p");
    return c == "s2_printed" ? theory::merged_limit_s2_as_printed(p, need(a, "lt1"), mu1, mu2)
                             : theory::merged_limit_s2_exact(p, need(a, "lt1"), mu1, mu2);
  }
  if (c == "s2_unit_display") return theory::merged_limit_unit_norm_display(need_count(a, "p"), need(a, "lt1"));
  if (c == "kappa") return theory::kappa_orthogonal_unit(need_count(a, "p"));
  if (c == "cf_rate") return theory::cf_rate(need(a, "kn"), need(a, "pn"));
  if (c == "cf_bound") return theory::cf_bound(need(a, "s"), need(a, "kn"), need(a, "pn"), need_learner(a));
  if (c == "cf_bound_general")
    return theory::cf_bound_general(need_count(a, "k"), need(a, "omega"), need(a, "s"), need(a, "kn"),
                                    need(a, "pn"), need_learner(a));
  if (c == "dyadic_moment") return theory::dyadic_second_moment(need(a, "pn"), static_cast<int>(need_count(a, "d")));
  throw InvalidSpec("unknown calculator '" + c + "'");
}

ParseResult parse_args(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Merging versus cluster-wise ensembling for least squares and centered forests", "clens"};
  app.require_subcommand(1, 1);

  CliConfig cfg;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Master seed (64-bit)");
    sub->add_option("--out", cfg.out_dir, "Output directory (default: stdout)");
    sub->add_option("--workers", cfg.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--format", cfg.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_flag("-v,--verbose", cfg.verbosity, "Report runtime on stderr");
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate a clustered dataset");
  add_common(gen);
  gen->add_option("--config", cfg.config_path, "Dataset spec JSON with 'clusters' and 'outcome'");
  gen->add_option("--k", cfg.gen.K, "Number of clusters")->check(CLI::PositiveNumber);
  gen->add_option("--nt", cfg.gen.n_t, "Rows per cluster")->check(CLI::PositiveNumber);
  gen->add_option("--p", cfg.gen.p, "Dimension")->check(CLI::PositiveNumber);
  std::size_t S = 0;
  gen->add_option("--s", S, "Support size (default p)");
  gen->add_option("--family", cfg.gen.family, "Covariate family")->check(CLI::IsMember({"gaussian", "uniform", "laplace"}));
  gen->add_option("--radius", cfg.gen.radius, "Norm of the cluster locations");
  gen->add_option("--width", cfg.gen.width, "Uniform cluster width");
  gen->add_option("--sigma", cfg.gen.sigma, "Noise standard deviation");

  CLI::App* th = app.add_subcommand("theory", "Evaluate a closed-form limit or bound");
  add_common(th);
  th->add_option("calculator", cfg.theory.calculator, "Calculator name")
      ->required()
      ->check(CLI::IsMember(kCalculators));
  std::map<std::string, double> scalars;
  std::map<std::string, std::string> lists;
  for (const auto& name : kScalarFlags) th->add_option("--" + name, scalars[name]);
  for (const auto& name : kListFlags) th->add_option("--" + name, lists[name], "Comma-separated numbers");
  std::vector<std::string> mus;
  std::string learner;
  th->add_option("--mu", mus, "Cluster mean as comma-separated numbers (repeatable)");
  th->add_option("--learner", learner)->check(CLI::IsMember({"ensemble", "merged"}));

  CLI::App* sim = app.add_subcommand("simulate", "Run an experiment from a JSON config");
  add_common(sim);
  sim->add_option("config", cfg.config_path, "Config JSON (\"schema\": 1, \"experiment\": ...)")->required();

  CLI::App* rep = app.add_subcommand("reproduce", "Run an experiment with its built-in defaults");
  add_common(rep);
  rep->add_option("experiment", cfg.target, "Experiment")
      ->required()
      ->check(CLI::IsMember({"table1", "fig1", "fig2", "bias", "variance", "random_matrix"}));
  rep->add_option("--config", cfg.config_path, "JSON object whose keys override the defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    // --help and --version: CLI11 picks the right subcommand text.
    return {std::nullopt, app.exit(e, out, err)};
  } catch (const CLI::ParseError& e) {
    err << json{{"error", "usage"}, {"message", e.what()}, {"usage", app.help()}}.dump() << '\n';
    return {std::nullopt, 2};
  }

  CLI::App* chosen = app.get_subcommands().front();
  cfg.subcommand = chosen->get_name();
  if (chosen->count("--seed") > 0) cfg.seed = seed;
  if (chosen == gen && gen->count("--s") > 0) cfg.gen.S = S;
  if (chosen == th) {
    try {
      for (const auto& name : kScalarFlags)
        if (th->count("--" + name) > 0) cfg.theory.scalars[name] = scalars[name];
      for (const auto& name : kListFlags)
        if (th->count("--" + name) > 0) cfg.theory.lists[name] = parse_list(lists[name]);
      for (const auto& m : mus) cfg.theory.means.push_back(parse_list(m));
    } catch (const Error& e) {
      err << json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
      return {std::nullopt, 2};
    }
    if (th->count("--learner") > 0) cfg.theory.learner = learner;
  }
  return {cfg, 0};
}

int dispatch(const CliConfig& cli, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  try {
    if (cli.subcommand == "theory") {
      const double value = evaluate_theory(cli.theory);
      out << "{\"value\": " << shortest(value) << "}\n";
    } else if (cli.subcommand == "gen") {
      run_gen(cli, out);
    } else if (cli.subcommand == "simulate") {
      const json config = read_json_file(cli.config_path);
      if (!config.is_object() || !config.contains("experiment"))
        throw InvalidSpec("config needs an \"experiment\" field");
      emit(run_experiment(config.at("experiment").get<std::string>(), config, cli), cli, out);
    } else if (cli.subcommand == "reproduce") {
      json config = default_config(cli.target);
      if (!cli.config_path.empty()) {
        const json overrides = read_json_file(cli.config_path);
        if (!overrides.is_object()) throw InvalidSpec("override file must hold a JSON object");
        config.merge_patch(overrides);
      }
      emit(run_experiment(cli.target, config, cli), cli, out);
    } else {
      throw InvalidSpec("unknown subcommand '" + cli.subcommand + "'");
    }
  } catch (const Error& e) {
    report(err, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report(err, "RuntimeError", e.what());
    return 1;
  }
  if (cli.verbosity > 0) {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    err << json{{"subcommand", cli.subcommand}, {"seconds", elapsed.count()}}.dump() << '\n';
  }
  return 0;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const ParseResult parsed = parse_args(argc, argv, out, err);
  if (!parsed.config) return parsed.exit_code;
  return dispatch(*parsed.config, out, err);
}

}  // namespace clens
