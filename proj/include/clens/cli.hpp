#pragma once

// Command-line front end:
//   clens gen [--config spec.json] [--k --nt --p --s --family --radius --width --sigma]
//   clens theory <calculator> [--gamma --k --s --kn --pn --learner ...]
//   clens simulate <config.json>
//   clens reproduce {table1|fig1|fig2|bias|variance|random_matrix} [--config overrides.json]
// Common flags: --seed, --out, --workers, --format {csv,json}, -v.
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
// single JSON object on stderr.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace clens {

struct TheoryArgs {
  std::string calculator;
  std::map<std::string, double> scalars;              ///< keyed by flag name without dashes
  std::map<std::string, std::vector<double>> lists;   ///< comma-separated flags
  std::vector<std::vector<double>> means;             ///< repeated --mu
  std::optional<std::string> learner;
};

struct GenArgs {
  std::size_t K = 2;
  std::size_t n_t = 200;
  std::size_t p = 5;
  std::optional<std::size_t> S;
  std::string family = "gaussian";
  double radius = 1.0;
  double width = 0.5;
  double sigma = 1.0;
};

struct CliConfig {
  std::string subcommand;   ///< gen | theory | simulate | reproduce
  std::string target;       ///< experiment name for reproduce
  std::string config_path;  ///< simulate config, reproduce overrides or gen spec
  std::optional<std::uint64_t> seed;
  std::string out_dir;      ///< empty: write to stdout
  std::size_t workers = 1;
  std::string format = "csv";
  int verbosity = 0;
  TheoryArgs theory;
  GenArgs gen;
};

struct ParseResult {
  std::optional<CliConfig> config;  ///< empty when parsing ended early
  int exit_code = 0;                ///< meaningful only when config is empty
};

/// Parses argv. Help requests print to `out` and return exit code 0; usage
/// errors print a JSON diagnostic to `err` and return exit code 2.
ParseResult parse_args(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Runs the configured command. Returns 0 on success, 1 on runtime failure.
int dispatch(const CliConfig& config, std::ostream& out, std::ostream& err);

/// parse_args followed by dispatch.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Value of a theory calculator; throws DomainError/InvalidSpec on bad input.
double evaluate_theory(const TheoryArgs& args);

}  // namespace clens
