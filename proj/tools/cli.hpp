#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace jcar::cli {

struct McmcArgs {
  int iters = 30000;
  int burnin = 20000;
  int thin = 1;
  int chains = 2;
  std::optional<std::uint64_t> seed;
  std::optional<int> adapt_until;
  int workers = 0;

  bool operator==(const McmcArgs&) const = default;
};

struct PriorArgs {
  double beta_variance = 100.0;
  double sigma2_shape = 0.1;
  double sigma2_rate = 0.1;

  bool operator==(const PriorArgs&) const = default;
};

struct FitArgs {
  std::string panel;
  std::string graph;
  std::string model = "jointcar";
  std::string out = "fit_out";
  McmcArgs mcmc;
  PriorArgs priors;

  bool operator==(const FitArgs&) const = default;
};

struct ImputeArgs {
  std::string archive;
  std::string panel;
  std::string cells = "all-missing";  // or a CSV of population,location,year
  std::string out;
  std::optional<int> n_holdout;
  std::optional<std::uint64_t> seed;

  bool operator==(const ImputeArgs&) const = default;
};

struct CvArgs {
  std::string panel;
  std::string graph;
  std::vector<std::string> models{"mixed", "car", "jointcar"};
  bool fast_cv = false;
  std::string out = "cv_out";
  McmcArgs mcmc;
  PriorArgs priors;

  bool operator==(const CvArgs&) const = default;
};

struct SimulateArgs {
  std::string experiment = "rho-recovery";  // rho-recovery | imputation | data
  bool full = false;
  int reps = 10;
  std::string rho_grid = "0.2,0.5,0.8";
  std::string phi_grid = "0.3,0.6";
  std::string graph;  // empty: 2 x 13 queen lattice
  int years = 10;
  int sample_size = 100;
  std::string trend1 = "sin:0.2";
  std::string trend2 = "cos:0.2";
  double sigma2 = 1.0;
  double rho = 0.5;  // data mode
  double phi = 0.5;  // data mode
  std::string structure = "matching";  // data mode
  bool gaussian_latent = false;
  bool random_split = false;
  std::string out = "sim_out";
  McmcArgs mcmc{6000, 3000, 1, 1, std::nullopt, std::nullopt, 0};

  bool operator==(const SimulateArgs&) const = default;
};

struct OracleArgs {
  std::string curve = "variance";  // variance | fisher-matching | fisher-discrepancy
  double r = 0.5;
  std::string g_range = "1..40";
  std::string rho_grid = "-1:1:0.05";
  std::string out = "oracle_out";

  bool operator==(const OracleArgs&) const = default;
};

/// One command with its fully resolved arguments; echoed into meta.json.
struct RunConfig {
  std::string command;
  FitArgs fit;
  ImputeArgs impute;
  CvArgs cv;
  SimulateArgs simulate;
  OracleArgs oracle;

  bool operator==(const RunConfig&) const = default;
};

/// Only the active command's arguments are serialized.
nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// "a:b:step" (inclusive, values a + i*step) or a comma-separated list.
std::vector<double> parse_grid(const std::string& text);
/// "lo..hi" inclusive, or a single integer.
std::pair<int, int> parse_range(const std::string& text);

/// Runs the tool with argv-style arguments (without the program name).
/// Returns 0 on success, 2 for input errors, 3 for numerical failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Executes a resolved configuration (used by `run` and `rerun`).
int execute(RunConfig config, std::ostream& out, std::ostream& err);

}  // namespace jcar::cli
