#pragma once

#include <string>

#include "jointcar/sampler.hpp"

namespace jcar {

/// Writes `archive` into directory `dir` (created if absent): meta.json plus
/// beta.csv, sigma2.csv, phi.csv, rho.csv, s.csv and mu_missing.csv. Each CSV
/// row is (chain, iteration, values...) with 17 significant digits.
/// `run_config_json`, when non-empty, must be a JSON object and is stored
/// under the "run" key of meta.json.
void save_archive(const std::string& dir, const PosteriorArchive& archive,
                  const std::string& run_config_json = "");

PosteriorArchive load_archive(const std::string& dir);

/// The "run" object of dir/meta.json serialized as JSON text ("" if absent).
std::string load_run_config(const std::string& dir);

/// Column headers of each block file, without the chain/iteration prefix.
std::vector<std::string> beta_columns(const PosteriorArchive& a);
std::vector<std::string> sigma2_columns(const PosteriorArchive& a);
std::vector<std::string> phi_columns(const PosteriorArchive& a);
std::vector<std::string> rho_columns(const PosteriorArchive& a);
std::vector<std::string> s_columns(const PosteriorArchive& a);
std::vector<std::string> mu_columns(const PosteriorArchive& a);

}  // namespace jcar
