#pragma once

#include <string>
#include <vector>

#include "jointcar/sampler.hpp"

namespace jcar {

using Chains = std::vector<std::vector<double>>;

inline constexpr int kMinDiagnosticDraws = 50;

/// Rank-normalized split R-hat: the larger of the bulk and folded values.
/// NaN when any split chain has zero variance.
double split_rhat(const Chains& chains);

/// ESS of the raw draws over split chains (Geyer initial monotone sequence).
/// NaN for constant chains.
double effective_sample_size(const Chains& chains);

/// ESS of the rank-normalized draws.
double bulk_ess(const Chains& chains);

/// Monte Carlo standard error of the mean: sd / sqrt(ESS).
double mcse_mean(const Chains& chains);

struct ParameterDiagnostics {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double rhat = 0.0;
  double ess_bulk = 0.0;
  double ess = 0.0;
  double mcse = 0.0;
  bool degenerate = false;  // zero variance: R-hat and ESS undefined
};

/// Per-scalar diagnostics for beta, sigma2, phi and rho (and s when asked).
/// Throws InputError with fewer than kMinDiagnosticDraws draws per chain.
std::vector<ParameterDiagnostics> diagnose(const PosteriorArchive& archive, bool include_s = false);

/// Splits one archive column into per-chain vectors.
Chains column_chains(const PosteriorArchive& archive, const Eigen::MatrixXd& block, int column);

}  // namespace jcar
