#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jointcar/error.hpp"
#include "jointcar/model.hpp"
#include "jointcar/spatial_graph.hpp"

namespace jcar {

/// beta ~ N(0, beta_variance); 1/sigma2 ~ Gamma(shape, rate);
/// phi ~ U(phi_lower, phi_upper); rho ~ U(rho_lower, rho_upper), further
/// restricted to correlation matrices that are positive definite.
struct Priors {
  double beta_variance = 100.0;
  double sigma2_shape = 0.1;
  double sigma2_rate = 0.1;
  double phi_lower = 0.0;
  double phi_upper = 1.0;
  double rho_lower = -1.0;
  double rho_upper = 1.0;

  void validate() const;
};

struct McmcConfig {
  int n_iterations = 30000;
  int burn_in = 20000;
  int thin = 1;
  int n_chains = 2;
  std::uint64_t seed = 0;
  std::optional<int> adapt_until;  // defaults to burn_in
  int workers = 0;                 // 0 = hardware concurrency

  void validate() const;
  int draws_per_chain() const { return (n_iterations - burn_in) / thin; }
  int adaptation_end() const { return adapt_until.value_or(burn_in); }
};

/// Parameter blocks held fixed during sampling. Shapes: beta I x 4,
/// sigma2 and phi length I, rho an I x I correlation matrix.
struct ParameterPins {
  std::optional<Eigen::MatrixXd> beta;
  std::optional<Eigen::VectorXd> sigma2;
  std::optional<Eigen::VectorXd> phi;
  std::optional<Eigen::MatrixXd> rho;
};

/// Binomial is the model proper. ExactLatent is a test hook: at observed
/// cells mu is observed without noise (values from FitOptions::exact_mu),
/// which turns imputation into Gaussian conditioning. It requires beta pinned.
enum class ObservationModel { Binomial, ExactLatent };

struct FitOptions {
  ParameterPins pins;
  ObservationModel observation = ObservationModel::Binomial;
  std::vector<Eigen::MatrixXd> exact_mu;  // per population, J x K
  bool allow_empty_panel = false;         // test hook for prior recovery
  Warnings* warnings = nullptr;
};

/// One joint parameter value, as stored per retained draw.
struct DrawState {
  Eigen::MatrixXd beta;    // I x 4
  Eigen::MatrixXd s;       // I x J
  Eigen::VectorXd sigma2;  // I
  Eigen::VectorXd phi;     // I (unused for Mixed)
  Eigen::MatrixXd rho;     // I x I correlation (identity unless JointCar)
};

/// Retained MCMC draws. Row r of every block matrix is one draw; rows are
/// chain-major. Column layouts: beta (i*4 + p), sigma2/phi (i), rho over
/// pairs (a<b) in row-major order, s (i*J + j), mu_missing follows
/// missing_cells.
struct PosteriorArchive {
  ModelKind kind = ModelKind::JointCar;
  Priors priors;
  McmcConfig config;
  std::vector<std::string> population_labels;
  std::vector<std::string> location_labels;
  int first_year = 0;
  int n_years = 0;
  std::vector<CellIndex> missing_cells;
  std::vector<std::string> pinned_blocks;

  int n_chains = 0;
  int draws_per_chain = 0;
  std::vector<int> chain;
  std::vector<int> iteration;
  Eigen::MatrixXd beta;
  Eigen::MatrixXd sigma2;
  Eigen::MatrixXd phi;
  Eigen::MatrixXd rho;
  Eigen::MatrixXd s;
  Eigen::MatrixXd mu_missing;

  /// block -> acceptance rate per chain over post-adaptation iterations.
  std::map<std::string, std::vector<double>> acceptance;
  std::vector<std::uint64_t> step_checksum_at_freeze;
  std::vector<std::uint64_t> step_checksum_final;
  Warnings warnings;

  int n_populations() const { return static_cast<int>(population_labels.size()); }
  int n_locations() const { return static_cast<int>(location_labels.size()); }
  int n_draws() const { return static_cast<int>(chain.size()); }
  std::vector<std::pair<int, int>> rho_pairs() const;
  /// Column of `cell` in mu_missing, or -1 if the cell was observed.
  int missing_column(const CellIndex& cell) const;
  DrawState draw(int row) const;
  /// Values of one column for one chain.
  std::vector<double> chain_values(const Eigen::MatrixXd& block, int column, int chain_id) const;
};

PosteriorArchive fit(const SurveillancePanel& panel, const SpatialGraph& graph, ModelKind kind,
                     const Priors& priors, const McmcConfig& config,
                     const FitOptions& options = {});

/// Unnormalized log posterior (binomial likelihood with its constant, the
/// random-effect prior and the parameter priors) of one draw.
double log_posterior_density(const SurveillancePanel& panel, const SpatialGraph& graph,
                             ModelKind kind, const Priors& priors, const DrawState& draw);

struct PredictiveSummary {
  double p_mean = 0.0;
  std::vector<double> p_draws;
  std::vector<double> p_tilde;  // Y~/n_holdout per draw
  double lower = 0.0;           // 0.5% quantile of p_tilde
  double upper = 0.0;           // 99.5% quantile of p_tilde
};

/// Posterior predictive prevalence at a cell that was masked during fitting.
PredictiveSummary posterior_predictive_p(const PosteriorArchive& archive, const CellIndex& cell,
                                         int n_holdout, std::uint64_t seed);

/// Linear-interpolation sample quantile (R type 7).
double empirical_quantile(std::vector<double> values, double prob);

}  // namespace jcar
