#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "jointcar/oracle.hpp"
#include "jointcar/sampler.hpp"

namespace jcar {

/// Closed set of trend functions of the 1-based year index k:
/// sin(a k), cos(a k), constant a, linear a + b k.
struct TrendSpec {
  enum class Kind { Sin, Cos, Constant, Linear };
  Kind kind = Kind::Sin;
  double a = 0.2;
  double b = 0.0;

  double operator()(int k) const;
  /// "sin:0.2", "cos:0.2", "constant:-1", "linear:-2:0.1".
  static TrendSpec parse(const std::string& text);
  std::string to_string() const;
};

struct SimDesign {
  SpatialGraph graph = default_sim_graph();
  int n_years = 10;
  int sample_size = 100;
  std::array<TrendSpec, 2> trends{TrendSpec{TrendSpec::Kind::Sin, 0.2, 0.0},
                                  TrendSpec{TrendSpec::Kind::Cos, 0.2, 0.0}};
  std::array<double, 2> sigma2{1.0, 1.0};
  std::array<double, 2> phi{0.5, 0.5};
  double rho = 0.5;
  MissingStructure structure = MissingStructure::Matching;
  bool random_split = false;  // seeded random half instead of the second half
  std::uint64_t seed = 0;

  void validate() const;
  /// 26 locations on a 2 x 13 queen lattice.
  static SpatialGraph default_sim_graph();
};

struct SimTruth {
  Eigen::MatrixXd s;                // 2 x J
  std::vector<Eigen::MatrixXd> mu;  // per population, J x K
  std::vector<Eigen::MatrixXd> p;
};

/// Locations hidden for each population (all years).
struct MaskPlan {
  std::vector<int> hidden1;
  std::vector<int> hidden2;
};

/// Population 1 is hidden on half of the locations (by default the second
/// half). Matching hides population 2 on the same half; Discrepancy on the
/// other half.
MaskPlan structure_mask(int n_locations, MissingStructure structure, bool random_split,
                        std::uint64_t seed);

struct SimData {
  SurveillancePanel full;
  SurveillancePanel panel;  // full with the structure mask applied
  SimTruth truth;
  std::vector<CellIndex> predicted;  // population 1's hidden cells
};

/// Draws s from the joint CAR prior (cosimulation with lower Cholesky
/// factors), sets mu = v + s and Y ~ Binomial(N, p) everywhere, then masks.
SimData generate(const SimDesign& design);

/// Applies the mask of `structure` to data generated under any structure.
SimData remask(const SimData& data, MissingStructure structure, bool random_split,
               std::uint64_t seed);

struct ExperimentConfig {
  std::vector<double> rho_grid{0.2, 0.5, 0.8};
  std::vector<double> phi_grid{0.3, 0.6};
  int n_reps = 10;
  McmcConfig mcmc = desk_mcmc();
  SimDesign base;
  int workers = 1;
  bool gaussian_latent = false;  // imputation only: exact mu observation, K = 1

  void validate() const;
  static McmcConfig desk_mcmc();
  /// Full grids: rho 0.1..0.9, phi 0.2..0.7, 50 replications, 30000/20000.
  static ExperimentConfig full();
};

struct RhoRecoveryRow {
  double rho = 0.0;
  double phi = 0.0;
  MissingStructure structure = MissingStructure::Matching;
  int rep = 0;
  double rho_hat = 0.0;
  double sq_error = 0.0;
};

struct ImputationRow {
  double rho = 0.0;
  double phi = 0.0;
  int rep = 0;
  CellIndex cell;
  double err_matching = 0.0;     // squared error of the posterior mean
  double err_discrepancy = 0.0;
};

struct ExperimentFailure {
  double rho = 0.0;
  double phi = 0.0;
  int rep = 0;
  std::string message;
};

struct RhoRecoveryResult {
  std::vector<RhoRecoveryRow> rows;
  std::vector<ExperimentFailure> failures;
  /// Mean squared error over replications for one grid cell (NaN if none).
  double mse(double rho, double phi, MissingStructure structure) const;
};

struct ImputationResult {
  std::vector<ImputationRow> rows;
  std::vector<ExperimentFailure> failures;
  /// Per-replication mean over cells of (matching - discrepancy).
  std::vector<double> rep_differences(double rho, double phi) const;
};

/// Both structures are fitted to the same simulated data per replication.
RhoRecoveryResult rho_recovery_experiment(const ExperimentConfig& cfg);

/// rho is pinned to its true value. Errors are against the true p, or the
/// true mu in the Gaussian-latent variant (where beta, sigma2, phi are
/// pinned as well).
ImputationResult imputation_experiment(const ExperimentConfig& cfg);

void write_rho_recovery_csv(std::ostream& out, const RhoRecoveryResult& r);
void write_imputation_csv(std::ostream& out, const ImputationResult& r, const SimDesign& design);

}  // namespace jcar
