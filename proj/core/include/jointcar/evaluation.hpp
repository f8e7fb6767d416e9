#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "jointcar/sampler.hpp"

namespace jcar {

/// y / n.
double naive_estimator(int y, int n);

/// logit((y + 0.5) / (n + 1)); for initialization and plots, never scoring.
double empirical_logit(int y, int n);

/// Observed cells of a source panel that are re-masked for evaluation.
struct HoldoutSpec {
  std::vector<CellIndex> held_cells;

  /// Non-empty, no duplicates, every cell observed in `source`.
  void validate(const SurveillancePanel& source) const;
};

struct CellScore {
  CellIndex cell;
  int y = 0;
  int n = 0;
  double p_hat = 0.0;
  double p_mean = 0.0;
  double sq_error = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool covered = false;
};

struct ScoreReport {
  std::vector<CellScore> cells;
  double mse = 0.0;
  double coverage = 0.0;
  int weight = 0;  // number of held cells
};

/// Scores an archive fitted on `source` with `spec` masked. Intervals use
/// the held cell's own sample size; endpoints are inclusive.
ScoreReport score_holdout(const PosteriorArchive& archive, const SurveillancePanel& source,
                          const HoldoutSpec& spec, std::uint64_t seed);

struct Fold {
  int population = 0;
  int location = 0;
  HoldoutSpec spec;
};

/// One fold per (population, location) with at least one observation.
std::vector<Fold> lolo_folds(const SurveillancePanel& panel);

struct FoldResult {
  ModelKind kind = ModelKind::JointCar;
  Fold fold;
  ScoreReport report;
};

struct CvSummaryRow {
  std::string index;  // MSE | Coverage
  std::string population;
  ModelKind kind = ModelKind::JointCar;
  double mean = 0.0;  // weighted by held-cell counts
  double sd = 0.0;    // sample SD of per-fold values
  int n_folds = 0;
};

struct CvResult {
  std::vector<FoldResult> folds;
  std::vector<CvSummaryRow> summary;
  Warnings warnings;
};

/// Reduced MCMC settings for cross-validation at desk scale.
McmcConfig fast_cv_config(const McmcConfig& base);

/// Leave-one-location-out cross-validation. Each (fold, kind) job gets its
/// own seed derived from cfg.seed; jobs run on up to `workers` threads.
CvResult leave_one_location_out(const SurveillancePanel& panel, const SpatialGraph& graph,
                                const std::vector<ModelKind>& kinds, const Priors& priors,
                                const McmcConfig& cfg, int workers = 1,
                                Warnings* warnings = nullptr);

/// Weighted mean and unweighted sample SD of per-fold values.
std::pair<double, double> weighted_mean_sd(const std::vector<double>& values,
                                           const std::vector<double>& weights);

void write_per_cell_csv(std::ostream& out, const CvResult& result, const SurveillancePanel& panel);
void write_aggregate_csv(std::ostream& out, const CvResult& result);

}  // namespace jcar
