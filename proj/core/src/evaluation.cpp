#include "jointcar/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <set>
#include <thread>

#include "jointcar/csv.hpp"
#include "jointcar/seeding.hpp"

namespace jcar {

double naive_estimator(int y, int n) {
  if (n < 1 || y < 0 || y > n) throw InputError("naive_estimator: need 0 <= y <= n, n >= 1");
  return static_cast<double>(y) / static_cast<double>(n);
}

double empirical_logit(int y, int n) {
  if (n < 1 || y < 0 || y > n) throw InputError("empirical_logit: need 0 <= y <= n, n >= 1");
  return std::log((y + 0.5) / (n - y + 0.5));
}

void HoldoutSpec::validate(const SurveillancePanel& source) const {
  if (held_cells.empty()) throw InputError("holdout set is empty");
  std::set<CellIndex> seen;
  for (const auto& c : held_cells) {
    if (!seen.insert(c).second) throw InputError("holdout set lists a cell twice");
    if (c.population < 0 || c.population >= source.n_populations() || c.location < 0 ||
        c.location >= source.n_locations() || c.year < 0 || c.year >= source.n_years()) {
      throw InputError("holdout cell outside the panel");
    }
    if (!source.observed(c)) throw InputError("holdout cell is not observed in the source panel");
  }
}

ScoreReport score_holdout(const PosteriorArchive& archive, const SurveillancePanel& source,
                          const HoldoutSpec& spec, std::uint64_t seed) {
  spec.validate(source);
  if (archive.population_labels != source.population_labels() ||
      archive.location_labels != source.location_labels() || archive.n_years != source.n_years()) {
    throw InputError("archive and panel describe different populations, locations or years");
  }
  ScoreReport report;
  double sq_sum = 0.0;
  int covered = 0;
  std::uint64_t k = 0;
  for (const auto& cell : spec.held_cells) {
    if (archive.missing_column(cell) < 0) {
      throw InputError("held cell was observed when the archive was fitted");
    }
    CellScore s;
    s.cell = cell;
    s.y = source.y(cell.population, cell.location, cell.year);
    s.n = source.n(cell.population, cell.location, cell.year);
    s.p_hat = naive_estimator(s.y, s.n);
    const PredictiveSummary pred = posterior_predictive_p(archive, cell, s.n, derive_seed(seed, {k++}));
    s.p_mean = pred.p_mean;
    s.sq_error = (s.p_mean - s.p_hat) * (s.p_mean - s.p_hat);
    s.lower = pred.lower;
    s.upper = pred.upper;
    s.covered = s.p_hat >= s.lower && s.p_hat <= s.upper;
    sq_sum += s.sq_error;
    covered += s.covered ? 1 : 0;
    report.cells.push_back(s);
  }
  report.weight = static_cast<int>(report.cells.size());
  report.mse = sq_sum / report.weight;
  report.coverage = static_cast<double>(covered) / report.weight;
  return report;
}

std::vector<Fold> lolo_folds(const SurveillancePanel& panel) {
  std::vector<Fold> folds;
  for (int i = 0; i < panel.n_populations(); ++i) {
    for (int j = 0; j < panel.n_locations(); ++j) {
      Fold f;
      f.population = i;
      f.location = j;
      for (int k = 0; k < panel.n_years(); ++k) {
        if (panel.observed(i, j, k)) f.spec.held_cells.push_back({i, j, k});
      }
      if (!f.spec.held_cells.empty()) folds.push_back(std::move(f));
    }
  }
  return folds;
}

McmcConfig fast_cv_config(const McmcConfig& base) {
  McmcConfig c = base;
  c.n_iterations = 6000;
  c.burn_in = 3000;
  c.adapt_until.reset();
  return c;
}

std::pair<double, double> weighted_mean_sd(const std::vector<double>& values,
                                           const std::vector<double>& weights) {
  if (values.empty() || values.size() != weights.size()) {
    throw InputError("weighted_mean_sd: need matching non-empty vectors");
  }
  double wsum = 0.0, wx = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    wsum += weights[k];
    wx += weights[k] * values[k];
    sum += values[k];
  }
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1))
                                      : std::numeric_limits<double>::quiet_NaN();
  return {wx / wsum, sd};
}

CvResult leave_one_location_out(const SurveillancePanel& panel, const SpatialGraph& graph,
                                const std::vector<ModelKind>& kinds, const Priors& priors,
                                const McmcConfig& cfg, int workers, Warnings* warnings) {
  if (kinds.empty()) throw InputError("cross-validation needs at least one model kind");
  for (int i = 0; i < panel.n_populations(); ++i) {
    int with_data = 0;
    for (int j = 0; j < panel.n_locations(); ++j) {
      for (int k = 0; k < panel.n_years(); ++k) {
        if (panel.observed(i, j, k)) {
          ++with_data;
          break;
        }
      }
    }
    if (with_data < 2) {
      throw InputError("population " + panel.population_labels()[i] +
                       " needs observations at two or more locations for cross-validation");
    }
  }

  CvResult result;
  std::vector<Fold> folds;
  for (auto& f : lolo_folds(panel)) {
    const SurveillancePanel masked = panel.with_masked(f.spec.held_cells);
    bool ok = true;
    for (int i = 0; i < masked.n_populations() && ok; ++i) {
      bool any = false;
      for (int j = 0; j < masked.n_locations() && !any; ++j)
        for (int k = 0; k < masked.n_years() && !any; ++k) any = masked.observed(i, j, k);
      ok = any;
    }
    if (!ok) {
      const std::string msg = "fold " + panel.population_labels()[f.population] + "/" +
                              panel.location_labels()[f.location] +
                              " skipped: a population has no remaining observations";
      result.warnings.push_back(msg);
      emit_warning(warnings, msg);
      continue;
    }
    folds.push_back(std::move(f));
  }

  struct Job {
    std::size_t fold;
    std::size_t kind;
  };
  std::vector<Job> jobs;
  for (std::size_t f = 0; f < folds.size(); ++f)
    for (std::size_t k = 0; k < kinds.size(); ++k) jobs.push_back({f, k});
  std::vector<FoldResult> outputs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t n = next++; n < jobs.size(); n = next++) {
      try {
        const Fold& fold = folds[jobs[n].fold];
        const ModelKind kind = kinds[jobs[n].kind];
        McmcConfig c = cfg;
        c.workers = 1;
        c.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(fold.population),
                                        static_cast<std::uint64_t>(fold.location),
                                        static_cast<std::uint64_t>(kind)});
        Warnings fit_warnings;
        FitOptions options;
        options.warnings = &fit_warnings;
        const PosteriorArchive archive = fit(panel.with_masked(fold.spec.held_cells), graph, kind, priors, c, options);
        outputs[n].kind = kind;
        outputs[n].fold = fold;
        outputs[n].report = score_holdout(archive, panel, fold.spec, splitmix64(c.seed));
      } catch (...) {
        errors[n] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  result.folds = std::move(outputs);

  for (std::size_t k = 0; k < kinds.size(); ++k) {
    for (int i = 0; i < panel.n_populations(); ++i) {
      std::vector<double> mse, cov, w;
      for (const auto& fr : result.folds) {
        if (fr.kind != kinds[k] || fr.fold.population != i) continue;
        mse.push_back(fr.report.mse);
        cov.push_back(fr.report.coverage);
        w.push_back(fr.report.weight);
      }
      if (mse.empty()) continue;
      const auto [m_mean, m_sd] = weighted_mean_sd(mse, w);
      const auto [c_mean, c_sd] = weighted_mean_sd(cov, w);
      const std::string& pop = panel.population_labels()[i];
      const int n = static_cast<int>(mse.size());
      result.summary.push_back({"MSE", pop, kinds[k], m_mean, m_sd, n});
      result.summary.push_back({"Coverage", pop, kinds[k], c_mean, c_sd, n});
    }
  }
  std::stable_sort(result.summary.begin(), result.summary.end(),
                   [](const CvSummaryRow& a, const CvSummaryRow& b) { return a.index > b.index; });
  return result;
}

void write_per_cell_csv(std::ostream& out, const CvResult& result, const SurveillancePanel& panel) {
  out << "model,population,location,year,y,n,p_hat,p_mean,p_lo99,p_hi99,sq_error,covered\n";
  const auto years = panel.year_labels();
  for (const auto& fr : result.folds) {
    for (const auto& c : fr.report.cells) {
      out << to_string(fr.kind) << ',' << panel.population_labels()[c.cell.population] << ','
          << panel.location_labels()[c.cell.location] << ',' << years[c.cell.year] << ',' << c.y << ','
          << c.n << ',' << csv::format_double(c.p_hat) << ',' << csv::format_double(c.p_mean) << ','
          << csv::format_double(c.lower) << ',' << csv::format_double(c.upper) << ','
          << csv::format_double(c.sq_error) << ',' << (c.covered ? 1 : 0) << '\n';
    }
  }
}

void write_aggregate_csv(std::ostream& out, const CvResult& result) {
  out << "index,population,model,mean,sd,n_folds\n";
  for (const auto& r : result.summary) {
    out << r.index << ',' << r.population << ',' << to_string(r.kind) << ',' << csv::format_double(r.mean)
        << ',' << csv::format_double(r.sd) << ',' << r.n_folds << '\n';
  }
}

}  // namespace jcar
