#include "jointcar/sim_study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "jointcar/covariance.hpp"
#include "jointcar/csv.hpp"
#include "jointcar/seeding.hpp"

namespace jcar {

double TrendSpec::operator()(int k) const {
  const double x = static_cast<double>(k);
  switch (kind) {
    case Kind::Sin: return std::sin(a * x);
    case Kind::Cos: return std::cos(a * x);
    case Kind::Constant: return a;
    case Kind::Linear: return a + b * x;
  }
  return 0.0;
}

TrendSpec TrendSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t colon = text.find(':', start);
    parts.push_back(text.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  const std::string ctx = "trend '" + text + "'";
  TrendSpec t;
  if (parts[0] == "sin" || parts[0] == "cos") {
    if (parts.size() != 2) throw InputError(ctx + ": expected sin:<freq> or cos:<freq>");
    t.kind = parts[0] == "sin" ? Kind::Sin : Kind::Cos;
    t.a = csv::parse_double(parts[1], ctx);
  } else if (parts[0] == "constant") {
    if (parts.size() != 2) throw InputError(ctx + ": expected constant:<value>");
    t.kind = Kind::Constant;
    t.a = csv::parse_double(parts[1], ctx);
  } else if (parts[0] == "linear") {
    if (parts.size() != 3) throw InputError(ctx + ": expected linear:<intercept>:<slope>");
    t.kind = Kind::Linear;
    t.a = csv::parse_double(parts[1], ctx);
    t.b = csv::parse_double(parts[2], ctx);
  } else {
    throw InputError(ctx + ": unknown trend (sin|cos|constant|linear)");
  }
  return t;
}

std::string TrendSpec::to_string() const {
  switch (kind) {
    case Kind::Sin: return "sin:" + csv::format_double(a);
    case Kind::Cos: return "cos:" + csv::format_double(a);
    case Kind::Constant: return "constant:" + csv::format_double(a);
    case Kind::Linear: return "linear:" + csv::format_double(a) + ":" + csv::format_double(b);
  }
  return "";
}

SpatialGraph SimDesign::default_sim_graph() { return lattice_graph(2, 13, true); }

void SimDesign::validate() const {
  if (graph.n_locations() < 2 || graph.n_locations() % 2 != 0) {
    throw InputError("simulation masks need an even number of locations (have " +
                     std::to_string(graph.n_locations()) + ")");
  }
  if (n_years < 1) throw InputError("n_years must be positive");
  if (sample_size < 1) throw InputError("sample_size must be positive");
  for (int i = 0; i < 2; ++i) {
    if (!(sigma2[i] > 0.0)) throw InputError("sigma2 must be positive");
    if (!(phi[i] > 0.0 && phi[i] < 1.0)) throw InputError("phi must lie in (0, 1)");
  }
  if (!(std::abs(rho) <= 1.0)) throw InputError("rho must lie in [-1, 1]");
}

MaskPlan structure_mask(int n_locations, MissingStructure structure, bool random_split,
                        std::uint64_t seed) {
  if (n_locations < 2 || n_locations % 2 != 0) {
    throw InputError("simulation masks need an even number of locations");
  }
  const int g = n_locations / 2;
  std::vector<int> order(n_locations);
  std::iota(order.begin(), order.end(), 0);
  if (random_split) {
    std::mt19937_64 rng(derive_seed(seed, {0x6d61736bULL}));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<int> first(order.begin(), order.begin() + g);
  std::vector<int> second(order.begin() + g, order.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  MaskPlan plan;
  plan.hidden1 = second;
  plan.hidden2 = structure == MissingStructure::Matching ? second : first;
  return plan;
}

namespace {

SurveillancePanel apply_plan(const SurveillancePanel& full, const MaskPlan& plan) {
  std::vector<CellIndex> cells;
  for (int k = 0; k < full.n_years(); ++k) {
    for (int j : plan.hidden1) cells.push_back({0, j, k});
    for (int j : plan.hidden2) cells.push_back({1, j, k});
  }
  return full.with_masked(cells);
}

std::vector<CellIndex> predicted_cells(const MaskPlan& plan, int n_years) {
  std::vector<CellIndex> out;
  for (int j : plan.hidden1)
    for (int k = 0; k < n_years; ++k) out.push_back({0, j, k});
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

SimData generate(const SimDesign& design) {
  design.validate();
  const int n_loc = design.graph.n_locations();
  const int n_years = design.n_years;
  std::mt19937_64 rng(derive_seed(design.seed, {0x73696dULL}));
  std::normal_distribution<double> normal(0.0, 1.0);

  // Cosimulation: s_i = L_i w_i with w_2 = rho w_1 + sqrt(1 - rho^2) z.
  Eigen::VectorXd z1(n_loc), z2(n_loc);
  for (int j = 0; j < n_loc; ++j) z1(j) = normal(rng);
  for (int j = 0; j < n_loc; ++j) z2(j) = normal(rng);
  const Eigen::VectorXd w2 = design.rho * z1 + std::sqrt(std::max(0.0, 1.0 - design.rho * design.rho)) * z2;
  SimData out;
  out.truth.s.resize(2, n_loc);
  for (int i = 0; i < 2; ++i) {
    const Eigen::MatrixXd l =
        cholesky_lower(car_covariance(design.graph, {design.sigma2[i], design.phi[i]}));
    out.truth.s.row(i) = (l * (i == 0 ? z1 : w2)).transpose();
  }

  SurveillancePanel full({"P1", "P2"}, design.graph.labels(), 1, n_years);
  std::vector<Eigen::MatrixXd> mu(2, Eigen::MatrixXd(n_loc, n_years));
  std::vector<Eigen::MatrixXd> p(2, Eigen::MatrixXd(n_loc, n_years));
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < n_loc; ++j) {
      for (int k = 0; k < n_years; ++k) {
        mu[i](j, k) = design.trends[i](k + 1) + out.truth.s(i, j);
        p[i](j, k) = inv_logit(mu[i](j, k));
        const int y = std::binomial_distribution<int>(design.sample_size, p[i](j, k))(rng);
        full.set_observation(i, j, k, y, design.sample_size);
      }
    }
  }
  out.truth.mu = mu;
  out.truth.p = p;
  const MaskPlan plan = structure_mask(n_loc, design.structure, design.random_split, design.seed);
  out.panel = apply_plan(full, plan);
  out.full = std::move(full);
  out.predicted = predicted_cells(plan, n_years);
  return out;
}

SimData remask(const SimData& data, MissingStructure structure, bool random_split, std::uint64_t seed) {
  const MaskPlan plan = structure_mask(data.full.n_locations(), structure, random_split, seed);
  SimData out = data;
  out.panel = apply_plan(data.full, plan);
  out.predicted = predicted_cells(plan, data.full.n_years());
  return out;
}

McmcConfig ExperimentConfig::desk_mcmc() {
  McmcConfig c;
  c.n_iterations = 6000;
  c.burn_in = 3000;
  c.n_chains = 1;
  return c;
}

ExperimentConfig ExperimentConfig::full() {
  ExperimentConfig c;
  c.rho_grid.clear();
  for (int k = 1; k <= 9; ++k) c.rho_grid.push_back(0.1 * k);
  c.phi_grid.clear();
  for (int k = 2; k <= 7; ++k) c.phi_grid.push_back(0.1 * k);
  c.n_reps = 50;
  c.mcmc.n_iterations = 30000;
  c.mcmc.burn_in = 20000;
  return c;
}

void ExperimentConfig::validate() const {
  if (rho_grid.empty() || phi_grid.empty()) throw InputError("experiment grids must be non-empty");
  for (double r : rho_grid) {
    if (!(std::abs(r) < 1.0)) throw InputError("rho grid values must lie in (-1, 1)");
  }
  for (double f : phi_grid) {
    if (!(f > 0.0 && f < 1.0)) throw InputError("phi grid values must lie in (0, 1)");
  }
  if (n_reps < 1) throw InputError("n_reps must be positive");
  mcmc.validate();
  base.validate();
}

namespace {

struct GridJob {
  std::size_t rho_index;
  std::size_t phi_index;
  int rep;
};

std::vector<GridJob> grid_jobs(const ExperimentConfig& cfg) {
  std::vector<GridJob> jobs;
  for (std::size_t r = 0; r < cfg.rho_grid.size(); ++r)
    for (std::size_t f = 0; f < cfg.phi_grid.size(); ++f)
      for (int rep = 0; rep < cfg.n_reps; ++rep) jobs.push_back({r, f, rep});
  return jobs;
}

SimDesign job_design(const ExperimentConfig& cfg, const GridJob& job) {
  SimDesign d = cfg.base;
  d.rho = cfg.rho_grid[job.rho_index];
  d.phi = {cfg.phi_grid[job.phi_index], cfg.phi_grid[job.phi_index]};
  // Seeds depend on grid values so that a grid point reproduces regardless
  // of which other points are in the grid.
  d.seed = derive_seed(cfg.base.seed, {static_cast<std::uint64_t>(std::llround(d.rho * 1e6) + (1LL << 40)),
                                       static_cast<std::uint64_t>(std::llround(d.phi[0] * 1e6)),
                                       static_cast<std::uint64_t>(job.rep)});
  return d;
}

void run_jobs(std::size_t n_jobs, int workers, const std::function<void(std::size_t)>& body) {
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t n = next++; n < n_jobs; n = next++) body(n);
  };
  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(n_jobs)));
  if (n_threads == 1) {
    worker();
    return;
  }
  std::vector<std::thread> threads;
  for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

McmcConfig job_mcmc(const ExperimentConfig& cfg, std::uint64_t seed, std::uint64_t salt) {
  McmcConfig c = cfg.mcmc;
  c.workers = 1;
  c.seed = derive_seed(seed, {salt});
  return c;
}

}  // namespace

double RhoRecoveryResult::mse(double rho, double phi, MissingStructure structure) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.rho == rho && r.phi == phi && r.structure == structure) {
      sum += r.sq_error;
      ++n;
    }
  }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> ImputationResult::rep_differences(double rho, double phi) const {
  std::map<int, std::pair<double, int>> by_rep;
  for (const auto& r : rows) {
    if (r.rho != rho || r.phi != phi) continue;
    auto& acc = by_rep[r.rep];
    acc.first += r.err_matching - r.err_discrepancy;
    acc.second += 1;
  }
  std::vector<double> out;
  for (const auto& [rep, acc] : by_rep) out.push_back(acc.first / acc.second);
  return out;
}

RhoRecoveryResult rho_recovery_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto jobs = grid_jobs(cfg);
  std::vector<std::vector<RhoRecoveryRow>> rows(jobs.size());
  std::vector<std::vector<ExperimentFailure>> failures(jobs.size());
  run_jobs(jobs.size(), cfg.workers, [&](std::size_t n) {
    const SimDesign design = job_design(cfg, jobs[n]);
    try {
      const SimData data = generate(design);
      for (MissingStructure structure : {MissingStructure::Matching, MissingStructure::Discrepancy}) {
        const SimData masked = remask(data, structure, design.random_split, design.seed);
        Warnings warnings;
        FitOptions options;
        options.warnings = &warnings;
        const PosteriorArchive a = fit(masked.panel, design.graph, ModelKind::JointCar, Priors{},
                                       job_mcmc(cfg, design.seed, static_cast<std::uint64_t>(structure)),
                                       options);
        const double rho_hat = a.rho.col(0).mean();
        rows[n].push_back({design.rho, design.phi[0], structure, jobs[n].rep, rho_hat,
                           (rho_hat - design.rho) * (rho_hat - design.rho)});
      }
    } catch (const std::exception& e) {
      failures[n].push_back({design.rho, design.phi[0], jobs[n].rep, e.what()});
    }
  });
  RhoRecoveryResult result;
  for (std::size_t n = 0; n < jobs.size(); ++n) {
    result.rows.insert(result.rows.end(), rows[n].begin(), rows[n].end());
    result.failures.insert(result.failures.end(), failures[n].begin(), failures[n].end());
  }
  return result;
}

ImputationResult imputation_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto jobs = grid_jobs(cfg);
  std::vector<std::vector<ImputationRow>> rows(jobs.size());
  std::vector<std::vector<ExperimentFailure>> failures(jobs.size());
  run_jobs(jobs.size(), cfg.workers, [&](std::size_t n) {
    SimDesign design = job_design(cfg, jobs[n]);
    if (cfg.gaussian_latent) design.n_years = 1;
    try {
      const SimData data = generate(design);
      std::map<CellIndex, std::array<double, 2>> errors;
      for (MissingStructure structure : {MissingStructure::Matching, MissingStructure::Discrepancy}) {
        const SimData masked = remask(data, structure, design.random_split, design.seed);
        Warnings warnings;
        FitOptions options;
        options.warnings = &warnings;
        Eigen::MatrixXd rho(2, 2);
        rho << 1.0, design.rho, design.rho, 1.0;
        options.pins.rho = rho;
        if (cfg.gaussian_latent) {
          Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(2, kTrendTerms);
          for (int i = 0; i < 2; ++i) beta(i, 0) = design.trends[i](1);
          options.pins.beta = beta;
          options.pins.sigma2 = Eigen::Vector2d(design.sigma2[0], design.sigma2[1]);
          options.pins.phi = Eigen::Vector2d(design.phi[0], design.phi[1]);
          options.observation = ObservationModel::ExactLatent;
          options.exact_mu = data.truth.mu;
        }
        const PosteriorArchive a = fit(masked.panel, design.graph, ModelKind::JointCar, Priors{},
                                       job_mcmc(cfg, design.seed, static_cast<std::uint64_t>(structure)),
                                       options);
        const int slot = structure == MissingStructure::Matching ? 0 : 1;
        for (const auto& cell : masked.predicted) {
          const int col = a.missing_column(cell);
          double estimate = 0.0, truth = 0.0;
          if (cfg.gaussian_latent) {
            estimate = a.mu_missing.col(col).mean();
            truth = data.truth.mu[cell.population](cell.location, cell.year);
          } else {
            estimate = a.mu_missing.col(col).unaryExpr([](double m) { return inv_logit(m); }).mean();
            truth = data.truth.p[cell.population](cell.location, cell.year);
          }
          errors[cell][slot] = (estimate - truth) * (estimate - truth);
        }
      }
      for (const auto& [cell, e] : errors) {
        rows[n].push_back({design.rho, design.phi[0], jobs[n].rep, cell, e[0], e[1]});
      }
    } catch (const std::exception& e) {
      failures[n].push_back({design.rho, design.phi[0], jobs[n].rep, e.what()});
    }
  });
  ImputationResult result;
  for (std::size_t n = 0; n < jobs.size(); ++n) {
    result.rows.insert(result.rows.end(), rows[n].begin(), rows[n].end());
    result.failures.insert(result.failures.end(), failures[n].begin(), failures[n].end());
  }
  return result;
}

void write_rho_recovery_csv(std::ostream& out, const RhoRecoveryResult& r) {
  out << "rho,phi,structure,rep,rho_hat,sq_error\n";
  for (const auto& row : r.rows) {
    out << csv::format_double(row.rho) << ',' << csv::format_double(row.phi) << ','
        << to_string(row.structure) << ',' << row.rep << ',' << csv::format_double(row.rho_hat) << ','
        << csv::format_double(row.sq_error) << '\n';
  }
}

void write_imputation_csv(std::ostream& out, const ImputationResult& r, const SimDesign& design) {
  out << "rho,phi,rep,cell,mse_matching,mse_discrepancy\n";
  const auto& labels = design.graph.labels();
  for (const auto& row : r.rows) {
    out << csv::format_double(row.rho) << ',' << csv::format_double(row.phi) << ',' << row.rep << ",P"
        << (row.cell.population + 1) << ':' << labels[row.cell.location] << ':' << (row.cell.year + 1)
        << ',' << csv::format_double(row.err_matching) << ',' << csv::format_double(row.err_discrepancy)
        << '\n';
  }
}

}  // namespace jcar
