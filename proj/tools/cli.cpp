#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "jointcar/archive.hpp"
#include "jointcar/csv.hpp"
#include "jointcar/diagnostics.hpp"
#include "jointcar/evaluation.hpp"
#include "jointcar/oracle.hpp"
#include "jointcar/sampler.hpp"
#include "jointcar/sim_study.hpp"

namespace jcar::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration <-> json

namespace {

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json mcmc_json(const McmcArgs& m) {
  return {{"iters", m.iters},       {"burnin", m.burnin},   {"thin", m.thin},
          {"chains", m.chains},     {"seed", optional_json(m.seed)},
          {"adapt_until", optional_json(m.adapt_until)}, {"workers", m.workers}};
}

McmcArgs mcmc_from(const json& j) {
  McmcArgs m;
  m.iters = j.at("iters").get<int>();
  m.burnin = j.at("burnin").get<int>();
  m.thin = j.at("thin").get<int>();
  m.chains = j.at("chains").get<int>();
  m.seed = optional_from<std::uint64_t>(j, "seed");
  m.adapt_until = optional_from<int>(j, "adapt_until");
  m.workers = j.at("workers").get<int>();
  return m;
}

json priors_json(const PriorArgs& p) {
  return {{"beta_variance", p.beta_variance}, {"sigma2_shape", p.sigma2_shape}, {"sigma2_rate", p.sigma2_rate}};
}

PriorArgs priors_from(const json& j) {
  PriorArgs p;
  p.beta_variance = j.at("beta_variance").get<double>();
  p.sigma2_shape = j.at("sigma2_shape").get<double>();
  p.sigma2_rate = j.at("sigma2_rate").get<double>();
  return p;
}

}  // namespace

json to_json(const RunConfig& c) {
  json args;
  if (c.command == "fit") {
    const auto& a = c.fit;
    args = {{"panel", a.panel}, {"graph", a.graph}, {"model", a.model}, {"out", a.out},
            {"mcmc", mcmc_json(a.mcmc)}, {"priors", priors_json(a.priors)}};
  } else if (c.command == "impute") {
    const auto& a = c.impute;
    args = {{"archive", a.archive}, {"panel", a.panel}, {"cells", a.cells}, {"out", a.out},
            {"n_holdout", optional_json(a.n_holdout)}, {"seed", optional_json(a.seed)}};
  } else if (c.command == "cv") {
    const auto& a = c.cv;
    args = {{"panel", a.panel}, {"graph", a.graph}, {"models", a.models}, {"fast_cv", a.fast_cv},
            {"out", a.out}, {"mcmc", mcmc_json(a.mcmc)}, {"priors", priors_json(a.priors)}};
  } else if (c.command == "simulate") {
    const auto& a = c.simulate;
    args = {{"experiment", a.experiment}, {"full", a.full}, {"reps", a.reps},
            {"rho_grid", a.rho_grid}, {"phi_grid", a.phi_grid}, {"graph", a.graph},
            {"years", a.years}, {"sample_size", a.sample_size}, {"trend1", a.trend1},
            {"trend2", a.trend2}, {"sigma2", a.sigma2}, {"rho", a.rho}, {"phi", a.phi},
            {"structure", a.structure}, {"gaussian_latent", a.gaussian_latent},
            {"random_split", a.random_split}, {"out", a.out}, {"mcmc", mcmc_json(a.mcmc)}};
  } else if (c.command == "oracle") {
    const auto& a = c.oracle;
    args = {{"curve", a.curve}, {"R", a.r}, {"G", a.g_range}, {"rho_grid", a.rho_grid}, {"out", a.out}};
  } else {
    throw InputError("unknown command '" + c.command + "'");
  }
  return {{"command", c.command}, {"args", args}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.command = j.at("command").get<std::string>();
    const json& a = j.at("args");
    if (c.command == "fit") {
      c.fit.panel = a.at("panel").get<std::string>();
      c.fit.graph = a.at("graph").get<std::string>();
      c.fit.model = a.at("model").get<std::string>();
      c.fit.out = a.at("out").get<std::string>();
      c.fit.mcmc = mcmc_from(a.at("mcmc"));
      c.fit.priors = priors_from(a.at("priors"));
    } else if (c.command == "impute") {
      c.impute.archive = a.at("archive").get<std::string>();
      c.impute.panel = a.at("panel").get<std::string>();
      c.impute.cells = a.at("cells").get<std::string>();
      c.impute.out = a.at("out").get<std::string>();
      c.impute.n_holdout = optional_from<int>(a, "n_holdout");
      c.impute.seed = optional_from<std::uint64_t>(a, "seed");
    } else if (c.command == "cv") {
      c.cv.panel = a.at("panel").get<std::string>();
      c.cv.graph = a.at("graph").get<std::string>();
      c.cv.models = a.at("models").get<std::vector<std::string>>();
      c.cv.fast_cv = a.at("fast_cv").get<bool>();
      c.cv.out = a.at("out").get<std::string>();
      c.cv.mcmc = mcmc_from(a.at("mcmc"));
      c.cv.priors = priors_from(a.at("priors"));
    } else if (c.command == "simulate") {
      auto& s = c.simulate;
      s.experiment = a.at("experiment").get<std::string>();
      s.full = a.at("full").get<bool>();
      s.reps = a.at("reps").get<int>();
      s.rho_grid = a.at("rho_grid").get<std::string>();
      s.phi_grid = a.at("phi_grid").get<std::string>();
      s.graph = a.at("graph").get<std::string>();
      s.years = a.at("years").get<int>();
      s.sample_size = a.at("sample_size").get<int>();
      s.trend1 = a.at("trend1").get<std::string>();
      s.trend2 = a.at("trend2").get<std::string>();
      s.sigma2 = a.at("sigma2").get<double>();
      s.rho = a.at("rho").get<double>();
      s.phi = a.at("phi").get<double>();
      s.structure = a.at("structure").get<std::string>();
      s.gaussian_latent = a.at("gaussian_latent").get<bool>();
      s.random_split = a.at("random_split").get<bool>();
      s.out = a.at("out").get<std::string>();
      s.mcmc = mcmc_from(a.at("mcmc"));
    } else if (c.command == "oracle") {
      c.oracle.curve = a.at("curve").get<std::string>();
      c.oracle.r = a.at("R").get<double>();
      c.oracle.g_range = a.at("G").get<std::string>();
      c.oracle.rho_grid = a.at("rho_grid").get<std::string>();
      c.oracle.out = a.at("out").get<std::string>();
    } else {
      throw InputError("unknown command '" + c.command + "' in run configuration");
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed run configuration: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// argument helpers

std::vector<double> parse_grid(const std::string& text) {
  const std::string ctx = "grid '" + text + "'";
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw InputError(ctx + ": expected start:stop:step");
    const double a = csv::parse_double(parts[0], ctx);
    const double b = csv::parse_double(parts[1], ctx);
    const double step = csv::parse_double(parts[2], ctx);
    if (!(step > 0.0) || b < a) throw InputError(ctx + ": need step > 0 and stop >= start");
    const auto n = static_cast<long>(std::floor((b - a) / step + 1e-9)) + 1;
    if (n > 1000000) throw InputError(ctx + ": too many grid points");
    for (long i = 0; i < n; ++i) out.push_back(a + static_cast<double>(i) * step);
  } else {
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');) out.push_back(csv::parse_double(p, ctx));
  }
  if (out.empty()) throw InputError(ctx + ": empty");
  return out;
}

std::pair<int, int> parse_range(const std::string& text) {
  const std::string ctx = "range '" + text + "'";
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    const int v = static_cast<int>(csv::parse_int(text, ctx));
    return {v, v};
  }
  const int lo = static_cast<int>(csv::parse_int(text.substr(0, dots), ctx));
  const int hi = static_cast<int>(csv::parse_int(text.substr(dots + 2), ctx));
  if (hi < lo) throw InputError(ctx + ": upper end below lower end");
  return {lo, hi};
}

namespace {

std::uint64_t resolve_seed(std::optional<std::uint64_t>& seed, std::ostream& out) {
  if (!seed) {
    std::random_device rd;
    seed = (static_cast<std::uint64_t>(rd()) << 32) | static_cast<std::uint64_t>(rd());
    out << "seed: " << *seed << '\n';
  }
  return *seed;
}

int resolve_workers(int workers) {
  return workers > 0 ? workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

McmcConfig to_mcmc(const McmcArgs& m) {
  McmcConfig c;
  c.n_iterations = m.iters;
  c.burn_in = m.burnin;
  c.thin = m.thin;
  c.n_chains = m.chains;
  c.seed = m.seed.value_or(0);
  c.adapt_until = m.adapt_until;
  c.workers = m.workers;
  c.validate();
  return c;
}

Priors to_priors(const PriorArgs& p) {
  Priors out;
  out.beta_variance = p.beta_variance;
  out.sigma2_shape = p.sigma2_shape;
  out.sigma2_rate = p.sigma2_rate;
  out.validate();
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

void write_meta(const fs::path& path, const RunConfig& config, const json& extra = json::object()) {
  json meta = extra;
  meta["run"] = to_json(config);
  auto out = open_out(path);
  out << meta.dump(2) << '\n';
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

void print_summary(const PosteriorArchive& a, std::ostream& out) {
  out << "model " << to_string(a.kind) << ", " << a.n_chains << " chain(s) x " << a.draws_per_chain
      << " draws\n";
  if (a.draws_per_chain >= kMinDiagnosticDraws) {
    out << std::left << std::setw(28) << "parameter" << std::right << std::setw(12) << "mean"
        << std::setw(12) << "sd" << std::setw(10) << "rhat" << std::setw(10) << "ess" << '\n';
    for (const auto& d : diagnose(a)) {
      out << std::left << std::setw(28) << d.name << std::right << std::setw(12) << fmt(d.mean)
          << std::setw(12) << fmt(d.sd) << std::setw(10) << fmt(d.rhat) << std::setw(10)
          << fmt(d.ess_bulk) << (d.degenerate ? "  (constant)" : "") << '\n';
    }
  } else {
    out << "(fewer than " << kMinDiagnosticDraws << " draws per chain: R-hat and ESS skipped)\n";
  }
  out << "acceptance:";
  for (const auto& [block, rates] : a.acceptance) {
    out << ' ' << block << '=';
    for (std::size_t c = 0; c < rates.size(); ++c) out << (c ? "/" : "") << fmt(rates[c]);
  }
  out << '\n';
}

// ---------------------------------------------------------------------------
// commands

int cmd_fit(RunConfig& config, std::ostream& out) {
  FitArgs& a = config.fit;
  const ModelKind kind = parse_model_kind(a.model);
  const Priors priors = to_priors(a.priors);
  resolve_seed(a.mcmc.seed, out);
  const McmcConfig mcmc = to_mcmc(a.mcmc);
  const SpatialGraph graph = load_graph_file(a.graph);
  const SurveillancePanel panel = load_panel_file(a.panel, graph);
  FitOptions options;
  const PosteriorArchive archive = fit(panel, graph, kind, priors, mcmc, options);
  save_archive(a.out, archive, to_json(config).dump());
  print_summary(archive, out);
  out << "archive written to " << a.out << '\n';
  return 0;
}

std::vector<CellIndex> read_cell_list(const std::string& path, const PosteriorArchive& a) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open cell list " + path);
  auto index_of = [](const std::vector<std::string>& labels, const std::string& v, const std::string& ctx) {
    const auto it = std::find(labels.begin(), labels.end(), v);
    if (it == labels.end()) throw InputError(ctx + ": unknown label '" + v + "'");
    return static_cast<int>(it - labels.begin());
  };
  std::vector<CellIndex> cells;
  bool header = true;
  csv::for_each_record(in, [&](int line, const std::vector<std::string>& f) {
    const std::string ctx = path + ":" + std::to_string(line);
    if (header) {
      header = false;
      if (f != std::vector<std::string>{"population", "location", "year"}) {
        throw InputError(ctx + ": expected header population,location,year");
      }
      return;
    }
    if (f.size() != 3) throw InputError(ctx + ": expected 3 fields");
    const int year = static_cast<int>(csv::parse_int(f[2], ctx)) - a.first_year;
    if (year < 0 || year >= a.n_years) throw InputError(ctx + ": year outside the archive");
    cells.push_back({index_of(a.population_labels, f[0], ctx), index_of(a.location_labels, f[1], ctx), year});
  });
  return cells;
}

int cmd_impute(RunConfig& config, std::ostream& out) {
  ImputeArgs& a = config.impute;
  if (a.out.empty()) throw InputError("impute needs --out");
  if (a.n_holdout && *a.n_holdout < 1) throw InputError("--n-holdout must be at least 1");
  const std::uint64_t seed = resolve_seed(a.seed, out);
  const PosteriorArchive archive = load_archive(a.archive);
  if (archive.n_draws() == 0) throw InputError("archive has no draws");

  std::optional<SurveillancePanel> panel;
  if (!a.panel.empty()) {
    Warnings ignored;
    const SpatialGraph labels_only(archive.location_labels, {}, &ignored);
    panel = load_panel_file(a.panel, labels_only);
  }
  std::vector<CellIndex> cells =
      a.cells == "all-missing" ? archive.missing_cells : read_cell_list(a.cells, archive);
  for (const auto& c : cells) {
    if (archive.missing_column(c) < 0) {
      throw InputError("cell " + archive.population_labels[c.population] + "," +
                       archive.location_labels[c.location] + "," + std::to_string(archive.first_year + c.year) +
                       " was observed during fitting");
    }
  }
  std::sort(cells.begin(), cells.end(), [&](const CellIndex& x, const CellIndex& y) {
    return std::tie(archive.population_labels[x.population], archive.location_labels[x.location], x.year) <
           std::tie(archive.population_labels[y.population], archive.location_labels[y.location], y.year);
  });

  const fs::path out_path(a.out);
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path().string());
  auto csv_out = open_out(out_path);
  csv_out << "population,location,year,p_mean,p_lo99,p_hi99,interval_kind\n";
  std::uint64_t k = 0;
  for (const auto& c : cells) {
    const std::string& pop = archive.population_labels[c.population];
    const std::string& loc = archive.location_labels[c.location];
    const int year = archive.first_year + c.year;
    std::optional<int> n = a.n_holdout;
    if (!n && panel) {
      const int pi = std::find(panel->population_labels().begin(), panel->population_labels().end(), pop) -
                     panel->population_labels().begin();
      const int yi = year - panel->first_year();
      if (pi < panel->n_populations() && yi >= 0 && yi < panel->n_years() &&
          panel->observed(pi, c.location, yi)) {
        n = panel->n(pi, c.location, yi);
      }
    }
    double mean = 0.0, lo = 0.0, hi = 0.0;
    std::string kind;
    if (n) {
      const PredictiveSummary s = posterior_predictive_p(archive, c, *n, seed + k++);
      mean = s.p_mean;
      lo = s.lower;
      hi = s.upper;
      kind = "predictive";
    } else {
      std::vector<double> p;
      const int col = archive.missing_column(c);
      for (int r = 0; r < archive.n_draws(); ++r) p.push_back(inv_logit(archive.mu_missing(r, col)));
      for (double v : p) mean += v;
      mean /= static_cast<double>(p.size());
      lo = empirical_quantile(p, 0.005);
      hi = empirical_quantile(p, 0.995);
      kind = "posterior";
    }
    csv_out << pop << ',' << loc << ',' << year << ',' << csv::format_double(mean) << ','
            << csv::format_double(lo) << ',' << csv::format_double(hi) << ',' << kind << '\n';
  }
  csv_out.close();
  write_meta(out_path.string() + ".meta.json", config);
  out << cells.size() << " cell(s) written to " << a.out << '\n';
  return 0;
}

int cmd_cv(RunConfig& config, std::ostream& out, std::ostream& err) {
  CvArgs& a = config.cv;
  if (a.models.empty()) throw InputError("cv needs at least one model");
  std::vector<ModelKind> kinds;
  for (const auto& m : a.models) kinds.push_back(parse_model_kind(m));
  const Priors priors = to_priors(a.priors);
  resolve_seed(a.mcmc.seed, out);
  McmcConfig mcmc = to_mcmc(a.mcmc);
  if (a.fast_cv) mcmc = fast_cv_config(mcmc);
  const SpatialGraph graph = load_graph_file(a.graph);
  const SurveillancePanel panel = load_panel_file(a.panel, graph);
  Warnings warnings;
  const CvResult result =
      leave_one_location_out(panel, graph, kinds, priors, mcmc, resolve_workers(a.mcmc.workers), &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  ensure_dir(a.out);
  {
    auto f = open_out(fs::path(a.out) / "per_cell.csv");
    write_per_cell_csv(f, result, panel);
  }
  {
    auto f = open_out(fs::path(a.out) / "aggregate.csv");
    write_aggregate_csv(f, result);
  }
  write_meta(fs::path(a.out) / "meta.json", config, {{"warnings", result.warnings}});
  write_aggregate_csv(out, result);
  return 0;
}

SimDesign base_design(const SimulateArgs& a, std::uint64_t seed) {
  SimDesign d;
  if (!a.graph.empty()) d.graph = load_graph_file(a.graph);
  d.n_years = a.years;
  d.sample_size = a.sample_size;
  d.trends = {TrendSpec::parse(a.trend1), TrendSpec::parse(a.trend2)};
  d.sigma2 = {a.sigma2, a.sigma2};
  d.phi = {a.phi, a.phi};
  d.rho = a.rho;
  d.structure = parse_structure(a.structure);
  d.random_split = a.random_split;
  d.seed = seed;
  d.validate();
  return d;
}

void write_failures(const fs::path& path, const std::vector<ExperimentFailure>& failures, std::ostream& err) {
  auto f = open_out(path);
  f << "rho,phi,rep,message\n";
  for (const auto& x : failures) {
    std::string msg = x.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    f << csv::format_double(x.rho) << ',' << csv::format_double(x.phi) << ',' << x.rep << ',' << msg << '\n';
    err << "warning: replication rho=" << x.rho << " phi=" << x.phi << " rep=" << x.rep
        << " failed: " << x.message << '\n';
  }
}

int cmd_simulate(RunConfig& config, std::ostream& out, std::ostream& err) {
  SimulateArgs& a = config.simulate;
  const std::uint64_t seed = resolve_seed(a.mcmc.seed, out);
  const SimDesign design = base_design(a, seed);
  ensure_dir(a.out);
  const fs::path dir(a.out);

  if (a.experiment == "data") {
    const SimData data = generate(design);
    {
      auto f = open_out(dir / "graph.csv");
      write_graph(f, design.graph);
    }
    {
      auto f = open_out(dir / "panel.csv");
      write_panel(f, data.panel);
    }
    {
      auto f = open_out(dir / "full_panel.csv");
      write_panel(f, data.full);
    }
    {
      auto f = open_out(dir / "truth.csv");
      f << "population,location,year,s,mu,p\n";
      const auto years = data.full.year_labels();
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < design.graph.n_locations(); ++j)
          for (int k = 0; k < design.n_years; ++k)
            f << data.full.population_labels()[i] << ',' << design.graph.labels()[j] << ',' << years[k] << ','
              << csv::format_double(data.truth.s(i, j)) << ',' << csv::format_double(data.truth.mu[i](j, k))
              << ',' << csv::format_double(data.truth.p[i](j, k)) << '\n';
    }
    write_meta(dir / "meta.json", config);
    out << "simulated panel written to " << a.out << '\n';
    return 0;
  }

  ExperimentConfig cfg;
  if (a.full) {
    cfg = ExperimentConfig::full();
    cfg.mcmc.n_chains = a.mcmc.chains;
    cfg.mcmc.thin = a.mcmc.thin;
  } else {
    cfg.rho_grid = parse_grid(a.rho_grid);
    cfg.phi_grid = parse_grid(a.phi_grid);
    cfg.n_reps = a.reps;
    cfg.mcmc = to_mcmc(a.mcmc);
  }
  cfg.mcmc.seed = seed;
  cfg.base = design;
  cfg.workers = resolve_workers(a.mcmc.workers);
  cfg.gaussian_latent = a.gaussian_latent;

  if (a.experiment == "rho-recovery") {
    const RhoRecoveryResult r = rho_recovery_experiment(cfg);
    {
      auto f = open_out(dir / "rho_recovery.csv");
      write_rho_recovery_csv(f, r);
    }
    write_failures(dir / "failures.csv", r.failures, err);
    out << "rho,phi,mse_matching,mse_discrepancy\n";
    for (double rho : cfg.rho_grid)
      for (double phi : cfg.phi_grid)
        out << fmt(rho) << ',' << fmt(phi) << ',' << fmt(r.mse(rho, phi, MissingStructure::Matching)) << ','
            << fmt(r.mse(rho, phi, MissingStructure::Discrepancy)) << '\n';
  } else if (a.experiment == "imputation") {
    const ImputationResult r = imputation_experiment(cfg);
    {
      auto f = open_out(dir / "imputation_diff.csv");
      write_imputation_csv(f, r, design);
    }
    write_failures(dir / "failures.csv", r.failures, err);
    out << "rho,phi,mean_difference\n";
    for (double rho : cfg.rho_grid) {
      for (double phi : cfg.phi_grid) {
        const auto d = r.rep_differences(rho, phi);
        double m = 0.0;
        for (double v : d) m += v;
        out << fmt(rho) << ',' << fmt(phi) << ',' << fmt(d.empty() ? NAN : m / d.size()) << '\n';
      }
    }
  } else {
    throw InputError("unknown experiment '" + a.experiment + "' (rho-recovery|imputation|data)");
  }
  write_meta(dir / "meta.json", config);
  return 0;
}

int cmd_oracle(RunConfig& config, std::ostream& out) {
  OracleArgs& a = config.oracle;
  const std::vector<double> rhos = parse_grid(a.rho_grid);
  ensure_dir(a.out);
  auto f = open_out(fs::path(a.out) / "curve.csv");
  const Eigen::MatrixXd r = Eigen::MatrixXd::Constant(1, 1, a.r);
  if (a.curve == "variance") {
    f << "rho,matching,discrepancy,gap,boundary\n";
    for (double rho : rhos) {
      OracleCase c;
      c.l_pred = c.l_obs1 = c.l_obs2 = Eigen::MatrixXd::Identity(1, 1);
      c.r = r;
      c.rho = std::clamp(rho, -1.0, 1.0);
      c.structure = MissingStructure::Matching;
      const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
      const double vm = predict_matching(c, zero).cov(0, 0);
      c.structure = MissingStructure::Discrepancy;
      const GaussianPrediction d = predict_discrepancy(c, zero, zero);
      f << csv::format_double(rho) << ',' << csv::format_double(vm) << ',' << csv::format_double(d.cov(0, 0))
        << ',' << csv::format_double(vm - d.cov(0, 0)) << ',' << (d.boundary ? 1 : 0) << '\n';
    }
  } else if (a.curve == "fisher-matching") {
    const auto [lo, hi] = parse_range(a.g_range);
    if (lo < 1) throw InputError("--G must be positive");
    f << "G,rho,inv_fisher\n";
    for (int g = lo; g <= hi; ++g)
      for (double rho : rhos)
        f << g << ',' << csv::format_double(rho) << ',' << csv::format_double(fisher_matching_inv(rho, g)) << '\n';
  } else if (a.curve == "fisher-discrepancy") {
    f << "rho,R,inv_fisher_closed_form,inv_fisher_trace,inv_fisher_matching\n";
    for (double rho : rhos) {
      const double closed = fisher_discrepancy_inv(rho, r);
      const double info = fisher_general(discrepancy_s22(r), rho);
      f << csv::format_double(rho) << ',' << csv::format_double(a.r) << ',' << csv::format_double(closed) << ','
        << csv::format_double(info > 0.0 ? 1.0 / info : INFINITY) << ','
        << csv::format_double(fisher_matching_inv(rho, 1)) << '\n';
    }
  } else {
    throw InputError("unknown curve '" + a.curve + "' (variance|fisher-matching|fisher-discrepancy)");
  }
  f.close();
  write_meta(fs::path(a.out) / "meta.json", config);
  out << "curve written to " << (fs::path(a.out) / "curve.csv").string() << '\n';
  return 0;
}

void add_mcmc_options(CLI::App* app, McmcArgs& m, std::uint64_t& seed_slot, int& adapt_slot) {
  app->add_option("--iters", m.iters, "MCMC iterations per chain")->capture_default_str();
  app->add_option("--burnin", m.burnin, "burn-in iterations")->capture_default_str();
  app->add_option("--thin", m.thin, "thinning interval")->capture_default_str();
  app->add_option("--chains", m.chains, "number of chains")->capture_default_str();
  app->add_option("--seed", seed_slot, "master seed (random and printed when absent)");
  app->add_option("--adapt-until", adapt_slot, "last adaptation iteration (default: burn-in)");
  app->add_option("--workers", m.workers, "parallel workers (0 = all cores)")->capture_default_str();
}

void add_prior_options(CLI::App* app, PriorArgs& p) {
  app->add_option("--beta-variance", p.beta_variance)->capture_default_str();
  app->add_option("--sigma2-shape", p.sigma2_shape)->capture_default_str();
  app->add_option("--sigma2-rate", p.sigma2_rate)->capture_default_str();
}

}  // namespace

int execute(RunConfig config, std::ostream& out, std::ostream& err) {
  try {
    if (config.command == "fit") return cmd_fit(config, out);
    if (config.command == "impute") return cmd_impute(config, out);
    if (config.command == "cv") return cmd_cv(config, out, err);
    if (config.command == "simulate") return cmd_simulate(config, out, err);
    if (config.command == "oracle") return cmd_oracle(config, out);
    throw InputError("unknown command '" + config.command + "'");
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return 3;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint spatial CAR models for multi-population prevalence data", "jointcar"};
  app.require_subcommand(1);
  RunConfig config;
  std::uint64_t seed = 0;
  int adapt = 0;
  int n_holdout = 0;
  std::string meta_path, rerun_out;

  auto* fit_cmd = app.add_subcommand("fit", "fit a model and write a posterior archive");
  fit_cmd->add_option("--panel", config.fit.panel, "panel CSV (population,location,year,y,n)")->required();
  fit_cmd->add_option("--graph", config.fit.graph, "adjacency CSV")->required();
  fit_cmd->add_option("--model", config.fit.model, "mixed|car|jointcar")->capture_default_str();
  fit_cmd->add_option("--out", config.fit.out, "archive directory")->capture_default_str();
  McmcArgs& fit_mcmc = config.fit.mcmc;
  add_mcmc_options(fit_cmd, fit_mcmc, seed, adapt);
  add_prior_options(fit_cmd, config.fit.priors);

  auto* impute_cmd = app.add_subcommand("impute", "posterior summaries for masked cells");
  impute_cmd->add_option("--archive", config.impute.archive, "archive directory")->required();
  impute_cmd->add_option("--panel", config.impute.panel, "panel CSV supplying sample sizes");
  impute_cmd->add_option("--cells", config.impute.cells, "all-missing or a CSV of population,location,year")
      ->capture_default_str();
  impute_cmd->add_option("--out", config.impute.out, "output CSV")->required();
  impute_cmd->add_option("--n-holdout", n_holdout, "sample size for predictive intervals");
  impute_cmd->add_option("--seed", seed, "seed for predictive draws");

  auto* cv_cmd = app.add_subcommand("cv", "leave-one-location-out cross-validation");
  cv_cmd->add_option("--panel", config.cv.panel)->required();
  cv_cmd->add_option("--graph", config.cv.graph)->required();
  cv_cmd->add_option("--models", config.cv.models, "models to compare")->delimiter(',')->capture_default_str();
  cv_cmd->add_flag("--fast-cv", config.cv.fast_cv, "6000 iterations / 3000 burn-in per fold");
  cv_cmd->add_option("--out", config.cv.out)->capture_default_str();
  add_mcmc_options(cv_cmd, config.cv.mcmc, seed, adapt);
  add_prior_options(cv_cmd, config.cv.priors);

  auto* sim_cmd = app.add_subcommand("simulate", "simulation experiments and synthetic panels");
  auto& s = config.simulate;
  sim_cmd->add_option("--experiment", s.experiment, "rho-recovery|imputation|data")->capture_default_str();
  sim_cmd->add_flag("--full", s.full, "full grids, 50 replications, 30000/20000 MCMC");
  sim_cmd->add_option("--reps", s.reps)->capture_default_str();
  sim_cmd->add_option("--rho-grid", s.rho_grid)->capture_default_str();
  sim_cmd->add_option("--phi-grid", s.phi_grid)->capture_default_str();
  sim_cmd->add_option("--graph", s.graph, "adjacency CSV (default 2 x 13 queen lattice)");
  sim_cmd->add_option("--years", s.years)->capture_default_str();
  sim_cmd->add_option("--sample-size", s.sample_size)->capture_default_str();
  sim_cmd->add_option("--trend1", s.trend1)->capture_default_str();
  sim_cmd->add_option("--trend2", s.trend2)->capture_default_str();
  sim_cmd->add_option("--sigma2", s.sigma2)->capture_default_str();
  sim_cmd->add_option("--rho", s.rho, "data mode")->capture_default_str();
  sim_cmd->add_option("--phi", s.phi, "data mode")->capture_default_str();
  sim_cmd->add_option("--structure", s.structure, "matching|discrepancy (data mode)")->capture_default_str();
  sim_cmd->add_flag("--gaussian-latent", s.gaussian_latent, "imputation with exact mu observation");
  sim_cmd->add_flag("--random-split", s.random_split, "seeded random half split for masks");
  sim_cmd->add_option("--out", s.out)->capture_default_str();
  add_mcmc_options(sim_cmd, s.mcmc, seed, adapt);

  auto* oracle_cmd = app.add_subcommand("oracle", "closed-form variance and Fisher curves");
  oracle_cmd->add_option("--curve", config.oracle.curve, "variance|fisher-matching|fisher-discrepancy")
      ->capture_default_str();
  oracle_cmd->add_option("--R", config.oracle.r, "scalar cross-regression")->capture_default_str();
  oracle_cmd->add_option("--G", config.oracle.g_range, "pair counts lo..hi")->capture_default_str();
  oracle_cmd->add_option("--rho-grid", config.oracle.rho_grid, "start:stop:step or list")->capture_default_str();
  oracle_cmd->add_option("--out", config.oracle.out)->capture_default_str();

  auto* rerun_cmd = app.add_subcommand("rerun", "re-run the command recorded in a meta.json");
  rerun_cmd->add_option("--meta", meta_path, "meta.json path")->required();
  rerun_cmd->add_option("--out", rerun_out, "override the output location");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App* active = app.get_subcommands().front();
  config.command = active->get_name();
  auto given = [&](const std::string& name) {
    return active->get_option_no_throw(name) != nullptr && active->count(name) > 0;
  };
  const bool has_seed = given("--seed");
  const bool has_adapt = given("--adapt-until");
  if (config.command == "fit") {
    if (has_seed) config.fit.mcmc.seed = seed;
    if (has_adapt) config.fit.mcmc.adapt_until = adapt;
  } else if (config.command == "impute") {
    if (has_seed) config.impute.seed = seed;
    if (given("--n-holdout")) config.impute.n_holdout = n_holdout;
  } else if (config.command == "cv") {
    if (has_seed) config.cv.mcmc.seed = seed;
    if (has_adapt) config.cv.mcmc.adapt_until = adapt;
  } else if (config.command == "simulate") {
    if (has_seed) config.simulate.mcmc.seed = seed;
    if (has_adapt) config.simulate.mcmc.adapt_until = adapt;
  } else if (config.command == "rerun") {
    try {
      std::ifstream in(meta_path);
      if (!in) throw InputError("cannot open " + meta_path);
      json meta;
      try {
        meta = json::parse(in);
      } catch (const json::exception& e) {
        throw InputError(meta_path + ": " + e.what());
      }
      if (!meta.contains("run")) throw InputError(meta_path + " has no run configuration");
      RunConfig recorded = run_config_from_json(meta.at("run"));
      if (!rerun_out.empty()) {
        if (recorded.command == "fit") recorded.fit.out = rerun_out;
        if (recorded.command == "impute") recorded.impute.out = rerun_out;
        if (recorded.command == "cv") recorded.cv.out = rerun_out;
        if (recorded.command == "simulate") recorded.simulate.out = rerun_out;
        if (recorded.command == "oracle") recorded.oracle.out = rerun_out;
      }
      return execute(recorded, out, err);
    } catch (const InputError& e) {
      err << "error: " << e.what() << '\n';
      return 2;
    }
  }
  return execute(config, out, err);
}

}  // namespace jcar::cli
