#include "jointcar/archive.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "jointcar/csv.hpp"

namespace jcar {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> beta_columns(const PosteriorArchive& a) {
  std::vector<std::string> out;
  for (const auto& pop : a.population_labels)
    for (int p = 0; p < kTrendTerms; ++p) out.push_back("beta[" + pop + ":" + std::to_string(p) + "]");
  return out;
}

std::vector<std::string> sigma2_columns(const PosteriorArchive& a) {
  std::vector<std::string> out;
  for (const auto& pop : a.population_labels) out.push_back("sigma2[" + pop + "]");
  return out;
}

std::vector<std::string> phi_columns(const PosteriorArchive& a) {
  std::vector<std::string> out;
  if (a.kind == ModelKind::Mixed) return out;
  for (const auto& pop : a.population_labels) out.push_back("phi[" + pop + "]");
  return out;
}

std::vector<std::string> rho_columns(const PosteriorArchive& a) {
  std::vector<std::string> out;
  for (const auto& [i, j] : a.rho_pairs()) {
    out.push_back("rho[" + a.population_labels[i] + ":" + a.population_labels[j] + "]");
  }
  return out;
}

std::vector<std::string> s_columns(const PosteriorArchive& a) {
  std::vector<std::string> out;
  for (const auto& pop : a.population_labels)
    for (const auto& loc : a.location_labels) out.push_back("s[" + pop + ":" + loc + "]");
  return out;
}

std::vector<std::string> mu_columns(const PosteriorArchive& a) {
  std::vector<std::string> out;
  for (const auto& c : a.missing_cells) {
    out.push_back("mu[" + a.population_labels[c.population] + ":" + a.location_labels[c.location] +
                  ":" + std::to_string(a.first_year + c.year) + "]");
  }
  return out;
}

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

void write_block(const fs::path& path, const PosteriorArchive& a, const std::vector<std::string>& names,
                 const Eigen::MatrixXd& block) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "chain,iteration";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (int r = 0; r < a.n_draws(); ++r) {
    out << a.chain[r] << ',' << a.iteration[r];
    for (Eigen::Index c = 0; c < block.cols(); ++c) out << ',' << csv::format_double(block(r, c));
    out << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

Eigen::MatrixXd read_block(const fs::path& path, const std::vector<std::string>& names, int rows,
                           std::vector<int>* chain, std::vector<int>* iteration) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const auto cols = static_cast<Eigen::Index>(names.size());
  Eigen::MatrixXd m(rows, cols);
  bool header = true;
  int r = 0;
  const std::string where = path.string();
  csv::for_each_record(in, [&](int line, const std::vector<std::string>& f) {
    const std::string ctx = where + ":" + std::to_string(line);
    if (header) {
      header = false;
      std::vector<std::string> expected{"chain", "iteration"};
      expected.insert(expected.end(), names.begin(), names.end());
      if (f != expected) throw InputError(ctx + ": unexpected header");
      return;
    }
    if (r >= rows) throw InputError(ctx + ": more rows than meta.json declares");
    if (static_cast<Eigen::Index>(f.size()) != cols + 2) throw InputError(ctx + ": wrong field count");
    const int c = static_cast<int>(csv::parse_int(f[0], ctx));
    const int it = static_cast<int>(csv::parse_int(f[1], ctx));
    if (chain) chain->push_back(c);
    if (iteration) iteration->push_back(it);
    for (Eigen::Index k = 0; k < cols; ++k) m(r, k) = csv::parse_double(f[k + 2], ctx);
    ++r;
  });
  if (header) throw InputError(where + ": empty file");
  if (r != rows) throw InputError(where + ": fewer rows than meta.json declares");
  return m;
}

double json_number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json load_meta(const std::string& dir) {
  const fs::path path = fs::path(dir) / "meta.json";
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_archive(const std::string& dir, const PosteriorArchive& a, const std::string& run_config_json) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir + ": " + ec.message());

  json meta;
  meta["format"] = "jointcar-archive-1";
  meta["model"] = to_string(a.kind);
  meta["priors"] = {{"beta_variance", a.priors.beta_variance},
                    {"sigma2_shape", a.priors.sigma2_shape},
                    {"sigma2_rate", a.priors.sigma2_rate},
                    {"phi_lower", a.priors.phi_lower},
                    {"phi_upper", a.priors.phi_upper},
                    {"rho_lower", a.priors.rho_lower},
                    {"rho_upper", a.priors.rho_upper}};
  json cfg = {{"n_iterations", a.config.n_iterations},
              {"burn_in", a.config.burn_in},
              {"thin", a.config.thin},
              {"n_chains", a.config.n_chains},
              {"seed", std::to_string(a.config.seed)},
              {"workers", a.config.workers}};
  if (a.config.adapt_until) cfg["adapt_until"] = *a.config.adapt_until;
  meta["mcmc"] = cfg;
  meta["populations"] = a.population_labels;
  meta["locations"] = a.location_labels;
  meta["first_year"] = a.first_year;
  meta["n_years"] = a.n_years;
  json missing = json::array();
  for (const auto& c : a.missing_cells) missing.push_back({c.population, c.location, c.year});
  meta["missing_cells"] = missing;
  meta["pinned_blocks"] = a.pinned_blocks;
  meta["n_chains"] = a.n_chains;
  meta["draws_per_chain"] = a.draws_per_chain;
  json acc = json::object();
  for (const auto& [block, rates] : a.acceptance) {
    json arr = json::array();
    for (double r : rates) arr.push_back(std::isfinite(r) ? json(r) : json(nullptr));
    acc[block] = arr;
  }
  meta["acceptance"] = acc;
  json freeze = json::array(), final = json::array();
  for (auto v : a.step_checksum_at_freeze) freeze.push_back(hex64(v));
  for (auto v : a.step_checksum_final) final.push_back(hex64(v));
  meta["step_checksum_at_freeze"] = freeze;
  meta["step_checksum_final"] = final;
  meta["warnings"] = a.warnings;
  if (!run_config_json.empty()) {
    try {
      meta["run"] = json::parse(run_config_json);
    } catch (const json::exception& e) {
      throw InputError(std::string("run configuration is not valid JSON: ") + e.what());
    }
  }

  {
    std::ofstream out(fs::path(dir) / "meta.json", std::ios::binary);
    if (!out) throw InputError("cannot write meta.json in " + dir);
    out << meta.dump(2) << '\n';
  }
  const fs::path base(dir);
  write_block(base / "beta.csv", a, beta_columns(a), a.beta);
  write_block(base / "sigma2.csv", a, sigma2_columns(a), a.sigma2);
  write_block(base / "phi.csv", a, phi_columns(a), a.phi);
  write_block(base / "rho.csv", a, rho_columns(a), a.rho);
  write_block(base / "s.csv", a, s_columns(a), a.s);
  write_block(base / "mu_missing.csv", a, mu_columns(a), a.mu_missing);
}

PosteriorArchive load_archive(const std::string& dir) {
  const json meta = load_meta(dir);
  PosteriorArchive a;
  try {
    a.kind = parse_model_kind(meta.at("model").get<std::string>());
    const auto& p = meta.at("priors");
    a.priors.beta_variance = p.at("beta_variance").get<double>();
    a.priors.sigma2_shape = p.at("sigma2_shape").get<double>();
    a.priors.sigma2_rate = p.at("sigma2_rate").get<double>();
    a.priors.phi_lower = p.at("phi_lower").get<double>();
    a.priors.phi_upper = p.at("phi_upper").get<double>();
    a.priors.rho_lower = p.at("rho_lower").get<double>();
    a.priors.rho_upper = p.at("rho_upper").get<double>();
    const auto& c = meta.at("mcmc");
    a.config.n_iterations = c.at("n_iterations").get<int>();
    a.config.burn_in = c.at("burn_in").get<int>();
    a.config.thin = c.at("thin").get<int>();
    a.config.n_chains = c.at("n_chains").get<int>();
    a.config.seed = std::stoull(c.at("seed").get<std::string>());
    a.config.workers = c.at("workers").get<int>();
    if (c.contains("adapt_until")) a.config.adapt_until = c.at("adapt_until").get<int>();
    a.population_labels = meta.at("populations").get<std::vector<std::string>>();
    a.location_labels = meta.at("locations").get<std::vector<std::string>>();
    a.first_year = meta.at("first_year").get<int>();
    a.n_years = meta.at("n_years").get<int>();
    for (const auto& cell : meta.at("missing_cells")) {
      a.missing_cells.push_back({cell.at(0).get<int>(), cell.at(1).get<int>(), cell.at(2).get<int>()});
    }
    a.pinned_blocks = meta.at("pinned_blocks").get<std::vector<std::string>>();
    a.n_chains = meta.at("n_chains").get<int>();
    a.draws_per_chain = meta.at("draws_per_chain").get<int>();
    for (const auto& [block, rates] : meta.at("acceptance").items()) {
      for (const auto& r : rates) a.acceptance[block].push_back(json_number(r));
    }
    for (const auto& v : meta.at("step_checksum_at_freeze"))
      a.step_checksum_at_freeze.push_back(parse_hex64(v.get<std::string>()));
    for (const auto& v : meta.at("step_checksum_final"))
      a.step_checksum_final.push_back(parse_hex64(v.get<std::string>()));
    a.warnings = meta.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw InputError(dir + "/meta.json: " + e.what());
  } catch (const std::logic_error& e) {
    throw InputError(dir + "/meta.json: " + e.what());
  }

  const int rows = a.n_chains * a.draws_per_chain;
  const fs::path base(dir);
  a.beta = read_block(base / "beta.csv", beta_columns(a), rows, &a.chain, &a.iteration);
  a.sigma2 = read_block(base / "sigma2.csv", sigma2_columns(a), rows, nullptr, nullptr);
  a.phi = read_block(base / "phi.csv", phi_columns(a), rows, nullptr, nullptr);
  a.rho = read_block(base / "rho.csv", rho_columns(a), rows, nullptr, nullptr);
  a.s = read_block(base / "s.csv", s_columns(a), rows, nullptr, nullptr);
  a.mu_missing = read_block(base / "mu_missing.csv", mu_columns(a), rows, nullptr, nullptr);
  return a;
}

std::string load_run_config(const std::string& dir) {
  const json meta = load_meta(dir);
  if (!meta.contains("run")) return "";
  return meta.at("run").dump();
}

}  // namespace jcar
