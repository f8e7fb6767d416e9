#include "jointcar/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "jointcar/archive.hpp"

namespace jcar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

void require_shape(const Chains& chains) {
  if (chains.empty()) throw InputError("diagnostics need at least one chain");
  const std::size_t n = chains[0].size();
  for (const auto& c : chains) {
    if (c.size() != n) throw InputError("diagnostics need chains of equal length");
  }
  if (n < static_cast<std::size_t>(kMinDiagnosticDraws)) {
    throw InputError("diagnostics need at least " + std::to_string(kMinDiagnosticDraws) +
                     " draws per chain");
  }
}

// Each chain cut into two halves; the middle draw is dropped for odd lengths.
Chains split(const Chains& chains) {
  Chains out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

bool any_constant(const Chains& chains) {
  for (const auto& c : chains) {
    if (std::all_of(c.begin(), c.end(), [&](double v) { return v == c.front(); })) return true;
  }
  return false;
}

// Pooled ranks (ties averaged) mapped to normal scores.
Chains rank_normalize(const Chains& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (const auto& c : chains)
    for (double v : c) pooled.emplace_back(v, pooled.size());
  std::sort(pooled.begin(), pooled.end());
  const double s = static_cast<double>(pooled.size());
  std::vector<double> z(pooled.size());
  const boost::math::normal_distribution<double> normal;
  for (std::size_t a = 0; a < pooled.size();) {
    std::size_t b = a;
    while (b + 1 < pooled.size() && pooled[b + 1].first == pooled[a].first) ++b;
    const double rank = 0.5 * static_cast<double>(a + b) + 1.0;
    const double q = boost::math::quantile(normal, (rank - 0.375) / (s + 0.25));
    for (std::size_t k = a; k <= b; ++k) z[pooled[k].second] = q;
    a = b + 1;
  }
  Chains out;
  std::size_t k = 0;
  for (const auto& c : chains) {
    out.emplace_back(z.begin() + static_cast<std::ptrdiff_t>(k),
                     z.begin() + static_cast<std::ptrdiff_t>(k + c.size()));
    k += c.size();
  }
  return out;
}

Chains fold(const Chains& chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2),
                   pooled.end());
  double median = pooled[pooled.size() / 2];
  if (pooled.size() % 2 == 0) {
    const double lower = *std::max_element(pooled.begin(),
                                           pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2));
    median = 0.5 * (median + lower);
  }
  Chains out = chains;
  for (auto& c : out)
    for (double& v : c) v = std::abs(v - median);
  return out;
}

double rhat_basic(const Chains& chains) {
  const double n = static_cast<double>(chains[0].size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(variance_of(c));
  }
  const double w = mean_of(vars);
  const double b = chains.size() > 1 ? n * variance_of(means) : 0.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double ess_basic(const Chains& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains[0].size();
  std::vector<double> means(m), acov0(m);
  for (std::size_t j = 0; j < m; ++j) means[j] = mean_of(chains[j]);
  auto acov = [&](std::size_t j, std::size_t lag) {
    const auto& c = chains[j];
    double sum = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) sum += (c[i] - means[j]) * (c[i + lag] - means[j]);
    return sum / static_cast<double>(n);
  };
  for (std::size_t j = 0; j < m; ++j) acov0[j] = acov(j, 0);
  const double dn = static_cast<double>(n);
  const double mean_var = mean_of(acov0) * dn / (dn - 1.0);
  double var_plus = mean_var * (dn - 1.0) / dn;
  if (m > 1) var_plus += variance_of(means);
  auto rho = [&](std::size_t lag) {
    double a = 0.0;
    for (std::size_t j = 0; j < m; ++j) a += acov(j, lag);
    a /= static_cast<double>(m);
    return 1.0 - (mean_var - a) / var_plus;
  };

  // Geyer's initial monotone sequence over pair sums.
  double tau = -1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = (t == 0 ? 1.0 : rho(t)) + rho(t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, previous);
    previous = pair;
    tau += 2.0 * pair;
  }
  const double total = static_cast<double>(m * n);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

}  // namespace

double split_rhat(const Chains& chains) {
  require_shape(chains);
  const Chains s = split(chains);
  if (any_constant(s)) return kNaN;
  const double bulk = rhat_basic(rank_normalize(s));
  const Chains folded = split(fold(chains));
  const double tail = any_constant(folded) ? bulk : rhat_basic(rank_normalize(folded));
  return std::max(bulk, tail);
}

double effective_sample_size(const Chains& chains) {
  require_shape(chains);
  const Chains s = split(chains);
  if (any_constant(s)) return kNaN;
  return ess_basic(s);
}

double bulk_ess(const Chains& chains) {
  require_shape(chains);
  const Chains s = split(chains);
  if (any_constant(s)) return kNaN;
  return ess_basic(rank_normalize(s));
}

double mcse_mean(const Chains& chains) {
  const double ess = effective_sample_size(chains);
  if (!std::isfinite(ess)) return kNaN;
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  return std::sqrt(variance_of(pooled) / ess);
}

Chains column_chains(const PosteriorArchive& archive, const Eigen::MatrixXd& block, int column) {
  Chains out;
  for (int c = 0; c < archive.n_chains; ++c) out.push_back(archive.chain_values(block, column, c));
  return out;
}

std::vector<ParameterDiagnostics> diagnose(const PosteriorArchive& archive, bool include_s) {
  if (archive.draws_per_chain < kMinDiagnosticDraws) {
    throw InputError("diagnostics need at least " + std::to_string(kMinDiagnosticDraws) +
                     " draws per chain (have " + std::to_string(archive.draws_per_chain) + ")");
  }
  std::vector<ParameterDiagnostics> out;
  auto add_block = [&](const Eigen::MatrixXd& block, const std::vector<std::string>& names) {
    for (int col = 0; col < static_cast<int>(names.size()); ++col) {
      const Chains chains = column_chains(archive, block, col);
      std::vector<double> pooled;
      for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
      ParameterDiagnostics d;
      d.name = names[col];
      d.mean = mean_of(pooled);
      d.sd = std::sqrt(variance_of(pooled));
      d.rhat = split_rhat(chains);
      d.ess_bulk = bulk_ess(chains);
      d.ess = effective_sample_size(chains);
      d.mcse = std::isfinite(d.ess) ? d.sd / std::sqrt(d.ess) : kNaN;
      d.degenerate = !std::isfinite(d.rhat);
      out.push_back(d);
    }
  };
  add_block(archive.beta, beta_columns(archive));
  add_block(archive.sigma2, sigma2_columns(archive));
  add_block(archive.phi, phi_columns(archive));
  add_block(archive.rho, rho_columns(archive));
  if (include_s) add_block(archive.s, s_columns(archive));
  return out;
}

}  // namespace jcar
