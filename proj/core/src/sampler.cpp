#include "jointcar/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <numbers>
#include <random>
#include <thread>

#include "jointcar/covariance.hpp"

namespace jcar {

void Priors::validate() const {
  if (!(beta_variance > 0.0)) throw InputError("beta prior variance must be positive");
  if (!(sigma2_shape > 0.0) || !(sigma2_rate > 0.0)) {
    throw InputError("inverse-gamma shape and rate must be positive");
  }
  if (!(phi_lower >= 0.0 && phi_upper <= 1.0 && phi_lower < phi_upper)) {
    throw InputError("phi prior bounds must satisfy 0 <= lower < upper <= 1");
  }
  if (!(rho_lower >= -1.0 && rho_upper <= 1.0 && rho_lower < rho_upper)) {
    throw InputError("rho prior bounds must satisfy -1 <= lower < upper <= 1");
  }
}

void McmcConfig::validate() const {
  if (n_iterations < 1) throw InputError("n_iterations must be positive");
  if (burn_in < 0 || burn_in >= n_iterations) {
    throw InputError("burn_in must satisfy 0 <= burn_in < n_iterations");
  }
  if (thin < 1) throw InputError("thin must be positive");
  if (n_chains < 1) throw InputError("n_chains must be positive");
  if (adapt_until && (*adapt_until < 0 || *adapt_until > n_iterations)) {
    throw InputError("adapt_until must lie in [0, n_iterations]");
  }
  if (workers < 0) throw InputError("workers must be non-negative");
}

std::vector<std::pair<int, int>> PosteriorArchive::rho_pairs() const {
  std::vector<std::pair<int, int>> out;
  if (kind != ModelKind::JointCar) return out;
  for (int a = 0; a < n_populations(); ++a)
    for (int b = a + 1; b < n_populations(); ++b) out.emplace_back(a, b);
  return out;
}

int PosteriorArchive::missing_column(const CellIndex& cell) const {
  const auto it = std::lower_bound(missing_cells.begin(), missing_cells.end(), cell);
  if (it == missing_cells.end() || *it != cell) return -1;
  return static_cast<int>(it - missing_cells.begin());
}

DrawState PosteriorArchive::draw(int row) const {
  const int n_pop = n_populations();
  const int n_loc = n_locations();
  DrawState d;
  d.beta.resize(n_pop, kTrendTerms);
  d.s.resize(n_pop, n_loc);
  d.sigma2.resize(n_pop);
  d.phi = Eigen::VectorXd::Constant(n_pop, 0.5);
  d.rho = Eigen::MatrixXd::Identity(n_pop, n_pop);
  for (int i = 0; i < n_pop; ++i) {
    for (int p = 0; p < kTrendTerms; ++p) d.beta(i, p) = beta(row, i * kTrendTerms + p);
    for (int j = 0; j < n_loc; ++j) d.s(i, j) = s(row, i * n_loc + j);
    d.sigma2(i) = sigma2(row, i);
    if (phi.cols() > 0) d.phi(i) = phi(row, i);
  }
  const auto pairs = rho_pairs();
  for (std::size_t c = 0; c < pairs.size(); ++c) {
    d.rho(pairs[c].first, pairs[c].second) = rho(row, static_cast<Eigen::Index>(c));
    d.rho(pairs[c].second, pairs[c].first) = rho(row, static_cast<Eigen::Index>(c));
  }
  return d;
}

std::vector<double> PosteriorArchive::chain_values(const Eigen::MatrixXd& block, int column,
                                                   int chain_id) const {
  std::vector<double> out;
  out.reserve(draws_per_chain);
  for (int r = 0; r < n_draws(); ++r) {
    if (chain[r] == chain_id) out.push_back(block(r, column));
  }
  return out;
}

namespace {

constexpr double kScalarTarget = 0.44;
constexpr double kBetaTarget = 0.234;
constexpr int kHessianRefresh = 50;
constexpr double kLogStepMin = -20.0;
constexpr double kLogStepMax = 5.0;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct ObservedCell {
  int k;
  int y;
  int n;
};

struct PopulationCell {
  int j;
  int k;
  int y;
  int n;
};

// Read-only inputs shared by all chains.
struct ModelData {
  ModelKind kind = ModelKind::JointCar;
  Priors priors;
  int n_pop = 0;
  int n_loc = 0;
  int n_years = 0;
  Eigen::MatrixXd degree;
  Eigen::MatrixXd adjacency;
  Eigen::MatrixXd design;                         // K x 4
  std::vector<std::vector<ObservedCell>> cells;   // (i*J + j) -> binomial data
  std::vector<std::vector<PopulationCell>> population_cells;
  std::vector<unsigned char> s_fixed;             // ExactLatent: s pinned by data
  Eigen::VectorXd s_fixed_value;
  std::vector<CellIndex> missing;
  ParameterPins pins;
  bool exact_latent = false;
};

struct CarFactor {
  Eigen::MatrixXd l;
  Eigen::MatrixXd l_inv;
  double log_det = 0.0;  // log det L
};

Eigen::MatrixXd lower_inverse(const Eigen::MatrixXd& l) {
  return l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(l.rows(), l.cols()));
}

// Factor of the unit-variance CAR covariance (D - phi C)^{-1}.
bool car_factor(const ModelData& d, double phi, CarFactor& out) {
  if (d.kind == ModelKind::Mixed) {
    out.l = Eigen::MatrixXd::Identity(d.n_loc, d.n_loc);
    out.l_inv = out.l;
    out.log_det = 0.0;
    return true;
  }
  const Eigen::MatrixXd prec = d.degree - phi * d.adjacency;
  Eigen::MatrixXd m;
  if (!try_cholesky_lower(prec, m)) return false;
  const Eigen::MatrixXd m_inv = lower_inverse(m);
  Eigen::MatrixXd sigma = m_inv.transpose() * m_inv;
  sigma = 0.5 * (sigma + sigma.transpose());
  if (!try_cholesky_lower(sigma, out.l)) return false;
  out.l_inv = lower_inverse(out.l);
  out.log_det = out.l.diagonal().array().log().sum();
  return true;
}

struct Counter {
  long accepted = 0;
  long tries = 0;
  void add(bool a) {
    ++tries;
    if (a) ++accepted;
  }
  double rate() const { return tries > 0 ? static_cast<double>(accepted) / tries : std::nan(""); }
};

struct ChainOutput {
  Eigen::MatrixXd beta, sigma2, phi, rho, s, mu_missing;
  std::vector<int> iteration;
  std::map<std::string, double> acceptance;
  std::uint64_t checksum_at_freeze = 0;
  std::uint64_t checksum_final = 0;
  Warnings warnings;
};

void fnv_mix(std::uint64_t& h, double value) {
  unsigned char bytes[sizeof(double)];
  std::memcpy(bytes, &value, sizeof(double));
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
}

class Chain {
 public:
  Chain(const ModelData& data, const McmcConfig& config, int chain_id)
      : d_(data), cfg_(config) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed & 0xffffffffULL),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(chain_id), 0x6a43u};
    rng_.seed(seq);
    initialize();
  }

  ChainOutput run();

 private:
  int index(int i, int j) const { return i * d_.n_loc + j; }
  double normal() { return std_normal_(rng_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  bool accept(double log_ratio) { return std::log(uniform()) < log_ratio; }

  void initialize();
  void check_initial_density() const;
  void refresh_fixed_effects(int i);
  void refresh_gram();
  void rebuild_precision();
  double s_log_prior(const Eigen::VectorXd& sd, const Eigen::VectorXd& log_det_l, double log_det_p,
                     const Eigen::MatrixXd& p_inv, const Eigen::MatrixXd& gram) const;
  double population_log_lik(int i, const Eigen::Vector4d& beta) const;
  void refresh_beta_proposal(int i);

  void update_beta(bool adapting, double gamma);
  void update_s(bool adapting, double gamma);
  void update_shift();
  bool update_sigma2(bool adapting, double gamma);
  bool update_phi(bool adapting, double gamma);
  bool update_rho(bool adapting, double gamma);
  void record(ChainOutput& out, int row, int iter) const;
  std::uint64_t step_checksum() const;

  const ModelData& d_;
  const McmcConfig& cfg_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> std_normal_{0.0, 1.0};

  Eigen::MatrixXd beta_;   // I x 4
  Eigen::MatrixXd v_;      // I x K fixed effects
  Eigen::VectorXd s_;      // I*J, population-major
  Eigen::VectorXd sigma2_;
  Eigen::VectorXd phi_;
  Eigen::MatrixXd p_;      // correlation matrix
  Eigen::MatrixXd p_inv_;
  double log_det_p_ = 0.0;
  std::vector<CarFactor> factors_;
  Eigen::VectorXd log_det_l_;
  std::vector<Eigen::VectorXd> u_;  // L~_i^{-1} s_i
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd q_;      // precision of s
  Eigen::VectorXd qs_;

  // log step sizes
  Eigen::VectorXd log_step_s_;
  Eigen::VectorXd log_step_sigma2_;
  Eigen::VectorXd log_step_phi_;
  Eigen::VectorXd log_step_rho_;
  Eigen::VectorXd log_scale_beta_;
  std::vector<Eigen::MatrixXd> beta_chol_;

  std::vector<std::pair<int, int>> pairs_;
  std::map<std::string, Counter> all_, post_;
  long psd_tries_ = 0;
  long psd_rejects_ = 0;
  bool post_adaptation_ = false;
};

void Chain::initialize() {
  const int n_pop = d_.n_pop, n_loc = d_.n_loc, n_years = d_.n_years;
  const auto& pins = d_.pins;

  beta_ = Eigen::MatrixXd::Zero(n_pop, kTrendTerms);
  if (pins.beta) {
    beta_ = *pins.beta;
  } else {
    // Ridge fit of continuity-corrected empirical logits on the cubic basis.
    for (int i = 0; i < n_pop; ++i) {
      Eigen::Matrix4d xtx = Eigen::Matrix4d::Identity() / d_.priors.beta_variance;
      Eigen::Vector4d xtz = Eigen::Vector4d::Zero();
      for (const auto& c : d_.population_cells[i]) {
        const Eigen::Vector4d x = d_.design.row(c.k).transpose();
        const double z = std::log((c.y + 0.5) / (c.n - c.y + 0.5));
        xtx += x * x.transpose();
        xtz += x * z;
      }
      beta_.row(i) = xtx.ldlt().solve(xtz).transpose();
    }
  }
  v_.resize(n_pop, n_years);
  for (int i = 0; i < n_pop; ++i) refresh_fixed_effects(i);

  s_ = Eigen::VectorXd::Zero(n_pop * n_loc);
  for (int m = 0; m < n_pop * n_loc; ++m) {
    if (d_.s_fixed[m]) s_(m) = d_.s_fixed_value(m);
  }

  sigma2_ = pins.sigma2 ? *pins.sigma2 : Eigen::VectorXd::Ones(n_pop);
  phi_ = pins.phi ? *pins.phi : Eigen::VectorXd::Constant(n_pop, 0.5 * (d_.priors.phi_lower + d_.priors.phi_upper));
  p_ = (pins.rho && d_.kind == ModelKind::JointCar) ? *pins.rho : Eigen::MatrixXd::Identity(n_pop, n_pop);

  factors_.resize(n_pop);
  log_det_l_.resize(n_pop);
  for (int i = 0; i < n_pop; ++i) {
    if (!car_factor(d_, phi_(i), factors_[i])) {
      throw NumericalError("initial CAR covariance not positive definite (phi block)");
    }
    log_det_l_(i) = factors_[i].log_det;
  }
  Eigen::MatrixXd lp;
  if (!try_cholesky_lower(p_, lp)) {
    throw NumericalError("initial cross-population correlation not positive definite (rho block)");
  }
  const Eigen::MatrixXd lp_inv = lower_inverse(lp);
  p_inv_ = lp_inv.transpose() * lp_inv;
  log_det_p_ = 2.0 * lp.diagonal().array().log().sum();

  for (int a = 0; a < n_pop; ++a)
    for (int b = a + 1; b < n_pop; ++b) pairs_.emplace_back(a, b);

  u_.resize(n_pop);
  refresh_gram();
  rebuild_precision();

  log_step_s_.resize(n_pop * n_loc);
  for (int m = 0; m < n_pop * n_loc; ++m) {
    double info = q_(m, m);
    const int i = m / n_loc;
    for (const auto& c : d_.cells[m]) {
      const double p = inv_logit(v_(i, c.k) + s_(m));
      info += c.n * p * (1.0 - p);
    }
    log_step_s_(m) = std::clamp(-0.5 * std::log(info), kLogStepMin, kLogStepMax);
  }
  log_step_sigma2_ = Eigen::VectorXd::Constant(n_pop, std::log(0.5));
  log_step_phi_ = Eigen::VectorXd::Constant(n_pop, 0.0);
  log_step_rho_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(pairs_.size()), std::log(0.1));
  log_scale_beta_ = Eigen::VectorXd::Constant(n_pop, std::log(2.38 / 2.0));
  beta_chol_.resize(n_pop);
  for (int i = 0; i < n_pop; ++i) refresh_beta_proposal(i);

  check_initial_density();
}

void Chain::check_initial_density() const {
  for (int i = 0; i < d_.n_pop; ++i) {
    const Eigen::Vector4d b = beta_.row(i).transpose();
    if (!std::isfinite(population_log_lik(i, b))) {
      throw NumericalError("non-finite log-likelihood at initialization (beta block, population " +
                           std::to_string(i) + ")");
    }
    if (!std::isfinite(b.squaredNorm())) {
      throw NumericalError("non-finite beta prior at initialization (beta block)");
    }
    if (!(sigma2_(i) > 0.0) || !std::isfinite(sigma2_(i))) {
      throw NumericalError("sigma2 outside support at initialization (sigma2 block)");
    }
  }
  const Eigen::VectorXd sd = sigma2_.cwiseSqrt();
  if (!std::isfinite(s_log_prior(sd, log_det_l_, log_det_p_, p_inv_, gram_))) {
    throw NumericalError("non-finite random-effect prior at initialization (s block)");
  }
}

void Chain::refresh_fixed_effects(int i) {
  v_.row(i) = (d_.design * beta_.row(i).transpose()).transpose();
}

void Chain::refresh_gram() {
  const int n_loc = d_.n_loc;
  for (int i = 0; i < d_.n_pop; ++i) {
    u_[i] = factors_[i].l_inv.triangularView<Eigen::Lower>() * s_.segment(i * n_loc, n_loc);
  }
  gram_.resize(d_.n_pop, d_.n_pop);
  for (int a = 0; a < d_.n_pop; ++a)
    for (int b = a; b < d_.n_pop; ++b) gram_(a, b) = gram_(b, a) = u_[a].dot(u_[b]);
}

void Chain::rebuild_precision() {
  const int n_pop = d_.n_pop, n_loc = d_.n_loc;
  q_.setZero(n_pop * n_loc, n_pop * n_loc);
  const Eigen::VectorXd sd = sigma2_.cwiseSqrt();
  for (int a = 0; a < n_pop; ++a) {
    for (int b = 0; b < n_pop; ++b) {
      if (a != b && (d_.kind != ModelKind::JointCar || p_inv_(a, b) == 0.0)) continue;
      q_.block(a * n_loc, b * n_loc, n_loc, n_loc) =
          (p_inv_(a, b) / (sd(a) * sd(b))) * (factors_[a].l_inv.transpose() * factors_[b].l_inv);
    }
  }
  qs_ = q_ * s_;
}

double Chain::s_log_prior(const Eigen::VectorXd& sd, const Eigen::VectorXd& log_det_l,
                          double log_det_p, const Eigen::MatrixXd& p_inv,
                          const Eigen::MatrixXd& gram) const {
  const int n_pop = d_.n_pop, n_loc = d_.n_loc;
  double log_det = n_loc * log_det_p;
  for (int i = 0; i < n_pop; ++i) log_det += 2.0 * log_det_l(i) + 2.0 * n_loc * std::log(sd(i));
  double quad = 0.0;
  for (int a = 0; a < n_pop; ++a) {
    quad += p_inv(a, a) * gram(a, a) / (sd(a) * sd(a));
    if (d_.kind != ModelKind::JointCar) continue;
    for (int b = a + 1; b < n_pop; ++b) quad += 2.0 * p_inv(a, b) * gram(a, b) / (sd(a) * sd(b));
  }
  return -0.5 * (log_det + quad);
}

double Chain::population_log_lik(int i, const Eigen::Vector4d& beta) const {
  double ll = 0.0;
  for (const auto& c : d_.population_cells[i]) {
    const double mu = d_.design.row(c.k).dot(beta) + s_(index(i, c.j));
    ll += c.y * mu - c.n * softplus(mu);
  }
  return ll;
}

void Chain::refresh_beta_proposal(int i) {
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity() / d_.priors.beta_variance;
  for (const auto& c : d_.population_cells[i]) {
    const Eigen::Vector4d x = d_.design.row(c.k).transpose();
    const double p = inv_logit(v_(i, c.k) + s_(index(i, c.j)));
    h += c.n * p * (1.0 - p) * x * x.transpose();
  }
  const Eigen::Matrix4d cov = h.ldlt().solve(Eigen::Matrix4d::Identity());
  Eigen::LLT<Eigen::Matrix4d> llt(0.5 * (cov + cov.transpose()));
  if (llt.info() == Eigen::Success) beta_chol_[i] = llt.matrixL();
  else if (beta_chol_[i].size() == 0) beta_chol_[i] = Eigen::Matrix4d::Identity();
}

void adapt_step(double& log_step, bool accepted, double target, double gamma) {
  log_step = std::clamp(log_step + gamma * ((accepted ? 1.0 : 0.0) - target), kLogStepMin, kLogStepMax);
}

void Chain::update_beta(bool adapting, double gamma) {
  if (d_.pins.beta) return;
  const double inv_var = 1.0 / d_.priors.beta_variance;
  for (int i = 0; i < d_.n_pop; ++i) {
    const Eigen::Vector4d current = beta_.row(i).transpose();
    Eigen::Vector4d z;
    for (int p = 0; p < kTrendTerms; ++p) z(p) = normal();
    const Eigen::Vector4d proposal = current + std::exp(log_scale_beta_(i)) * (beta_chol_[i] * z);
    const double log_ratio = population_log_lik(i, proposal) - population_log_lik(i, current) -
                             0.5 * inv_var * (proposal.squaredNorm() - current.squaredNorm());
    const bool ok = accept(log_ratio);
    if (ok) {
      beta_.row(i) = proposal.transpose();
      refresh_fixed_effects(i);
    }
    all_["beta"].add(ok);
    if (post_adaptation_) post_["beta"].add(ok);
    if (adapting) adapt_step(log_scale_beta_(i), ok, kBetaTarget, gamma);
  }
}

void Chain::update_s(bool adapting, double gamma) {
  const int n_pop = d_.n_pop, n_loc = d_.n_loc;
  for (int i = 0; i < n_pop; ++i) {
    for (int j = 0; j < n_loc; ++j) {
      const int m = index(i, j);
      if (d_.s_fixed[m]) continue;
      const double q_mm = q_(m, m);
      double delta = 0.0;
      if (d_.cells[m].empty()) {
        // No data at this (population, location): exact draw from the
        // Gaussian full conditional.
        const double mean = s_(m) - qs_(m) / q_mm;
        delta = mean + normal() / std::sqrt(q_mm) - s_(m);
      } else {
        const double step = std::exp(log_step_s_(m)) * normal();
        double log_ratio = -(step * qs_(m) + 0.5 * step * step * q_mm);
        for (const auto& c : d_.cells[m]) {
          const double mu = v_(i, c.k) + s_(m);
          log_ratio += c.y * step - c.n * (softplus(mu + step) - softplus(mu));
        }
        const bool ok = accept(log_ratio);
        all_["s"].add(ok);
        if (post_adaptation_) post_["s"].add(ok);
        if (adapting) adapt_step(log_step_s_(m), ok, kScalarTarget, gamma);
        if (ok) delta = step;
      }
      if (delta != 0.0) {
        s_(m) += delta;
        qs_.noalias() += delta * q_.col(m);
      }
    }
  }
}

// Moves (beta_i0 + d, s_i - d): every mu is unchanged, so only the priors
// depend on d and its conditional is Gaussian. Breaks the slow ridge between
// the intercept and the level of s.
void Chain::update_shift() {
  if (d_.pins.beta || d_.exact_latent) return;
  const int n_loc = d_.n_loc;
  const double inv_var = 1.0 / d_.priors.beta_variance;
  for (int i = 0; i < d_.n_pop; ++i) {
    const Eigen::VectorXd q_ones = q_.middleCols(i * n_loc, n_loc).rowwise().sum();
    const double precision = inv_var + q_ones.segment(i * n_loc, n_loc).sum();
    const double linear = -beta_(i, 0) * inv_var + qs_.segment(i * n_loc, n_loc).sum();
    const double delta = linear / precision + normal() / std::sqrt(precision);
    beta_(i, 0) += delta;
    refresh_fixed_effects(i);
    s_.segment(i * n_loc, n_loc).array() -= delta;
    qs_.noalias() -= delta * q_ones;
  }
}

bool Chain::update_sigma2(bool adapting, double gamma) {
  if (d_.pins.sigma2) return false;
  const double a = d_.priors.sigma2_shape, b = d_.priors.sigma2_rate;
  if (d_.kind == ModelKind::Mixed) {
    for (int i = 0; i < d_.n_pop; ++i) {
      const double shape = a + 0.5 * d_.n_loc;
      const double rate = b + 0.5 * gram_(i, i);
      const double precision = std::gamma_distribution<double>(shape, 1.0 / rate)(rng_);
      sigma2_(i) = 1.0 / precision;
    }
    return true;
  }
  bool changed = false;
  Eigen::VectorXd sd = sigma2_.cwiseSqrt();
  double current_lp = s_log_prior(sd, log_det_l_, log_det_p_, p_inv_, gram_);
  for (int i = 0; i < d_.n_pop; ++i) {
    const double tau = std::log(sigma2_(i));
    const double tau_new = tau + std::exp(log_step_sigma2_(i)) * normal();
    Eigen::VectorXd sd_new = sd;
    sd_new(i) = std::exp(0.5 * tau_new);
    const double lp_new = s_log_prior(sd_new, log_det_l_, log_det_p_, p_inv_, gram_);
    // inverse-gamma prior on sigma2 plus the log-scale Jacobian
    const double prior_new = -a * tau_new - b * std::exp(-tau_new);
    const double prior_old = -a * tau - b * std::exp(-tau);
    const bool ok = std::isfinite(lp_new) && accept(lp_new - current_lp + prior_new - prior_old);
    if (ok) {
      sigma2_(i) = std::exp(tau_new);
      sd = sd_new;
      current_lp = lp_new;
      changed = true;
    }
    all_["sigma2"].add(ok);
    if (post_adaptation_) post_["sigma2"].add(ok);
    if (adapting) adapt_step(log_step_sigma2_(i), ok, kScalarTarget, gamma);
  }
  return changed;
}

bool Chain::update_phi(bool adapting, double gamma) {
  if (d_.kind == ModelKind::Mixed || d_.pins.phi) return false;
  const double lo = d_.priors.phi_lower, hi = d_.priors.phi_upper;
  const int n_loc = d_.n_loc;
  bool changed = false;
  const Eigen::VectorXd sd = sigma2_.cwiseSqrt();
  double current_lp = s_log_prior(sd, log_det_l_, log_det_p_, p_inv_, gram_);
  for (int i = 0; i < d_.n_pop; ++i) {
    const double x = std::log((phi_(i) - lo) / (hi - phi_(i)));
    const double x_new = x + std::exp(log_step_phi_(i)) * normal();
    const double phi_new = lo + (hi - lo) * inv_logit(x_new);
    bool ok = false;
    CarFactor f;
    if (phi_new > lo && phi_new < hi && car_factor(d_, phi_new, f)) {
      const Eigen::VectorXd u_new = f.l_inv.triangularView<Eigen::Lower>() * s_.segment(i * n_loc, n_loc);
      Eigen::MatrixXd gram_new = gram_;
      for (int b = 0; b < d_.n_pop; ++b) {
        gram_new(i, b) = gram_new(b, i) = (b == i) ? u_new.squaredNorm() : u_new.dot(u_[b]);
      }
      Eigen::VectorXd log_det_new = log_det_l_;
      log_det_new(i) = f.log_det;
      const double lp_new = s_log_prior(sd, log_det_new, log_det_p_, p_inv_, gram_new);
      const double jac_new = std::log(phi_new - lo) + std::log(hi - phi_new);
      const double jac_old = std::log(phi_(i) - lo) + std::log(hi - phi_(i));
      ok = std::isfinite(lp_new) && accept(lp_new - current_lp + jac_new - jac_old);
      if (ok) {
        phi_(i) = phi_new;
        factors_[i] = std::move(f);
        log_det_l_ = log_det_new;
        u_[i] = u_new;
        gram_ = gram_new;
        current_lp = lp_new;
        changed = true;
      }
    }
    all_["phi"].add(ok);
    if (post_adaptation_) post_["phi"].add(ok);
    if (adapting) adapt_step(log_step_phi_(i), ok, kScalarTarget, gamma);
  }
  return changed;
}

bool Chain::update_rho(bool adapting, double gamma) {
  if (d_.kind != ModelKind::JointCar || d_.pins.rho) return false;
  const Eigen::VectorXd sd = sigma2_.cwiseSqrt();
  double current_lp = s_log_prior(sd, log_det_l_, log_det_p_, p_inv_, gram_);
  bool changed = false;
  for (std::size_t c = 0; c < pairs_.size(); ++c) {
    const auto [a, b] = pairs_[c];
    const double rho_new = p_(a, b) + std::exp(log_step_rho_(c)) * normal();
    bool ok = false;
    if (rho_new > d_.priors.rho_lower && rho_new < d_.priors.rho_upper) {
      Eigen::MatrixXd p_new = p_;
      p_new(a, b) = p_new(b, a) = rho_new;
      Eigen::MatrixXd lp;
      if (adapting) ++psd_tries_;
      if (try_cholesky_lower(p_new, lp)) {
        const Eigen::MatrixXd lp_inv = lower_inverse(lp);
        const Eigen::MatrixXd p_inv_new = lp_inv.transpose() * lp_inv;
        const double log_det_new = 2.0 * lp.diagonal().array().log().sum();
        const double lp_new = s_log_prior(sd, log_det_l_, log_det_new, p_inv_new, gram_);
        ok = std::isfinite(lp_new) && accept(lp_new - current_lp);
        if (ok) {
          p_ = p_new;
          p_inv_ = p_inv_new;
          log_det_p_ = log_det_new;
          current_lp = lp_new;
          changed = true;
        }
      } else if (adapting) {
        ++psd_rejects_;
      }
    }
    all_["rho"].add(ok);
    if (post_adaptation_) post_["rho"].add(ok);
    if (adapting) adapt_step(log_step_rho_(c), ok, kScalarTarget, gamma);
  }
  return changed;
}

std::uint64_t Chain::step_checksum() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const Eigen::VectorXd* v :
       {&log_step_s_, &log_step_sigma2_, &log_step_phi_, &log_step_rho_, &log_scale_beta_}) {
    for (Eigen::Index k = 0; k < v->size(); ++k) fnv_mix(h, (*v)(k));
  }
  for (const auto& m : beta_chol_)
    for (Eigen::Index k = 0; k < m.size(); ++k) fnv_mix(h, m.data()[k]);
  return h;
}

void Chain::record(ChainOutput& out, int row, int iter) const {
  const int n_pop = d_.n_pop, n_loc = d_.n_loc;
  out.iteration[row] = iter;
  for (int i = 0; i < n_pop; ++i) {
    for (int p = 0; p < kTrendTerms; ++p) out.beta(row, i * kTrendTerms + p) = beta_(i, p);
    out.sigma2(row, i) = sigma2_(i);
    if (out.phi.cols() > 0) out.phi(row, i) = phi_(i);
  }
  if (out.rho.cols() > 0) {
    for (std::size_t c = 0; c < pairs_.size(); ++c) {
      out.rho(row, static_cast<Eigen::Index>(c)) = p_(pairs_[c].first, pairs_[c].second);
    }
  }
  out.s.row(row) = s_.transpose();
  for (std::size_t c = 0; c < d_.missing.size(); ++c) {
    const auto& cell = d_.missing[c];
    out.mu_missing(row, static_cast<Eigen::Index>(c)) =
        v_(cell.population, cell.year) + s_(index(cell.population, cell.location));
  }
  (void)n_loc;
}

ChainOutput Chain::run() {
  const int n_pop = d_.n_pop, n_loc = d_.n_loc;
  const int draws = cfg_.draws_per_chain();
  const int adapt_end = cfg_.adaptation_end();
  ChainOutput out;
  out.beta.resize(draws, n_pop * kTrendTerms);
  out.sigma2.resize(draws, n_pop);
  out.phi.resize(draws, d_.kind == ModelKind::Mixed ? 0 : n_pop);
  out.rho.resize(draws, d_.kind == ModelKind::JointCar ? static_cast<Eigen::Index>(pairs_.size()) : 0);
  out.s.resize(draws, n_pop * n_loc);
  out.mu_missing.resize(draws, static_cast<Eigen::Index>(d_.missing.size()));
  out.iteration.resize(draws);

  if (adapt_end == 0) out.checksum_at_freeze = step_checksum();
  int row = 0;
  for (int t = 1; t <= cfg_.n_iterations; ++t) {
    const bool adapting = t <= adapt_end;
    post_adaptation_ = !adapting;
    const double gamma = adapting ? std::pow(static_cast<double>(t), -0.6) : 0.0;

    update_beta(adapting, gamma);
    update_s(adapting, gamma);
    update_shift();
    refresh_gram();
    bool changed = update_sigma2(adapting, gamma);
    changed = update_phi(adapting, gamma) || changed;
    changed = update_rho(adapting, gamma) || changed;
    if (changed) rebuild_precision();

    if (adapting && t % kHessianRefresh == 0) {
      for (int i = 0; i < n_pop; ++i) refresh_beta_proposal(i);
    }
    if (t == adapt_end) out.checksum_at_freeze = step_checksum();

    if (t > cfg_.burn_in && (t - cfg_.burn_in) % cfg_.thin == 0 && row < draws) {
      record(out, row, t);
      ++row;
    }
  }
  out.checksum_final = step_checksum();

  for (const auto& [block, counter] : all_) {
    const auto it = post_.find(block);
    out.acceptance[block] = (it != post_.end() && it->second.tries > 0) ? it->second.rate()
                                                                       : counter.rate();
  }
  if (psd_tries_ > 0 && static_cast<double>(psd_rejects_) / psd_tries_ > 0.99) {
    out.warnings.push_back("cross-correlation proposals nearly always invalid");
  }
  return out;
}

ModelData prepare(const SurveillancePanel& panel, const SpatialGraph& graph, ModelKind kind,
                  const Priors& priors, const FitOptions& options) {
  ModelData d;
  d.kind = kind;
  d.priors = priors;
  d.n_pop = panel.n_populations();
  d.n_loc = panel.n_locations();
  d.n_years = panel.n_years();
  d.pins = options.pins;
  d.exact_latent = options.observation == ObservationModel::ExactLatent;

  if (panel.location_labels() != graph.labels()) {
    throw InputError("panel locations do not match graph locations");
  }
  const auto da = degree_and_adjacency(graph);
  d.degree = da.degree;
  d.adjacency = da.adjacency;
  d.design.resize(d.n_years, kTrendTerms);
  for (int k = 0; k < d.n_years; ++k) {
    const double kk = k + 1.0;
    d.design.row(k) << 1.0, kk, kk * kk, kk * kk * kk;
  }

  const int n_pop = d.n_pop, n_loc = d.n_loc;
  const auto& pins = d.pins;
  if (pins.beta && (pins.beta->rows() != n_pop || pins.beta->cols() != kTrendTerms)) {
    throw InputError("pinned beta must be I x 4");
  }
  if (pins.sigma2) {
    if (pins.sigma2->size() != n_pop) throw InputError("pinned sigma2 must have length I");
    if ((pins.sigma2->array() <= 0.0).any()) throw InputError("pinned sigma2 must be positive");
  }
  if (pins.phi) {
    if (pins.phi->size() != n_pop) throw InputError("pinned phi must have length I");
    if ((pins.phi->array() <= priors.phi_lower).any() || (pins.phi->array() >= priors.phi_upper).any()) {
      throw InputError("pinned phi outside prior support");
    }
  }
  if (pins.rho) {
    if (pins.rho->rows() != n_pop || pins.rho->cols() != n_pop) {
      throw InputError("pinned rho must be an I x I correlation matrix");
    }
    checked_correlation(*pins.rho);
    Eigen::MatrixXd scratch;
    if (kind == ModelKind::JointCar && !try_cholesky_lower(*pins.rho, scratch)) {
      throw InputError("pinned rho must be positive definite");
    }
  }

  d.cells.assign(n_pop * n_loc, {});
  d.population_cells.assign(n_pop, {});
  d.s_fixed.assign(n_pop * n_loc, 0);
  d.s_fixed_value = Eigen::VectorXd::Zero(n_pop * n_loc);

  if (d.exact_latent) {
    if (!pins.beta) throw InputError("exact-latent observation model requires pinned beta");
    if (static_cast<int>(options.exact_mu.size()) != n_pop) {
      throw InputError("exact-latent observation model needs mu for every population");
    }
    for (int i = 0; i < n_pop; ++i) {
      if (options.exact_mu[i].rows() != n_loc || options.exact_mu[i].cols() != d.n_years) {
        throw InputError("exact mu must be J x K per population");
      }
      const Eigen::Vector4d b = pins.beta->row(i).transpose();
      for (int j = 0; j < n_loc; ++j) {
        double sum = 0.0;
        int count = 0;
        for (int k = 0; k < d.n_years; ++k) {
          if (!panel.observed(i, j, k)) continue;
          sum += options.exact_mu[i](j, k) - fixed_effect(b, k + 1);
          ++count;
        }
        if (count > 0) {
          d.s_fixed[i * n_loc + j] = 1;
          d.s_fixed_value(i * n_loc + j) = sum / count;
        }
      }
    }
  } else {
    for (const auto& c : panel.observed_cells()) {
      const int y = panel.y(c.population, c.location, c.year);
      const int n = panel.n(c.population, c.location, c.year);
      d.cells[c.population * n_loc + c.location].push_back({c.year, y, n});
      d.population_cells[c.population].push_back({c.location, c.year, y, n});
    }
  }

  if (!options.allow_empty_panel) {
    for (int i = 0; i < n_pop; ++i) {
      bool any = false;
      for (int j = 0; j < n_loc && !any; ++j)
        for (int k = 0; k < d.n_years && !any; ++k) any = panel.observed(i, j, k);
      if (!any) {
        throw InputError("population " + panel.population_labels()[i] + " has no observed cells");
      }
    }
  }
  d.missing = panel.missing_cells();
  return d;
}

}  // namespace

PosteriorArchive fit(const SurveillancePanel& panel, const SpatialGraph& graph, ModelKind kind,
                     const Priors& priors, const McmcConfig& config, const FitOptions& options) {
  priors.validate();
  config.validate();
  const ModelData data = prepare(panel, graph, kind, priors, options);

  std::vector<ChainOutput> outputs(config.n_chains);
  std::vector<std::exception_ptr> errors(config.n_chains);
  int workers = config.workers > 0 ? config.workers
                                   : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, config.n_chains);
  auto run_chain = [&](int c) {
    try {
      Chain chain(data, config, c);
      outputs[c] = chain.run();
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (workers <= 1) {
    for (int c = 0; c < config.n_chains; ++c) run_chain(c);
  } else {
    for (int start = 0; start < config.n_chains; start += workers) {
      std::vector<std::thread> threads;
      for (int c = start; c < std::min(config.n_chains, start + workers); ++c) {
        threads.emplace_back(run_chain, c);
      }
      for (auto& t : threads) t.join();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  PosteriorArchive a;
  a.kind = kind;
  a.priors = priors;
  a.config = config;
  a.population_labels = panel.population_labels();
  a.location_labels = panel.location_labels();
  a.first_year = panel.first_year();
  a.n_years = panel.n_years();
  a.missing_cells = data.missing;
  if (options.pins.beta) a.pinned_blocks.push_back("beta");
  if (options.pins.sigma2) a.pinned_blocks.push_back("sigma2");
  if (options.pins.phi && kind != ModelKind::Mixed) a.pinned_blocks.push_back("phi");
  if (options.pins.rho && kind == ModelKind::JointCar) a.pinned_blocks.push_back("rho");
  a.n_chains = config.n_chains;
  a.draws_per_chain = config.draws_per_chain();

  const int total = a.n_chains * a.draws_per_chain;
  auto stack = [&](auto member) {
    const Eigen::Index cols = (outputs[0].*member).cols();
    Eigen::MatrixXd m(total, cols);
    for (int c = 0; c < a.n_chains; ++c) {
      m.middleRows(static_cast<Eigen::Index>(c) * a.draws_per_chain, a.draws_per_chain) =
          outputs[c].*member;
    }
    return m;
  };
  a.beta = stack(&ChainOutput::beta);
  a.sigma2 = stack(&ChainOutput::sigma2);
  a.phi = stack(&ChainOutput::phi);
  a.rho = stack(&ChainOutput::rho);
  a.s = stack(&ChainOutput::s);
  a.mu_missing = stack(&ChainOutput::mu_missing);
  for (int c = 0; c < a.n_chains; ++c) {
    for (int r = 0; r < a.draws_per_chain; ++r) {
      a.chain.push_back(c);
      a.iteration.push_back(outputs[c].iteration[r]);
    }
    for (const auto& [block, rate] : outputs[c].acceptance) a.acceptance[block].push_back(rate);
    a.step_checksum_at_freeze.push_back(outputs[c].checksum_at_freeze);
    a.step_checksum_final.push_back(outputs[c].checksum_final);
    for (const auto& w : outputs[c].warnings) {
      const std::string msg = "chain " + std::to_string(c) + ": " + w;
      a.warnings.push_back(msg);
      emit_warning(options.warnings, msg);
    }
  }
  return a;
}

double log_posterior_density(const SurveillancePanel& panel, const SpatialGraph& graph,
                             ModelKind kind, const Priors& priors, const DrawState& draw) {
  const int n_pop = panel.n_populations(), n_loc = panel.n_locations();
  double total = log_likelihood(panel, LatentState::from(draw.beta, draw.s, panel.n_years()));

  std::vector<Eigen::MatrixXd> sigmas;
  for (int i = 0; i < n_pop; ++i) {
    if (kind == ModelKind::Mixed) {
      sigmas.push_back(draw.sigma2(i) * Eigen::MatrixXd::Identity(n_loc, n_loc));
    } else {
      sigmas.push_back(car_covariance(graph, {draw.sigma2(i), draw.phi(i)}));
    }
  }
  const Eigen::MatrixXd p =
      kind == ModelKind::JointCar ? draw.rho : Eigen::MatrixXd::Identity(n_pop, n_pop);
  const JointCovariance cov = assemble_joint(sigmas, p);
  Eigen::VectorXd s_flat(n_pop * n_loc);
  for (int i = 0; i < n_pop; ++i) s_flat.segment(i * n_loc, n_loc) = draw.s.row(i).transpose();
  total += random_effect_log_density(s_flat, cov, kind);

  const double v = priors.beta_variance;
  total += -0.5 * draw.beta.size() * std::log(2.0 * std::numbers::pi * v) -
           0.5 * draw.beta.squaredNorm() / v;
  const double a = priors.sigma2_shape, b = priors.sigma2_rate;
  for (int i = 0; i < n_pop; ++i) {
    total += a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(draw.sigma2(i)) -
             b / draw.sigma2(i);
  }
  if (kind != ModelKind::Mixed) total -= n_pop * std::log(priors.phi_upper - priors.phi_lower);
  if (kind == ModelKind::JointCar) {
    total -= 0.5 * n_pop * (n_pop - 1) * std::log(priors.rho_upper - priors.rho_lower);
  }
  return total;
}

double empirical_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw InputError("empirical_quantile: no values");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

PredictiveSummary posterior_predictive_p(const PosteriorArchive& archive, const CellIndex& cell,
                                         int n_holdout, std::uint64_t seed) {
  const int col = archive.missing_column(cell);
  if (col < 0) throw InputError("cell was observed during fitting; no predictive draws exist");
  if (n_holdout < 1) throw InputError("n_holdout must be at least 1");
  if (archive.n_draws() == 0) throw InputError("archive has no draws");
  std::mt19937_64 rng(seed);
  PredictiveSummary out;
  out.p_draws.reserve(archive.n_draws());
  out.p_tilde.reserve(archive.n_draws());
  double sum = 0.0;
  for (int r = 0; r < archive.n_draws(); ++r) {
    const double p = inv_logit(archive.mu_missing(r, col));
    sum += p;
    out.p_draws.push_back(p);
    const int y = std::binomial_distribution<int>(n_holdout, p)(rng);
    out.p_tilde.push_back(static_cast<double>(y) / n_holdout);
  }
  out.p_mean = sum / archive.n_draws();
  out.lower = empirical_quantile(out.p_tilde, 0.005);
  out.upper = empirical_quantile(out.p_tilde, 0.995);
  return out;
}

}  // namespace jcar
