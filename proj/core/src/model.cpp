#include "jointcar/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace jcar {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Mixed: return "mixed";
    case ModelKind::Car: return "car";
    case ModelKind::JointCar: return "jointcar";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "mixed") return ModelKind::Mixed;
  if (name == "car") return ModelKind::Car;
  if (name == "jointcar") return ModelKind::JointCar;
  throw InputError("unknown model '" + name + "' (expected mixed|car|jointcar)");
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw InputError("logit: argument must lie strictly inside (0,1)");
  }
  return std::log(p) - std::log1p(-p);
}

double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_inv_logit(double x) {
  // -softplus(-x)
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double log1m_inv_logit(double x) { return log_inv_logit(-x); }

double fixed_effect(const Eigen::Ref<const Eigen::Vector4d>& beta, int k) {
  const double kk = static_cast<double>(k);
  return beta(0) + kk * (beta(1) + kk * (beta(2) + kk * beta(3)));
}

double binomial_log_pmf(int y, int n, double mu) {
  const double log_choose =
      std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
  return log_choose + y * log_inv_logit(mu) + (n - y) * log1m_inv_logit(mu);
}

LatentState LatentState::from(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& s,
                              int n_years) {
  if (beta.rows() != s.rows() || beta.cols() != kTrendTerms) {
    throw InputError("LatentState: beta must be I x 4 with I matching s");
  }
  LatentState st{beta, s, {}};
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::MatrixXd m(s.cols(), n_years);
    const Eigen::Vector4d b = beta.row(i).transpose();
    for (int k = 0; k < n_years; ++k) {
      const double v = fixed_effect(b, k + 1);
      for (Eigen::Index j = 0; j < s.cols(); ++j) m(j, k) = v + s(i, j);
    }
    st.mu.push_back(std::move(m));
  }
  return st;
}

double log_likelihood(const SurveillancePanel& panel, const LatentState& state) {
  if (static_cast<int>(state.mu.size()) != panel.n_populations() ||
      (panel.n_populations() > 0 &&
       (state.mu[0].rows() != panel.n_locations() || state.mu[0].cols() != panel.n_years()))) {
    throw InputError("log_likelihood: state dimensions do not match panel");
  }
  double total = 0.0;
  for (int i = 0; i < panel.n_populations(); ++i) {
    for (int j = 0; j < panel.n_locations(); ++j) {
      for (int k = 0; k < panel.n_years(); ++k) {
        if (!panel.observed(i, j, k)) continue;
        total += binomial_log_pmf(panel.y(i, j, k), panel.n(i, j, k), state.mu[i](j, k));
      }
    }
  }
  return total;
}

double random_effect_log_density(const Eigen::VectorXd& s_flat, const JointCovariance& cov,
                                 ModelKind kind) {
  const int n_pop = cov.n_populations();
  const int j = cov.block_size();
  if (s_flat.size() != static_cast<Eigen::Index>(n_pop) * j) {
    throw InputError("random_effect_log_density: dimension mismatch");
  }
  if (kind == ModelKind::Mixed) {
    for (const auto& s : cov.sigmas) {
      if (!s.isDiagonal()) {
        throw InputError("random_effect_log_density: mixed model needs diagonal covariances");
      }
    }
  }

  Eigen::MatrixXd p_inv = Eigen::MatrixXd::Identity(n_pop, n_pop);
  double log_det = 0.0;
  if (kind == ModelKind::JointCar) {
    const Eigen::MatrixXd lp = cholesky_lower(cov.cross_corr);
    const Eigen::MatrixXd lp_inv =
        lp.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n_pop, n_pop));
    p_inv = lp_inv.transpose() * lp_inv;
    log_det += j * 2.0 * lp.diagonal().array().log().sum();
  }

  std::vector<Eigen::VectorXd> w(n_pop);
  for (int i = 0; i < n_pop; ++i) {
    const auto& l = cov.factors[i];
    w[i] = l.triangularView<Eigen::Lower>().solve(s_flat.segment(i * j, j));
    log_det += 2.0 * l.diagonal().array().log().sum();
  }
  double quad = 0.0;
  for (int a = 0; a < n_pop; ++a) {
    for (int b = 0; b < n_pop; ++b) quad += p_inv(a, b) * w[a].dot(w[b]);
  }
  const double n = static_cast<double>(n_pop) * j;
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + quad);
}

}  // namespace jcar
