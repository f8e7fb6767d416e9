#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "jointcar/model.hpp"
#include "jointcar/oracle.hpp"
#include "jointcar/spatial_graph.hpp"

// Generators and reference routines shared by the unit and acceptance tests.
// The references deliberately use different Eigen paths (LU, LLT, dense
// inverses) from the library code they check.
namespace testkit {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline Eigen::MatrixXd gaussian_matrix(Rng& rng, int rows, int cols) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = z(rng);
  return m;
}

inline Eigen::MatrixXd random_lower(Rng& rng, int g) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(g, g);
  for (int i = 0; i < g; ++i) {
    l(i, i) = uniform(rng, 0.5, 1.5);
    for (int j = 0; j < i; ++j) l(i, j) = uniform(rng, -0.5, 0.5);
  }
  return l;
}

inline Eigen::MatrixXd random_spd(Rng& rng, int n) {
  const Eigen::MatrixXd a = gaussian_matrix(rng, n, n);
  return a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::MatrixXd random_orthogonal(Rng& rng, int n) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(rng, n, n));
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
}

// U diag(sv) V^T with singular values drawn from [0, max_sv].
inline Eigen::MatrixXd random_contraction(Rng& rng, int g, double max_sv = 0.95) {
  Eigen::VectorXd sv(g);
  for (int k = 0; k < g; ++k) sv(k) = uniform(rng, 0.0, max_sv);
  return random_orthogonal(rng, g) * sv.asDiagonal() * random_orthogonal(rng, g).transpose();
}

inline jcar::OracleCase random_case(Rng& rng, int max_g = 4, double max_sv = 0.95,
                                    double max_rho = 0.99) {
  jcar::OracleCase c;
  const int g = uniform_int(rng, 1, max_g);
  c.l_pred = random_lower(rng, g);
  c.l_obs1 = random_lower(rng, g);
  c.l_obs2 = random_lower(rng, g);
  c.r = random_contraction(rng, g, max_sv);
  c.rho = uniform(rng, -max_rho, max_rho);
  c.structure = uniform_int(rng, 0, 1) == 0 ? jcar::MissingStructure::Matching
                                            : jcar::MissingStructure::Discrepancy;
  return c;
}

// Covariance of [pred, obs1, obs2] built from the whitened correlation
// pattern and the block-diagonal factor.
inline Eigen::MatrixXd reference_joint(const jcar::OracleCase& c) {
  const int g = c.size();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(g, g);
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(3 * g, 3 * g);
  const bool matching = c.structure == jcar::MissingStructure::Matching;
  const Eigen::MatrixXd pred_obs2 = matching ? Eigen::MatrixXd(c.rho * c.r) : Eigen::MatrixXd(c.rho * id);
  const Eigen::MatrixXd obs1_obs2 =
      matching ? Eigen::MatrixXd(c.rho * id) : Eigen::MatrixXd(c.rho * c.r.transpose());
  w.block(0, g, g, g) = c.r;
  w.block(0, 2 * g, g, g) = pred_obs2;
  w.block(g, 2 * g, g, g) = obs1_obs2;
  w.block(g, 0, g, g) = c.r.transpose();
  w.block(2 * g, 0, g, g) = pred_obs2.transpose();
  w.block(2 * g, g, g, g) = obs1_obs2.transpose();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3 * g, 3 * g);
  d.block(0, 0, g, g) = c.l_pred;
  d.block(g, g, g, g) = c.l_obs1;
  d.block(2 * g, 2 * g, g, g) = c.l_obs2;
  return d * w * d.transpose();
}

struct Conditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Conditioning through an explicit LU inverse of the observed block.
inline Conditional reference_condition(const Eigen::MatrixXd& joint, int n_target,
                                       const Eigen::VectorXd& observed) {
  const int n_obs = static_cast<int>(joint.rows()) - n_target;
  const Eigen::MatrixXd s_to = joint.block(0, n_target, n_target, n_obs);
  const Eigen::MatrixXd s_oo_inv = joint.block(n_target, n_target, n_obs, n_obs).fullPivLu().inverse();
  Conditional out;
  out.mean = s_to * s_oo_inv * observed;
  out.cov = joint.block(0, 0, n_target, n_target) - s_to * s_oo_inv * s_to.transpose();
  return out;
}

// Random connected graph: a shuffled spanning path plus extra edges.
inline jcar::SpatialGraph random_graph(Rng& rng, int n, double extra_edge_prob = 0.3) {
  std::vector<int> order(n);
  for (int k = 0; k < n; ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<jcar::SpatialGraph::Edge> edges;
  for (int k = 0; k + 1 < n; ++k) edges.push_back({order[k], order[k + 1]});
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (uniform(rng, 0.0, 1.0) < extra_edge_prob) edges.push_back({a, b});
  std::vector<std::string> labels;
  for (int k = 0; k < n; ++k) labels.push_back("N" + std::to_string(k));
  jcar::Warnings sink;
  return jcar::SpatialGraph(labels, edges, &sink);
}

// Dense reference for sigma2 (D - phi C)^{-1}.
inline Eigen::MatrixXd reference_car_covariance(const jcar::SpatialGraph& g, double sigma2, double phi) {
  const int n = g.n_locations();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [a, b] : g.edges()) {
    q(a, b) -= phi;
    q(b, a) -= phi;
    q(a, a) += 1.0;
    q(b, b) += 1.0;
  }
  return sigma2 * q.fullPivLu().inverse();
}

// Joint covariance of two CAR populations with correlation rho, using
// Eigen's LLT for the factors.
inline Eigen::MatrixXd reference_joint_car(const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2,
                                           double rho) {
  const int n = static_cast<int>(s1.rows());
  const Eigen::MatrixXd l1 = s1.llt().matrixL();
  const Eigen::MatrixXd l2 = s2.llt().matrixL();
  Eigen::MatrixXd s(2 * n, 2 * n);
  s.block(0, 0, n, n) = s1;
  s.block(n, n, n, n) = s2;
  s.block(0, n, n, n) = rho * l1 * l2.transpose();
  s.block(n, 0, n, n) = s.block(0, n, n, n).transpose();
  return s;
}

// Binomial counts at every cell from per-population J x K logit means.
inline jcar::SurveillancePanel binomial_panel(const jcar::SpatialGraph& g,
                                              const std::vector<Eigen::MatrixXd>& mu, int n,
                                              Rng& rng, int first_year = 2000) {
  std::vector<std::string> pops;
  for (std::size_t i = 0; i < mu.size(); ++i) pops.push_back("P" + std::to_string(i + 1));
  const int years = static_cast<int>(mu[0].cols());
  jcar::SurveillancePanel panel(pops, g.labels(), first_year, years);
  for (int i = 0; i < static_cast<int>(mu.size()); ++i)
    for (int j = 0; j < g.n_locations(); ++j)
      for (int k = 0; k < years; ++k) {
        const int y = std::binomial_distribution<int>(n, jcar::inv_logit(mu[i](j, k)))(rng);
        panel.set_observation(i, j, k, y, n);
      }
  return panel;
}

// mu(j, k) = v(k) + s(j) for a cubic trend beta.
inline Eigen::MatrixXd additive_mu(const Eigen::Vector4d& beta, const Eigen::VectorXd& s, int years) {
  Eigen::MatrixXd mu(s.size(), years);
  for (int k = 0; k < years; ++k)
    for (Eigen::Index j = 0; j < s.size(); ++j) mu(j, k) = jcar::fixed_effect(beta, k + 1) + s(j);
  return mu;
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("jointcar_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace testkit
