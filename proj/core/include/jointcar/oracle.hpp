#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>

namespace jcar {

/// Which cells of population 2 are observed relative to the G locations
/// where population 1 is predicted. Matching: population 2 is missing at
/// the predicted locations too. Discrepancy: population 2 is observed there.
enum class MissingStructure { Matching, Discrepancy };

std::string to_string(MissingStructure s);
MissingStructure parse_structure(const std::string& name);  // matching|discrepancy

/// Two-population Gaussian prediction problem over G locations.
/// l_pred, l_obs1, l_obs2 are lower Cholesky factors of the covariances of
/// the predicted block, population 1's observed block and population 2's
/// observed block; r is the whitened cross-regression matrix.
struct OracleCase {
  Eigen::MatrixXd l_pred;
  Eigen::MatrixXd l_obs1;
  Eigen::MatrixXd l_obs2;
  Eigen::MatrixXd r;
  double rho = 0.0;
  MissingStructure structure = MissingStructure::Matching;

  int size() const { return static_cast<int>(r.rows()); }
  /// Shapes, lower-triangularity, invertible factors, |rho| <= 1 and
  /// largest singular value of r at most 1 + 1e-10. Throws InputError.
  void validate() const;
};

/// Covariance of [mu_pred, mu_obs1, mu_obs2] (3G x 3G).
Eigen::MatrixXd joint_covariance_of_case(const OracleCase& c);

struct GaussianPrediction {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  bool boundary = false;  // evaluated with a pseudo-inverse at |rho| = 1
};

/// Generic conditioning of a zero-mean Gaussian: the first `n_target`
/// coordinates given the remaining ones equal `observed` (Schur complement).
GaussianPrediction condition_gaussian(const Eigen::MatrixXd& joint, int n_target,
                                      const Eigen::VectorXd& observed);

GaussianPrediction predict_matching(const OracleCase& c, const Eigen::VectorXd& mu_obs1);
GaussianPrediction predict_discrepancy(const OracleCase& c, const Eigen::VectorXd& mu_obs1,
                                       const Eigen::VectorXd& mu_obs2);

struct PsdGap {
  Eigen::MatrixXd delta;  // cov_matching - cov_discrepancy
  double min_eigenvalue = 0.0;
};

/// The structure tag of `c` is ignored; both structures are evaluated.
PsdGap psd_gap(const OracleCase& c);

struct NeumannSeries {
  Eigen::MatrixXd sum;
  double tail_bound = 0.0;  // spectral-norm bound on the omitted terms
};

/// Partial sum of sum_{k>=1} rho^{2k} Z^{k-1} (I - Z)^2 with Z = R R^T.
NeumannSeries neumann_gap_series(const OracleCase& c, int n_terms);

struct BlockInverse {
  Eigen::MatrixXd e, f, g, h;
  Eigen::MatrixXd assembled() const;
};

/// Inverse of [[A, B], [C, D]] through the Schur complement of A.
BlockInverse block_inverse_2x2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                               const Eigen::MatrixXd& c, const Eigen::MatrixXd& d);

/// (1/g) (1 - rho^2)^2 / (1 + rho^2).
double fisher_matching_inv(double rho, int g);

/// 1 / Tr(M^2) with M = rho R^T (I - rho^2 R R^T)^{-1} R; +inf when the
/// trace vanishes.
double fisher_discrepancy_inv(double rho, const Eigen::MatrixXd& r);

using S22Builder = std::function<Eigen::MatrixXd(double)>;

/// Whitened covariance of the observed pairs as a function of rho.
S22Builder matching_s22(int g);
S22Builder discrepancy_s22(const Eigen::MatrixXd& r);

/// 1/2 Tr(S^-1 dS S^-1 dS) with dS by central differences. Default step
/// is 1e-5 (1 - rho^2); an explicit step must lie in (0, 1e-3].
double fisher_general(const S22Builder& s22, double rho, std::optional<double> step = {});

}  // namespace jcar
