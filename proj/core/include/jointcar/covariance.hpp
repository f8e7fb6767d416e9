#pragma once

#include <Eigen/Dense>
#include <vector>

#include "jointcar/error.hpp"
#include "jointcar/spatial_graph.hpp"

namespace jcar {

/// Local variance and spatial dependence of one population's CAR prior.
struct CarParams {
  double sigma2 = 1.0;  // > 0
  double phi = 0.5;     // in (0, 1)

  void validate() const;
};

/// Proper CAR precision (D - phi C) / sigma2 with C the raw 0/1 adjacency.
Eigen::MatrixXd car_precision(const SpatialGraph& g, const CarParams& p);

/// sigma2 (D - phi C)^{-1}, symmetric positive definite for phi in (0,1).
Eigen::MatrixXd car_covariance(const SpatialGraph& g, const CarParams& p);

/// Thrown by cholesky_lower; `pivot` is the 0-based failing column.
class NotPositiveDefinite : public NumericalError {
 public:
  explicit NotPositiveDefinite(int pivot);
  int pivot() const { return pivot_; }

 private:
  int pivot_;
};

/// Lower-triangular L with positive diagonal and L L^T = a. Fails when a
/// pivot drops below 1e-12 times the largest diagonal entry.
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a);

/// Non-throwing variant for hot loops; returns false on failure.
bool try_cholesky_lower(const Eigen::MatrixXd& a, Eigen::MatrixXd& l);

double min_eigenvalue(const Eigen::MatrixXd& symmetric);

/// Validates a cross-population correlation matrix (symmetric, unit
/// diagonal, entries in [-1,1], min eigenvalue >= -1e-8) and floors any
/// slightly negative eigenvalues to zero. Throws InputError otherwise.
Eigen::MatrixXd checked_correlation(const Eigen::MatrixXd& p);

/// Per-population covariances Sigma_i = L_i L_i^T plus the cross-population
/// correlation P; the joint covariance has blocks P(i,i') L_i L_i'^T with
/// Sigma_i on the diagonal.
struct JointCovariance {
  std::vector<Eigen::MatrixXd> sigmas;
  std::vector<Eigen::MatrixXd> factors;
  Eigen::MatrixXd cross_corr;
  Eigen::MatrixXd joint;
  bool joint_positive_definite = false;

  int n_populations() const { return static_cast<int>(sigmas.size()); }
  int block_size() const { return sigmas.empty() ? 0 : static_cast<int>(sigmas[0].rows()); }
};

JointCovariance assemble_joint(const std::vector<Eigen::MatrixXd>& sigmas,
                               const Eigen::MatrixXd& cross_corr);

/// BlockDiag(L_1..L_I) as a dense matrix.
Eigen::MatrixXd block_diagonal(const std::vector<Eigen::MatrixXd>& blocks);

/// R = L_pred^{-1} cov_pred_obs L_obs^{-T}. For a jointly PSD covariance all
/// singular values of R are <= 1; exceeding 1 + 1e-10 throws NumericalError.
Eigen::MatrixXd cross_regression_matrix(const Eigen::MatrixXd& l_pred,
                                        const Eigen::MatrixXd& l_obs,
                                        const Eigen::MatrixXd& cov_pred_obs);

}  // namespace jcar
