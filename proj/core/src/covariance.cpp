#include "jointcar/covariance.hpp"

#include <cmath>
#include <string>

namespace jcar {

void CarParams::validate() const {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw InputError("CAR variance must be positive, got " + std::to_string(sigma2));
  }
  if (!(phi > 0.0 && phi < 1.0)) {
    throw InputError("CAR spatial parameter must lie in (0,1), got " + std::to_string(phi));
  }
}

Eigen::MatrixXd car_precision(const SpatialGraph& g, const CarParams& p) {
  p.validate();
  const auto da = degree_and_adjacency(g);
  return (da.degree - p.phi * da.adjacency) / p.sigma2;
}

Eigen::MatrixXd car_covariance(const SpatialGraph& g, const CarParams& p) {
  p.validate();
  const auto da = degree_and_adjacency(g);
  const Eigen::MatrixXd prec = da.degree - p.phi * da.adjacency;
  const Eigen::MatrixXd m = cholesky_lower(prec);
  const Eigen::Index n = prec.rows();
  // prec^{-1} = M^{-T} M^{-1}
  Eigen::MatrixXd minv = m.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd sigma = p.sigma2 * (minv.transpose() * minv);
  return 0.5 * (sigma + sigma.transpose());
}

NotPositiveDefinite::NotPositiveDefinite(int pivot)
    : NumericalError("matrix not positive definite at pivot " + std::to_string(pivot)),
      pivot_(pivot) {}

namespace {

// Returns -1 on success, else the failing pivot.
int cholesky_impl(const Eigen::MatrixXd& a, Eigen::MatrixXd& l) {
  const Eigen::Index n = a.rows();
  l.setZero(n, n);
  const double tol = 1e-12 * a.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > tol)) return static_cast<int>(j);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return -1;
}

}  // namespace

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw InputError("cholesky_lower: matrix not square");
  if (a.size() == 0) return a;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw InputError("cholesky_lower: matrix not symmetric");
  }
  Eigen::MatrixXd l;
  if (const int pivot = cholesky_impl(a, l); pivot >= 0) throw NotPositiveDefinite(pivot);
  return l;
}

bool try_cholesky_lower(const Eigen::MatrixXd& a, Eigen::MatrixXd& l) {
  return cholesky_impl(a, l) < 0;
}

double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Eigen::MatrixXd checked_correlation(const Eigen::MatrixXd& p) {
  if (p.rows() != p.cols() || p.rows() == 0) {
    throw InputError("cross-population correlation matrix must be square and non-empty");
  }
  const Eigen::Index n = p.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(p(i, i) - 1.0) > 1e-12) {
      throw InputError("cross-population correlation matrix must have unit diagonal");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(p(i, j) - p(j, i)) > 1e-12) {
        throw InputError("cross-population correlation matrix not symmetric");
      }
      if (std::abs(p(i, j)) > 1.0 + 1e-12) {
        throw InputError("cross-population correlation outside [-1,1]");
      }
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
  const double lo = es.eigenvalues().minCoeff();
  if (lo < -1e-8) {
    throw InputError("cross-population correlation matrix not positive semi-definite");
  }
  if (lo >= 0.0) return p;
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd floored = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::VectorXd scale = floored.diagonal().cwiseSqrt().cwiseInverse();
  floored = scale.asDiagonal() * floored * scale.asDiagonal();
  return 0.5 * (floored + floored.transpose());
}

JointCovariance assemble_joint(const std::vector<Eigen::MatrixXd>& sigmas,
                               const Eigen::MatrixXd& cross_corr) {
  if (sigmas.empty()) throw InputError("assemble_joint: no populations");
  const Eigen::Index n_pop = static_cast<Eigen::Index>(sigmas.size());
  const Eigen::Index j = sigmas[0].rows();
  for (const auto& s : sigmas) {
    if (s.rows() != j || s.cols() != j) {
      throw InputError("assemble_joint: per-population covariances differ in size");
    }
  }
  if (cross_corr.rows() != n_pop) {
    throw InputError("assemble_joint: correlation matrix size does not match populations");
  }
  JointCovariance out;
  out.cross_corr = checked_correlation(cross_corr);
  out.sigmas = sigmas;
  for (const auto& s : sigmas) out.factors.push_back(cholesky_lower(s));

  out.joint.resize(n_pop * j, n_pop * j);
  for (Eigen::Index a = 0; a < n_pop; ++a) {
    out.joint.block(a * j, a * j, j, j) = sigmas[a];
    for (Eigen::Index b = a + 1; b < n_pop; ++b) {
      const Eigen::MatrixXd cross =
          out.cross_corr(a, b) * out.factors[a] * out.factors[b].transpose();
      out.joint.block(a * j, b * j, j, j) = cross;
      out.joint.block(b * j, a * j, j, j) = cross.transpose();
    }
  }
  Eigen::MatrixXd scratch;
  out.joint_positive_definite = try_cholesky_lower(out.joint, scratch);
  return out;
}

Eigen::MatrixXd block_diagonal(const std::vector<Eigen::MatrixXd>& blocks) {
  Eigen::Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

Eigen::MatrixXd cross_regression_matrix(const Eigen::MatrixXd& l_pred,
                                        const Eigen::MatrixXd& l_obs,
                                        const Eigen::MatrixXd& cov_pred_obs) {
  if (l_pred.rows() != l_pred.cols() || l_obs.rows() != l_obs.cols() ||
      cov_pred_obs.rows() != l_pred.rows() || cov_pred_obs.cols() != l_obs.rows()) {
    throw InputError("cross_regression_matrix: dimension mismatch");
  }
  const Eigen::MatrixXd left = l_pred.triangularView<Eigen::Lower>().solve(cov_pred_obs);
  // left * L_obs^{-T} = (L_obs^{-1} left^T)^T
  const Eigen::MatrixXd r =
      l_obs.triangularView<Eigen::Lower>().solve(left.transpose()).transpose();
  if (r.size() > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
    if (svd.singularValues().maxCoeff() > 1.0 + 1e-10) {
      throw NumericalError("cross-regression matrix has singular value above 1; "
                           "inputs are not from a jointly PSD covariance");
    }
  }
  return r;
}

}  // namespace jcar
