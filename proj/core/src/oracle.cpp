#include "jointcar/oracle.hpp"

#include <cmath>
#include <limits>

#include "jointcar/covariance.hpp"
#include "jointcar/error.hpp"

namespace jcar {

std::string to_string(MissingStructure s) {
  return s == MissingStructure::Matching ? "matching" : "discrepancy";
}

MissingStructure parse_structure(const std::string& name) {
  if (name == "matching") return MissingStructure::Matching;
  if (name == "discrepancy") return MissingStructure::Discrepancy;
  throw InputError("unknown missing structure '" + name + "' (expected matching|discrepancy)");
}

namespace {

constexpr double kContractionTol = 1e-10;
constexpr double kSingularTol = 1e-12;

bool is_lower(const Eigen::MatrixXd& l) {
  for (Eigen::Index j = 1; j < l.cols(); ++j)
    for (Eigen::Index i = 0; i < j; ++i)
      if (l(i, j) != 0.0) return false;
  return true;
}

double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

Eigen::MatrixXd lower_solve(const Eigen::MatrixXd& l, const Eigen::MatrixXd& rhs) {
  return l.triangularView<Eigen::Lower>().solve(rhs);
}

struct SymInverse {
  Eigen::MatrixXd inv;
  bool pseudo = false;
};

// Inverse of I - rho^2 R R^T. Near-singular matrices are only accepted at
// |rho| = 1, where the pseudo-inverse is used.
SymInverse contraction_inverse(const Eigen::MatrixXd& r, double rho) {
  const Eigen::Index g = r.rows();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(g, g) - rho * rho * r * r.transpose();
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd ev = es.eigenvalues();
  SymInverse out;
  if (ev.minCoeff() > kSingularTol) {
    out.inv = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    return out;
  }
  if (std::abs(rho) < 1.0 - kSingularTol) {
    throw NumericalError("I - rho^2 R R^T is singular for |rho| < 1");
  }
  Eigen::VectorXd inv_ev(g);
  for (Eigen::Index k = 0; k < g; ++k) inv_ev(k) = ev(k) > kSingularTol ? 1.0 / ev(k) : 0.0;
  out.inv = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
  out.pseudo = true;
  return out;
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

void OracleCase::validate() const {
  const Eigen::Index g = r.rows();
  if (g < 1 || r.cols() != g) throw InputError("oracle case: R must be a non-empty square matrix");
  for (const Eigen::MatrixXd* l : {&l_pred, &l_obs1, &l_obs2}) {
    if (l->rows() != g || l->cols() != g) throw InputError("oracle case: factor shapes must match R");
    if (!is_lower(*l)) throw InputError("oracle case: factors must be lower triangular");
    if ((l->diagonal().array().abs() <= 0.0).any()) {
      throw InputError("oracle case: factors must be invertible");
    }
  }
  if (!(std::abs(rho) <= 1.0)) throw InputError("oracle case: rho must lie in [-1, 1]");
  if (spectral_norm(r) > 1.0 + kContractionTol) {
    throw InputError("oracle case: singular values of R must not exceed 1");
  }
}

Eigen::MatrixXd joint_covariance_of_case(const OracleCase& c) {
  c.validate();
  const Eigen::Index g = c.size();
  const auto& lp = c.l_pred;
  const auto& l1 = c.l_obs1;
  const auto& l2 = c.l_obs2;
  Eigen::MatrixXd pred_obs1 = lp * c.r * l1.transpose();
  Eigen::MatrixXd pred_obs2, obs1_obs2;
  if (c.structure == MissingStructure::Matching) {
    pred_obs2 = c.rho * lp * c.r * l2.transpose();
    obs1_obs2 = c.rho * l1 * l2.transpose();
  } else {
    pred_obs2 = c.rho * lp * l2.transpose();
    obs1_obs2 = c.rho * l1 * c.r.transpose() * l2.transpose();
  }
  Eigen::MatrixXd s(3 * g, 3 * g);
  s.block(0, 0, g, g) = lp * lp.transpose();
  s.block(g, g, g, g) = l1 * l1.transpose();
  s.block(2 * g, 2 * g, g, g) = l2 * l2.transpose();
  s.block(0, g, g, g) = pred_obs1;
  s.block(g, 0, g, g) = pred_obs1.transpose();
  s.block(0, 2 * g, g, g) = pred_obs2;
  s.block(2 * g, 0, g, g) = pred_obs2.transpose();
  s.block(g, 2 * g, g, g) = obs1_obs2;
  s.block(2 * g, g, g, g) = obs1_obs2.transpose();
  s = symmetrize(s);
  const double scale = std::max(1.0, s.diagonal().cwiseAbs().maxCoeff());
  if (min_eigenvalue(s) < -1e-8 * scale) {
    throw NumericalError("case parameters inconsistent with a valid joint law");
  }
  return s;
}

GaussianPrediction condition_gaussian(const Eigen::MatrixXd& joint, int n_target,
                                      const Eigen::VectorXd& observed) {
  const Eigen::Index n = joint.rows();
  const Eigen::Index m = n - n_target;
  if (joint.cols() != n || n_target < 0 || m < 0 || observed.size() != m) {
    throw InputError("condition_gaussian: inconsistent dimensions");
  }
  const Eigen::MatrixXd s11 = joint.topLeftCorner(n_target, n_target);
  const Eigen::MatrixXd s12 = joint.topRightCorner(n_target, m);
  const Eigen::MatrixXd s22 = joint.bottomRightCorner(m, m);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(s22);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
    throw NumericalError("condition_gaussian: conditioning block not positive definite");
  }
  GaussianPrediction out;
  out.mean = s12 * ldlt.solve(observed);
  out.cov = symmetrize(s11 - s12 * ldlt.solve(s12.transpose()));
  return out;
}

GaussianPrediction predict_matching(const OracleCase& c, const Eigen::VectorXd& mu_obs1) {
  c.validate();
  if (c.structure != MissingStructure::Matching) {
    throw InputError("predict_matching called on a discrepancy case");
  }
  if (mu_obs1.size() != c.size()) throw InputError("predict_matching: mu_obs1 has wrong length");
  const Eigen::MatrixXd lpr = c.l_pred * c.r;
  GaussianPrediction out;
  out.mean = lpr * lower_solve(c.l_obs1, mu_obs1);
  out.cov = symmetrize(c.l_pred * c.l_pred.transpose() - lpr * lpr.transpose());
  return out;
}

GaussianPrediction predict_discrepancy(const OracleCase& c, const Eigen::VectorXd& mu_obs1,
                                       const Eigen::VectorXd& mu_obs2) {
  c.validate();
  if (c.structure != MissingStructure::Discrepancy) {
    throw InputError("predict_discrepancy called on a matching case");
  }
  const Eigen::Index g = c.size();
  if (mu_obs1.size() != g || mu_obs2.size() != g) {
    throw InputError("predict_discrepancy: observation vectors have wrong length");
  }
  const double rho = c.rho;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(g, g);
  const Eigen::MatrixXd z = c.r * c.r.transpose();
  const SymInverse m_inv = contraction_inverse(c.r, rho);

  // Whitened weights: W1 = (1 - rho^2) M^-1 R, W2 = rho (I - Z) M^-1 with
  // M = I - rho^2 Z.
  const Eigen::MatrixXd w1 = (1.0 - rho * rho) * m_inv.inv * c.r;
  const Eigen::MatrixXd w2 = rho * (id - z) * m_inv.inv;
  GaussianPrediction out;
  out.mean = c.l_pred * (w1 * lower_solve(c.l_obs1, mu_obs1) + w2 * lower_solve(c.l_obs2, mu_obs2));
  const Eigen::MatrixXd explained = w1 * c.r.transpose() + rho * w2;
  out.cov = symmetrize(c.l_pred * (id - explained) * c.l_pred.transpose());
  out.boundary = m_inv.pseudo;
  return out;
}

PsdGap psd_gap(const OracleCase& c) {
  OracleCase m = c;
  m.structure = MissingStructure::Matching;
  OracleCase d = c;
  d.structure = MissingStructure::Discrepancy;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(c.size());
  PsdGap out;
  out.delta = symmetrize(predict_matching(m, zero).cov - predict_discrepancy(d, zero, zero).cov);
  out.min_eigenvalue = min_eigenvalue(out.delta);
  return out;
}

NeumannSeries neumann_gap_series(const OracleCase& c, int n_terms) {
  c.validate();
  if (n_terms < 1) throw InputError("neumann_gap_series: n_terms must be positive");
  const Eigen::Index g = c.size();
  const double rho2 = c.rho * c.rho;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(g, g);
  const Eigen::MatrixXd z = symmetrize(c.r * c.r.transpose());
  const Eigen::MatrixXd one_minus = (id - z) * (id - z);

  NeumannSeries out;
  out.sum = Eigen::MatrixXd::Zero(g, g);
  Eigen::MatrixXd term = rho2 * one_minus;  // k = 1
  double last_norm = std::numeric_limits<double>::infinity();
  int non_decreasing = 0;
  for (int k = 1; k <= n_terms; ++k) {
    const Eigen::MatrixXd sym = symmetrize(term);
    const double norm = sym.norm();
    if (norm > 0.0 && min_eigenvalue(sym) < -1e-10 * norm) {
      throw NumericalError("neumann_gap_series: term " + std::to_string(k) + " is not positive semi-definite");
    }
    if (norm > 0.0 && norm >= last_norm) {
      if (++non_decreasing >= 5) throw NumericalError("neumann_gap_series: series diverges");
    } else {
      non_decreasing = 0;
    }
    last_norm = norm;
    out.sum += sym;
    if (k < n_terms) term = rho2 * z * term;
  }
  const double q = rho2 * spectral_norm(z);
  const double last = spectral_norm(symmetrize(term));
  out.tail_bound = last == 0.0 ? 0.0 : (q < 1.0 ? last * q / (1.0 - q) : std::numeric_limits<double>::infinity());
  return out;
}

Eigen::MatrixXd BlockInverse::assembled() const {
  Eigen::MatrixXd out(e.rows() + g.rows(), e.cols() + f.cols());
  out << e, f, g, h;
  return out;
}

BlockInverse block_inverse_2x2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                               const Eigen::MatrixXd& c, const Eigen::MatrixXd& d) {
  if (a.rows() != a.cols() || d.rows() != d.cols() || b.rows() != a.rows() || b.cols() != d.cols() ||
      c.rows() != d.rows() || c.cols() != a.cols()) {
    throw InputError("block_inverse_2x2: blocks are not conformable");
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu_a(a);
  if (!lu_a.isInvertible()) throw NumericalError("block_inverse_2x2: singular pivot block A");
  const Eigen::MatrixXd a_inv = lu_a.inverse();
  const Eigen::MatrixXd schur = d - c * a_inv * b;
  Eigen::FullPivLU<Eigen::MatrixXd> lu_s(schur);
  if (!lu_s.isInvertible()) throw NumericalError("block_inverse_2x2: singular Schur complement");
  const Eigen::MatrixXd s_inv = lu_s.inverse();
  BlockInverse out;
  out.h = s_inv;
  out.f = -a_inv * b * s_inv;
  out.g = -s_inv * c * a_inv;
  out.e = a_inv + a_inv * b * s_inv * c * a_inv;
  return out;
}

double fisher_matching_inv(double rho, int g) {
  if (!(std::abs(rho) < 1.0)) throw InputError("fisher_matching_inv: |rho| must be < 1");
  if (g < 1) throw InputError("fisher_matching_inv: g must be positive");
  const double r2 = rho * rho;
  return (1.0 - r2) * (1.0 - r2) / ((1.0 + r2) * g);
}

double fisher_discrepancy_inv(double rho, const Eigen::MatrixXd& r) {
  if (r.rows() < 1 || r.rows() != r.cols()) throw InputError("fisher_discrepancy_inv: R must be square");
  if (!(std::abs(rho) * spectral_norm(r) < 1.0)) {
    throw InputError("fisher_discrepancy_inv: requires |rho| ||R|| < 1");
  }
  const Eigen::Index g = r.rows();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(g, g) - rho * rho * r * r.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(m));
  if (es.eigenvalues().minCoeff() < 1e-10) {
    throw NumericalError("fisher_discrepancy_inv: I - rho^2 R R^T is near-singular");
  }
  const Eigen::MatrixXd inner = rho * r.transpose() * es.eigenvectors() *
                                es.eigenvalues().cwiseInverse().asDiagonal() *
                                es.eigenvectors().transpose() * r;
  const double trace = (inner * inner).trace();
  if (trace == 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / trace;
}

S22Builder matching_s22(int g) {
  if (g < 1) throw InputError("matching_s22: g must be positive");
  return [g](double rho) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(2 * g, 2 * g);
    for (int k = 0; k < g; ++k) s(k, g + k) = s(g + k, k) = rho;
    return s;
  };
}

S22Builder discrepancy_s22(const Eigen::MatrixXd& r) {
  if (r.rows() < 1 || r.rows() != r.cols()) throw InputError("discrepancy_s22: R must be square");
  return [r](double rho) {
    const Eigen::Index g = r.rows();
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(2 * g, 2 * g);
    s.block(0, g, g, g) = rho * r.transpose();
    s.block(g, 0, g, g) = rho * r;
    return s;
  };
}

double fisher_general(const S22Builder& s22, double rho, std::optional<double> step) {
  const double h = step.value_or(1e-5 * (1.0 - rho * rho));
  if (!(h > 0.0 && h <= 1e-3)) throw InputError("fisher_general: step must lie in (0, 1e-3]");
  const Eigen::MatrixXd s = s22(rho);
  const Eigen::MatrixXd plus = s22(rho + h);
  const Eigen::MatrixXd minus = s22(rho - h);
  Eigen::MatrixXd scratch;
  for (const Eigen::MatrixXd* m : {&s, &plus, &minus}) {
    if (!try_cholesky_lower(symmetrize(*m), scratch)) {
      throw NumericalError("fisher_general: S22 indefinite near rho");
    }
  }
  const Eigen::MatrixXd ds = (plus - minus) / (2.0 * h);
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(s));
  const Eigen::MatrixXd a = llt.solve(ds);
  return 0.5 * (a * a).trace();
}

}  // namespace jcar
