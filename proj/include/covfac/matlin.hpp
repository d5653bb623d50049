#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace covfac {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MatlinConfig {
  double eig_rel_tol = 1e-10;
  double jitter_scale = 1e-12;
  int jitter_retries = 3;
};

inline void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

// Symmetric matrix with enforced exact symmetry.
class SymMatrix {
 public:
  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw std::invalid_argument("SymMatrix: not square");
    require_finite(m_, "SymMatrix");
    // symmetrize exactly
    for (Eigen::Index i = 0; i < m_.rows(); ++i)
      for (Eigen::Index j = 0; j < i; ++j) m_(i, j) = m_(j, i);
  }
  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& mat() const { return m_; }

 private:
  Matrix m_;
};

// SPD matrix carrying its lower Cholesky factor; construction fails if the
// matrix is not positive definite even after a small jitter retry.
class SpdMatrix {
 public:
  explicit SpdMatrix(Matrix m, const MatlinConfig& cfg = {}) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw std::invalid_argument("SpdMatrix: not square");
    require_finite(m_, "SpdMatrix");
    for (Eigen::Index i = 0; i < m_.rows(); ++i)
      for (Eigen::Index j = 0; j < i; ++j) m_(i, j) = m_(j, i);
    Eigen::LLT<Matrix> llt(m_);
    int tries = 0;
    double jitter = cfg.jitter_scale * m_.trace() / static_cast<double>(m_.rows());
    while (llt.info() != Eigen::Success && tries < cfg.jitter_retries) {
      m_.diagonal().array() += jitter;
      jitter *= 10.0;
      llt.compute(m_);
      ++tries;
    }
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("SpdMatrix: Cholesky failed (matrix not SPD)");
    chol_ = llt.matrixL();
  }

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& mat() const { return m_; }
  const Matrix& chol_lower() const { return chol_; }

  double log_det() const {
    return 2.0 * chol_.diagonal().array().log().sum();
  }
  Matrix inverse() const {
    Matrix id = Matrix::Identity(dim(), dim());
    Matrix linv = chol_.triangularView<Eigen::Lower>().solve(id);
    return linv.transpose() * linv;
  }
  // symmetric square root via eigendecomposition
  Matrix sqrt() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m_);
    return es.eigenvectors() *
           es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
  }

 private:
  Matrix m_;
  Matrix chol_;
};

// Lambda Lambda^T + sigma2 * I without materializing the p x p matrix.
struct LowRankPlusScalar {
  Matrix loadings;  // p x k
  double scalar;    // sigma^2

  LowRankPlusScalar(Matrix l, double s) : loadings(std::move(l)), scalar(s) {
    if (s < 0.0) throw std::invalid_argument("LowRankPlusScalar: negative scalar");
    require_finite(loadings, "LowRankPlusScalar");
  }
  Eigen::Index dim() const { return loadings.rows(); }
  Eigen::Index rank() const { return loadings.cols(); }
  Matrix materialize() const {
    Matrix m = loadings * loadings.transpose();
    m.diagonal().array() += scalar;
    return m;
  }
};

inline double operator_norm(const SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a.mat(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double frobenius_norm(const Matrix& a) {
  require_finite(a, "frobenius_norm");
  return a.norm();
}

inline std::pair<double, double> extreme_singular_values(const Matrix& a) {
  require_finite(a, "extreme_singular_values");
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& sv = svd.singularValues();
  return {sv(sv.size() - 1), sv(0)};
}

// ||(L1 L1^T + s1 I) - (L2 L2^T + s2 I)||_2 through the (k1+k2) x (k1+k2)
// signed Gram eigenproblem; O(p (k1+k2)^2) time and never forms p x p.
inline double lowrank_opnorm_diff(const LowRankPlusScalar& m1,
                                  const LowRankPlusScalar& m2) {
  if (m1.dim() != m2.dim())
    throw std::invalid_argument("lowrank_opnorm_diff: dimension mismatch");
  const Eigen::Index p = m1.dim();
  const Eigen::Index k1 = m1.rank(), k2 = m2.rank();
  const double ds = m1.scalar - m2.scalar;
  const Eigen::Index k = k1 + k2;
  if (k == 0) return std::fabs(ds);
  Matrix c(p, k);
  c.leftCols(k1) = m1.loadings;
  c.rightCols(k2) = m2.loadings;
  Matrix gram = c.transpose() * c;  // k x k
  // eigenvalues of S*gram (S = diag(I, -I)) equal those of G^{1/2} S G^{1/2}
  Eigen::SelfAdjointEigenSolver<Matrix> eg(gram);
  Matrix half = eg.eigenvectors() *
                eg.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                eg.eigenvectors().transpose();
  Vector sign(k);
  sign.head(k1).setOnes();
  sign.tail(k2).setConstant(-1.0);
  Matrix core = half * sign.asDiagonal() * half;
  Eigen::SelfAdjointEigenSolver<Matrix> es(core, Eigen::EigenvaluesOnly);
  double best = 0.0;
  for (Eigen::Index i = 0; i < k; ++i)
    best = std::max(best, std::fabs(es.eigenvalues()(i) + ds));
  if (k < p) best = std::max(best, std::fabs(ds));  // zero eigenvalue branch
  return best;
}

// d_n = ||Sigma1^{1/2}(Sigma0^{-1} - Sigma1^{-1})Sigma1^{1/2}||_F and
// D_n = log|Sigma1 Sigma0^{-1}|.
inline std::pair<double, double> whitened_discrepancy(const SpdMatrix& sigma0,
                                                      const SpdMatrix& sigma1) {
  if (sigma0.dim() != sigma1.dim())
    throw std::invalid_argument("whitened_discrepancy: dimension mismatch");
  Matrix root1 = sigma1.sqrt();
  Matrix inner = sigma0.inverse() - sigma1.inverse();
  Matrix a = root1 * inner * root1;
  double d = a.norm();
  double dd = sigma1.log_det() - sigma0.log_det();
  return {d, dd};
}

}  // namespace covfac
