#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "strod/error.hpp"

namespace strod {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, std::int64_t>;

struct EigenPairs {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // n x k, orthonormal columns
  double residual = 0.0;    // max_z ||A mu_z - sigma_z mu_z||
  int krylov_dim = 0;
};

namespace detail {

/// Flips each column so its largest-magnitude entry is positive.
inline void canonicalize_signs(Eigen::MatrixXd& vecs) {
  for (Eigen::Index c = 0; c < vecs.cols(); ++c) {
    Eigen::Index arg = 0;
    vecs.col(c).cwiseAbs().maxCoeff(&arg);
    if (vecs(arg, c) < 0) vecs.col(c) = -vecs.col(c);
  }
}

}  // namespace detail

/// Largest-algebraic k eigenpairs of a symmetric operator, by Lanczos with
/// full reorthogonalization. The Krylov space grows (doubling) until every
/// wanted Ritz pair has residual <= tol * |sigma_1|, or until it spans the
/// whole space, in which case the result is exact up to round-off.
/// `apply(x, y)` must compute y = A x.
template <class Apply>
EigenPairs lanczos_top_k(Apply&& apply, Eigen::Index n, int k, double tol, int max_iter,
                         std::uint64_t seed = 0x51a7c0deULL) {
  if (k < 1 || k > n) throw ContractViolation("top_k_eigenpairs: need 1 <= k <= n");
  const Eigen::Index cap = std::min<Eigen::Index>(n, std::max<Eigen::Index>(max_iter, k));
  Eigen::Index target = std::min<Eigen::Index>(cap, std::max<Eigen::Index>(2 * k + 20, 40));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  auto random_unit_orthogonal = [&](const Eigen::MatrixXd& Q, Eigen::Index cols) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
      for (int pass = 0; pass < 2 && cols > 0; ++pass)
        v -= Q.leftCols(cols) * (Q.leftCols(cols).transpose() * v);
      double nv = v.norm();
      if (nv > 1e-8) return Eigen::VectorXd(v / nv);
    }
    throw ConvergenceError("lanczos: failed to draw a new start vector", 0.0);
  };

  Eigen::MatrixXd Q(n, target);
  std::vector<double> alpha, beta;  // beta[j] couples q_j and q_{j+1}
  Q.col(0) = random_unit_orthogonal(Q, 0);
  Eigen::VectorXd w(n);
  Eigen::Index m = 0;  // number of basis vectors with a completed step
  double anorm = 0.0;  // running estimate of ||A||

  while (true) {
    for (; m < target; ++m) {
      apply(Q.col(m), w);
      const double a = Q.col(m).dot(w);
      alpha.push_back(a);
      for (int pass = 0; pass < 2; ++pass) w -= Q.leftCols(m + 1) * (Q.leftCols(m + 1).transpose() * w);
      double b = w.norm();
      if (m + 1 == n) {
        beta.push_back(0.0);
        ++m;
        break;
      }
      if (m + 1 >= Q.cols()) Q.conservativeResize(Eigen::NoChange, std::min<Eigen::Index>(n, 2 * Q.cols()));
      anorm = std::max({anorm, std::abs(a), b});
      if (b <= 1e-13 * std::max(anorm, 1e-300)) {
        // Invariant subspace: continue with a fresh orthogonal direction.
        beta.push_back(0.0);
        Q.col(m + 1) = random_unit_orthogonal(Q, m + 1);
      } else {
        beta.push_back(b);
        Q.col(m + 1) = w / b;
      }
    }

    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
      T(j, j) = alpha[j];
      if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = beta[j];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    const auto& theta = es.eigenvalues();  // ascending
    const auto& S = es.eigenvectors();
    const double beta_m = m < n ? beta[m - 1] : 0.0;
    double scale = std::max({std::abs(theta[m - 1]), std::abs(theta[0]), 1e-300});
    double worst = 0.0;
    for (int z = 0; z < k; ++z) worst = std::max(worst, std::abs(beta_m * S(m - 1, m - 1 - z)));

    if (worst <= tol * scale || m >= cap) {
      if (worst > tol * scale && m < n)
        throw ConvergenceError("top_k_eigenpairs did not converge within max_iter", worst / scale);
      EigenPairs out;
      out.values.resize(k);
      Eigen::MatrixXd Sk(m, k);
      for (int z = 0; z < k; ++z) {
        out.values[z] = theta[m - 1 - z];
        Sk.col(z) = S.col(m - 1 - z);
      }
      out.vectors = Q.leftCols(m) * Sk;
      detail::canonicalize_signs(out.vectors);
      double res = 0.0;
      Eigen::VectorXd y(n);
      for (int z = 0; z < k; ++z) {
        apply(out.vectors.col(z), y);
        res = std::max(res, (y - out.values[z] * out.vectors.col(z)).norm());
      }
      out.residual = res;
      out.krylov_dim = static_cast<int>(m);
      return out;
    }
    target = std::min<Eigen::Index>(cap, 2 * target);
  }
}

inline EigenPairs top_k_eigenpairs(const SparseMatrix& A, int k, double tol = 1e-12, int max_iter = 0) {
  if (A.rows() != A.cols()) throw ContractViolation("top_k_eigenpairs: matrix must be square");
  const Eigen::Index n = A.rows();
  if (max_iter <= 0) max_iter = static_cast<int>(n);
  return lanczos_top_k([&](const auto& x, Eigen::VectorXd& y) { y.noalias() = A * x; }, n, k, tol,
                       max_iter);
}

inline EigenPairs top_k_eigenpairs(const Eigen::MatrixXd& A, int k, double tol = 1e-12, int max_iter = 0) {
  if (A.rows() != A.cols()) throw ContractViolation("top_k_eigenpairs: matrix must be square");
  const Eigen::Index n = A.rows();
  if (max_iter <= 0) max_iter = static_cast<int>(n);
  return lanczos_top_k([&](const auto& x, Eigen::VectorXd& y) { y.noalias() = A * x; }, n, k, tol,
                       max_iter);
}

}  // namespace strod
