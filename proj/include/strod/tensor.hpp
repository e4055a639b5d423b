#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "strod/error.hpp"

namespace strod {

/// Dense k x k x k tensor, row-major in (a, b, c).
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(int dim) : dim_(dim), data_(static_cast<std::size_t>(dim) * dim * dim, 0.0) {}

  int dim() const noexcept { return dim_; }
  double& operator()(int a, int b, int c) { return data_[index(a, b, c)]; }
  double operator()(int a, int b, int c) const { return data_[index(a, b, c)]; }
  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  Tensor3& operator+=(const Tensor3& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor3& operator-=(const Tensor3& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor3& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  /// this += w * u (x) u (x) u
  void add_cube(const Eigen::VectorXd& u, double w) {
    for (int a = 0; a < dim_; ++a) {
      const double wa = w * u[a];
      for (int b = 0; b < dim_; ++b) {
        const double wab = wa * u[b];
        double* row = &data_[index(a, b, 0)];
        for (int c = 0; c < dim_; ++c) row[c] += wab * u[c];
      }
    }
  }

  static Tensor3 cube(const Eigen::VectorXd& u, double w = 1.0) {
    Tensor3 t(static_cast<int>(u.size()));
    t.add_cube(u, w);
    return t;
  }

  /// Multilinear transform T(B, B, B): out_{pqr} = sum T_{abc} B_{ap} B_{bq} B_{cr}.
  Tensor3 transform(const Eigen::MatrixXd& B) const {
    if (B.rows() != dim_) throw ContractViolation("Tensor3::transform: dimension mismatch");
    const int m = dim_;
    const int k = static_cast<int>(B.cols());
    // Contract one mode at a time: O(m^3 k + m^2 k^2 + m k^3).
    std::vector<double> t1(static_cast<std::size_t>(m) * m * k, 0.0);  // (a,b,r)
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int c = 0; c < m; ++c) {
          const double v = (*this)(a, b, c);
          if (v == 0.0) continue;
          for (int r = 0; r < k; ++r) t1[(static_cast<std::size_t>(a) * m + b) * k + r] += v * B(c, r);
        }
    std::vector<double> t2(static_cast<std::size_t>(m) * k * k, 0.0);  // (a,q,r)
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int q = 0; q < k; ++q) {
          const double bq = B(b, q);
          for (int r = 0; r < k; ++r)
            t2[(static_cast<std::size_t>(a) * k + q) * k + r] += t1[(static_cast<std::size_t>(a) * m + b) * k + r] * bq;
        }
    Tensor3 out(k);
    for (int a = 0; a < m; ++a)
      for (int p = 0; p < k; ++p) {
        const double ap = B(a, p);
        for (int q = 0; q < k; ++q)
          for (int r = 0; r < k; ++r) out(p, q, r) += t2[(static_cast<std::size_t>(a) * k + q) * k + r] * ap;
      }
    return out;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  /// Largest deviation from symmetry over all six mode permutations.
  double asymmetry() const {
    double worst = 0.0;
    for (int a = 0; a < dim_; ++a)
      for (int b = 0; b < dim_; ++b)
        for (int c = 0; c < dim_; ++c) {
          const double v = (*this)(a, b, c);
          for (double w : {(*this)(a, c, b), (*this)(b, a, c), (*this)(b, c, a), (*this)(c, a, b), (*this)(c, b, a)})
            worst = std::max(worst, std::abs(v - w));
        }
    return worst;
  }

  friend double max_abs_diff(const Tensor3& x, const Tensor3& y) {
    x.check_same(y);
    double m = 0.0;
    for (std::size_t i = 0; i < x.data_.size(); ++i) m = std::max(m, std::abs(x.data_[i] - y.data_[i]));
    return m;
  }

 private:
  std::size_t index(int a, int b, int c) const {
    return (static_cast<std::size_t>(a) * dim_ + b) * dim_ + c;
  }
  void check_same(const Tensor3& o) const {
    if (o.dim_ != dim_) throw ContractViolation("Tensor3: dimension mismatch");
  }

  int dim_ = 0;
  std::vector<double> data_;
};

}  // namespace strod
