#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "strod/error.hpp"
#include "strod/moments.hpp"
#include "strod/tensor.hpp"

namespace strod {

/// T(I, u, u): w_a = sum_{b,c} T_abc u_b u_c.
inline Eigen::VectorXd tensor_apply(const Tensor3& T, const Eigen::VectorXd& u) {
  const int k = T.dim();
  if (u.size() != k) throw ContractViolation("tensor_apply: dimension mismatch");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  for (int a = 0; a < k; ++a) {
    double s = 0.0;
    for (int b = 0; b < k; ++b) {
      double inner = 0.0;
      for (int c = 0; c < k; ++c) inner += T(a, b, c) * u[c];
      s += inner * u[b];
    }
    w[a] = s;
  }
  return w;
}

/// T(u, u, u).
inline double tensor_value(const Tensor3& T, const Eigen::VectorXd& u) { return u.dot(tensor_apply(T, u)); }

struct PowerIterationTrace {
  Eigen::VectorXd v;
  int iterations = 0;
  std::vector<double> residuals;  // ||v_{m+1} - v_m|| per update
};

inline constexpr double kPowerEarlyExit = 1e-13;

/// Up to n updates v <- T(I,v,v)/||T(I,v,v)||, stopping early once the step
/// is below `early_exit`.
inline PowerIterationTrace power_iterate(const Tensor3& T, Eigen::VectorXd v, int n,
                                         double early_exit = kPowerEarlyExit) {
  PowerIterationTrace tr;
  for (int it = 0; it < n; ++it) {
    Eigen::VectorXd next = tensor_apply(T, v);
    const double norm = next.norm();
    if (!(norm > 0) || !std::isfinite(norm)) break;
    next /= norm;
    const double step = (next - v).norm();
    v = std::move(next);
    tr.residuals.push_back(step);
    ++tr.iterations;
    if (step < early_exit) break;
  }
  tr.v = std::move(v);
  return tr;
}

struct TensorEigenPair {
  double lambda = 0.0;  // T(v,v,v) at extraction
  Eigen::VectorXd v;    // unit norm, oriented so T(v,v,v) > 0
};

struct DecompositionResult {
  std::vector<TensorEigenPair> pairs;  // extraction order
  std::vector<int> failed;             // 0-based component slots with no positive candidate
  Tensor3 residual;                    // tensor after all deflations
  int max_inner_iterations = 0;
};

inline Eigen::VectorXd random_unit_vector(int k, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Eigen::VectorXd v(k);
  do {
    for (int i = 0; i < k; ++i) v[i] = gauss(rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

/// Randomized tensor power method with deflation: for each of the T.dim()
/// components, N random restarts of n power updates; the candidate with the
/// largest T(v,v,v) is kept and T <- T - lambda v^{(x)3}.
inline DecompositionResult power_decompose(const Tensor3& T, int N, int n, std::uint64_t seed) {
  if (N < 1 || n < 1) throw ContractViolation("power_decompose: N and n must be >= 1");
  const int k = T.dim();
  DecompositionResult out;
  out.residual = T;
  std::mt19937_64 rng(seed);
  for (int z = 0; z < k; ++z) {
    double best = 0.0;
    Eigen::VectorXd best_v;
    for (int restart = 0; restart < N; ++restart) {
      auto tr = power_iterate(out.residual, random_unit_vector(k, rng), n);
      out.max_inner_iterations = std::max(out.max_inner_iterations, tr.iterations);
      const double val = tensor_value(out.residual, tr.v);
      if (val > best) {
        best = val;
        best_v = tr.v;
      }
    }
    if (best_v.size() == 0) {
      out.failed.push_back(z);
      continue;
    }
    out.residual.add_cube(best_v, -best);
    out.pairs.push_back({best, best_v});
  }
  return out;
}

struct Component {
  double lambda = 0.0;  // mixing weight alpha_z / alpha_0 (raw, before normalization)
  Eigen::VectorXd v;    // word distribution
  double raw_negative_mass = 0.0;
};

/// lambda = 1/lambda~^2, v = lambda (W^T)^+ v~, then projected to the simplex.
inline Component recover_component(const TensorEigenPair& pair, const MomentBundle& bundle) {
  if (!(pair.lambda > 0)) throw InvalidEigenvalueError("non-positive tensor eigenvalue " + std::to_string(pair.lambda));
  Component c;
  c.lambda = 1.0 / (pair.lambda * pair.lambda);
  Eigen::VectorXd raw = c.lambda * (bundle.W_pinv_T * pair.v);
  double neg = 0.0, abs_total = 0.0;
  for (Eigen::Index x = 0; x < raw.size(); ++x) {
    abs_total += std::abs(raw[x]);
    if (raw[x] < 0) {
      neg -= raw[x];
      raw[x] = 0.0;
    }
  }
  c.raw_negative_mass = abs_total > 0 ? neg / abs_total : 0.0;
  const double total = raw.sum();
  if (!(total > 0)) throw InvalidEigenvalueError("recovered component has no positive mass");
  c.v = raw / total;
  return c;
}

inline std::vector<Component> recover_components(const std::vector<TensorEigenPair>& pairs,
                                                 const MomentBundle& bundle) {
  std::vector<Component> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(recover_component(p, bundle));
  return out;
}

}  // namespace strod
