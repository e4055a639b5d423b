#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "strod/corpus.hpp"
#include "strod/error.hpp"
#include "strod/path.hpp"
#include "strod/sparse_eigen.hpp"
#include "strod/tensor.hpp"

namespace strod {

/// Fractional per-document word counts c_i(t), sorted by word id.
struct SparseVector {
  std::vector<WordId> index;
  std::vector<double> value;

  std::size_t nnz() const noexcept { return index.size(); }
  double sum() const {
    double s = 0.0;
    for (double v : value) s += v;
    return s;
  }
};

/// Topical counts of every document for one topic node.
class TopicalCounts {
 public:
  NodePath path;
  std::size_t vocab_size = 0;
  std::vector<SparseVector> docs;
  std::vector<double> lengths;  // l_i(t)
  std::vector<char> eligible;   // l_i(t) >= min_length
  double min_length = 3.0;

  std::size_t num_eligible() const {
    return static_cast<std::size_t>(std::count(eligible.begin(), eligible.end(), char{1}));
  }

  /// Full reads of `docs` by moment estimation (estimate_m1_e2, project_e3).
  std::size_t moment_passes() const noexcept { return moment_passes_; }
  /// Full reads of `docs` made to derive child counts.
  std::size_t derivation_passes() const noexcept { return derivation_passes_; }
  void note_moment_pass() const noexcept { ++moment_passes_; }
  void note_derivation_pass() const noexcept { ++derivation_passes_; }

 private:
  mutable std::size_t moment_passes_ = 0;
  mutable std::size_t derivation_passes_ = 0;
};

/// c_i(o) = c_i: the root's topical counts are the raw counts.
inline TopicalCounts root_counts(const Corpus& corpus) {
  TopicalCounts tc;
  tc.path = NodePath::root();
  tc.vocab_size = corpus.vocab_size();
  tc.min_length = static_cast<double>(std::max<std::size_t>(corpus.min_tokens(), 3));
  tc.docs.reserve(corpus.num_documents());
  for (std::size_t i = 0; i < corpus.num_documents(); ++i) {
    SparseVector v;
    for (auto [w, c] : corpus.counts()[i]) {
      v.index.push_back(w);
      v.value.push_back(static_cast<double>(c));
    }
    tc.lengths.push_back(static_cast<double>(corpus.documents()[i].tokens.size()));
    tc.eligible.push_back(corpus.documents()[i].moment_eligible ? 1 : 0);
    tc.docs.push_back(std::move(v));
  }
  return tc;
}

/// Splits the parent's counts among all k children in one pass:
///   c_{i,x}(t/z) = c_{i,x}(t) * alpha_z phi_{z,x} / sum_y alpha_y phi_{y,x}.
/// Words whose denominator is zero receive zero count in every child.
inline std::vector<TopicalCounts> split_counts(const TopicalCounts& parent, const std::vector<double>& alpha,
                                               const std::vector<Eigen::VectorXd>& phi_children) {
  const std::size_t k = alpha.size();
  if (k == 0 || phi_children.size() != k)
    throw ContractViolation("split_counts: alpha and phi lists differ in length");
  for (double a : alpha)
    if (!(a > 0)) throw ContractViolation("split_counts: alpha entries must be positive");
  for (const auto& phi : phi_children)
    if (static_cast<std::size_t>(phi.size()) != parent.vocab_size)
      throw ContractViolation("split_counts: phi has wrong dimension");

  Eigen::MatrixXd share(k, parent.vocab_size);  // alpha_z phi_{z,x} / denominator
  for (std::size_t x = 0; x < parent.vocab_size; ++x) {
    double den = 0.0;
    for (std::size_t z = 0; z < k; ++z) den += alpha[z] * phi_children[z][x];
    for (std::size_t z = 0; z < k; ++z) share(z, x) = den > 0 ? alpha[z] * phi_children[z][x] / den : 0.0;
  }

  std::vector<TopicalCounts> out(k);
  for (std::size_t z = 0; z < k; ++z) {
    out[z].path = parent.path.child(static_cast<int>(z + 1));
    out[z].vocab_size = parent.vocab_size;
    out[z].min_length = parent.min_length;
    out[z].docs.resize(parent.docs.size());
    out[z].lengths.assign(parent.docs.size(), 0.0);
    out[z].eligible.assign(parent.docs.size(), 0);
  }
  parent.note_derivation_pass();
  for (std::size_t i = 0; i < parent.docs.size(); ++i) {
    const auto& src = parent.docs[i];
    for (std::size_t z = 0; z < k; ++z) {
      auto& dst = out[z].docs[i];
      double len = 0.0;
      for (std::size_t e = 0; e < src.nnz(); ++e) {
        const double v = src.value[e] * share(z, src.index[e]);
        if (v > 0) {
          dst.index.push_back(src.index[e]);
          dst.value.push_back(v);
          len += v;
        }
      }
      out[z].lengths[i] = len;
      out[z].eligible[i] = len >= parent.min_length ? 1 : 0;
    }
  }
  return out;
}

/// Topical counts of child `child_index` (1-based) of the node owning `parent`.
inline TopicalCounts topical_counts(const TopicalCounts& parent, const std::vector<double>& alpha,
                                    const std::vector<Eigen::VectorXd>& phi_children, int child_index) {
  if (child_index < 1 || static_cast<std::size_t>(child_index) > alpha.size())
    throw ContractViolation("topical_counts: child index out of range");
  auto all = split_counts(parent, alpha, phi_children);
  return std::move(all[static_cast<std::size_t>(child_index - 1)]);
}

/// Open-addressing accumulator for sparse symmetric co-occurrence sums.
/// Each key accumulates contributions in insertion order, so results are
/// independent of table layout; merge() adds another accumulator's sums.
class PairAccumulator {
 public:
  explicit PairAccumulator(std::size_t capacity_hint = 1024) {
    std::size_t cap = 16;
    while (cap < 2 * capacity_hint) cap <<= 1;
    keys_.assign(cap, kEmpty);
    vals_.assign(cap, 0.0);
  }

  void add(std::uint64_t key, double v) {
    if (2 * (size_ + 1) > keys_.size()) grow();
    std::size_t slot = find_slot(key);
    if (keys_[slot] == kEmpty) {
      keys_[slot] = key;
      ++size_;
    }
    vals_[slot] += v;
  }

  void merge(const PairAccumulator& other) {
    for (std::size_t s = 0; s < other.keys_.size(); ++s)
      if (other.keys_[s] != kEmpty) add(other.keys_[s], other.vals_[s]);
  }

  std::size_t size() const noexcept { return size_; }

  template <class Fn>
  void for_each(Fn&& fn) const {
    for (std::size_t s = 0; s < keys_.size(); ++s)
      if (keys_[s] != kEmpty) fn(keys_[s], vals_[s]);
  }

 private:
  static constexpr std::uint64_t kEmpty = ~std::uint64_t{0};

  std::size_t find_slot(std::uint64_t key) const {
    const std::size_t mask = keys_.size() - 1;
    std::size_t s = static_cast<std::size_t>(splitmix64(key)) & mask;
    while (keys_[s] != kEmpty && keys_[s] != key) s = (s + 1) & mask;
    return s;
  }

  void grow() {
    std::vector<std::uint64_t> old_keys;
    std::vector<double> old_vals;
    old_keys.swap(keys_);
    old_vals.swap(vals_);
    keys_.assign(old_keys.size() * 2, kEmpty);
    vals_.assign(old_keys.size() * 2, 0.0);
    for (std::size_t s = 0; s < old_keys.size(); ++s) {
      if (old_keys[s] == kEmpty) continue;
      std::size_t slot = find_slot(old_keys[s]);
      keys_[slot] = old_keys[s];
      vals_[slot] = old_vals[s];
    }
  }

  std::vector<std::uint64_t> keys_;
  std::vector<double> vals_;
  std::size_t size_ = 0;
};

struct FirstSecondMoments {
  Eigen::VectorXd m1;  // sums to 1
  SparseMatrix e2;     // symmetric, entries sum to 1
  std::size_t eligible_docs = 0;
};

/// One pass over the counts: M1 = mean of c_i/l_i and
/// E2 = mean of [c_i c_i^T - diag(c_i)] / (l_i (l_i - 1)) over eligible docs.
inline FirstSecondMoments estimate_m1_e2(const TopicalCounts& counts) {
  const std::size_t V = counts.vocab_size;
  FirstSecondMoments out;
  out.m1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(V));
  PairAccumulator acc(4 * V + 64);
  counts.note_moment_pass();
  for (std::size_t i = 0; i < counts.docs.size(); ++i) {
    if (!counts.eligible[i]) continue;
    ++out.eligible_docs;
    const auto& d = counts.docs[i];
    const double l = counts.lengths[i];
    const double w1 = 1.0 / l;
    const double w2 = 1.0 / (l * (l - 1.0));
    for (std::size_t a = 0; a < d.nnz(); ++a) {
      const WordId xa = d.index[a];
      const double ca = d.value[a];
      out.m1[xa] += w1 * ca;
      acc.add(static_cast<std::uint64_t>(xa) * V + xa, w2 * (ca * ca - ca));
      for (std::size_t b = a + 1; b < d.nnz(); ++b) {
        // Upper triangle only; mirrored when the matrix is assembled.
        acc.add(static_cast<std::uint64_t>(xa) * V + d.index[b], w2 * ca * d.value[b]);
      }
    }
  }
  if (out.eligible_docs == 0) throw DegenerateNodeError("no moment-eligible documents");
  const double inv = 1.0 / static_cast<double>(out.eligible_docs);
  out.m1 *= inv;

  std::vector<Eigen::Triplet<double, std::int64_t>> trip;
  trip.reserve(2 * acc.size());
  acc.for_each([&](std::uint64_t key, double v) {
    const auto r = static_cast<std::int64_t>(key / V);
    const auto c = static_cast<std::int64_t>(key % V);
    if (v == 0.0) return;
    trip.emplace_back(r, c, v * inv);
    if (r != c) trip.emplace_back(c, r, v * inv);
  });
  // Canonical order so the compressed matrix is independent of hash layout.
  std::sort(trip.begin(), trip.end(), [](const auto& p, const auto& q) {
    return p.col() != q.col() ? p.col() < q.col() : p.row() < q.row();
  });
  out.e2.resize(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(V));
  out.e2.setFromTriplets(trip.begin(), trip.end());
  out.e2.makeCompressed();
  return out;
}

/// Whitening of M2 = (alpha0+1) E2 - alpha0 M1 M1^T, built from the top
/// eigenpairs of the sparse E2 without ever forming M2.
struct MomentBundle {
  Eigen::VectorXd m1;
  SparseMatrix e2;
  double alpha0 = 1.0;
  int k = 0;
  Eigen::MatrixXd basis;      // U: V x k, top-k eigenvectors of E2
  Eigen::VectorXd e2_values;  // Sigma_1 (the top-k eigenvalues of E2)
  Eigen::MatrixXd rotation;   // B = U' Sigma^{-1/2}, so W = U B
  Eigen::VectorXd sigma;      // eigenvalues of M'2, descending
  Eigen::MatrixXd W;          // V x k
  Eigen::MatrixXd W_pinv_T;   // (W^T)^+ = U U' Sigma^{1/2}
  Eigen::VectorXd energy;     // cumulative energy g(1..K) of the E2 spectrum supplied
  int floored = 0;            // eigenvalues of M'2 raised to the floor
};

inline constexpr double kEigenFloorRel = 1e-10;
/// Eigenvalues of M'2 at or below this fraction of the largest are treated
/// as numerically zero.
inline constexpr double kRankTolRel = 1e-12;

/// `e2_eig` must hold at least k leading eigenpairs of `e2`.
inline MomentBundle whiten(const Eigen::VectorXd& m1, const SparseMatrix& e2, const EigenPairs& e2_eig,
                           double alpha0, int k) {
  if (k < 1) throw ContractViolation("whiten: k must be >= 1");
  if (!(alpha0 > 0)) throw ContractViolation("whiten: alpha0 must be positive");
  if (e2_eig.values.size() < k) throw ContractViolation("whiten: fewer than k eigenpairs of E2 supplied");

  MomentBundle b;
  b.m1 = m1;
  b.e2 = e2;
  b.alpha0 = alpha0;
  b.k = k;
  b.basis = e2_eig.vectors.leftCols(k);
  b.e2_values = e2_eig.values.head(k);
  b.energy.resize(e2_eig.values.size());
  double g = 0.0;
  for (Eigen::Index z = 0; z < e2_eig.values.size(); ++z) {
    g += std::max(0.0, e2_eig.values[z]);
    b.energy[z] = g;
  }

  const Eigen::VectorXd m1p = b.basis.transpose() * m1;
  Eigen::MatrixXd m2p = (alpha0 + 1.0) * b.e2_values.asDiagonal().toDenseMatrix() - alpha0 * m1p * m1p.transpose();
  m2p = 0.5 * (m2p + m2p.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m2p);
  Eigen::VectorXd vals(k);
  Eigen::MatrixXd vecs(k, k);
  for (int z = 0; z < k; ++z) {
    vals[z] = es.eigenvalues()[k - 1 - z];
    vecs.col(z) = es.eigenvectors().col(k - 1 - z);
  }
  detail::canonicalize_signs(vecs);
  const double top = vals[0];
  for (int z = 0; z < k; ++z)
    if (!(top > 0) || !(vals[z] > kRankTolRel * top))
      throw RankDeficiencyError("M2 has fewer than " + std::to_string(k) +
                                " positive eigenvalues; try a smaller k");
  for (int z = 0; z < k; ++z) {
    if (vals[z] < kEigenFloorRel * top) {
      vals[z] = kEigenFloorRel * top;
      ++b.floored;
    }
  }
  b.sigma = vals;
  b.rotation = vecs * vals.cwiseSqrt().cwiseInverse().asDiagonal();
  b.W = b.basis * b.rotation;
  b.W_pinv_T = b.basis * (vecs * vals.cwiseSqrt().asDiagonal());
  return b;
}

inline MomentBundle whiten(const Eigen::VectorXd& m1, const SparseMatrix& e2, double alpha0, int k,
                           double tol = 1e-12) {
  if (k < 1 || k > e2.rows()) throw ContractViolation("whiten: need 1 <= k <= V");
  return whiten(m1, e2, top_k_eigenpairs(e2, k, tol), alpha0, k);
}

/// One pass: E3(P, P, P) for an orthonormal-or-not basis P (V x m), from
///   E3 = mean_i s_i [c^{(x)3} - sum over the 3 pairings of c (x) diag(c) + 2 tridiag(c)],
/// s_i = 1/(l_i (l_i-1) (l_i-2)). Memory O(V m + m^3).
inline Tensor3 project_e3(const TopicalCounts& counts, const Eigen::MatrixXd& P) {
  const int m = static_cast<int>(P.cols());
  if (static_cast<std::size_t>(P.rows()) != counts.vocab_size) throw ContractViolation("project_e3: basis has wrong row count");
  Tensor3 cubes(m);     // sum s y^{(x)3}
  Tensor3 pairings(m);  // sum s y_a G_bc
  Eigen::VectorXd diag_weight = Eigen::VectorXd::Zero(P.rows());  // sum_i s_i c_{i,x}
  Eigen::VectorXd y(m);
  Eigen::MatrixXd G(m, m);
  std::size_t used = 0;
  counts.note_moment_pass();
  for (std::size_t i = 0; i < counts.docs.size(); ++i) {
    if (!counts.eligible[i]) continue;
    const double l = counts.lengths[i];
    if (!(l > 2.0)) throw ContractViolation("project_e3: document with l_i <= 2 reached the third-order pass");
    ++used;
    const double s = 1.0 / (l * (l - 1.0) * (l - 2.0));
    const auto& d = counts.docs[i];
    y.setZero();
    G.setZero();
    for (std::size_t e = 0; e < d.nnz(); ++e) {
      const auto row = P.row(d.index[e]);
      const double c = d.value[e];
      y += c * row.transpose();
      G.noalias() += c * row.transpose() * row;
      diag_weight[d.index[e]] += s * c;
    }
    cubes.add_cube(y, s);
    for (int a = 0; a < m; ++a) {
      const double sa = s * y[a];
      for (int b = 0; b < m; ++b)
        for (int c = 0; c < m; ++c) pairings(a, b, c) += sa * G(b, c);
    }
  }
  if (used == 0) throw DegenerateNodeError("no moment-eligible documents");

  Tensor3 out = cubes;
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      for (int c = 0; c < m; ++c) out(a, b, c) -= pairings(a, b, c) + pairings(b, a, c) + pairings(c, a, b);
  Eigen::VectorXd row(m);
  for (Eigen::Index x = 0; x < P.rows(); ++x) {
    if (diag_weight[x] == 0.0) continue;
    row = P.row(x).transpose();
    out.add_cube(row, 2.0 * diag_weight[x]);
  }
  out *= 1.0 / static_cast<double>(used);
  return out;
}

/// T = M3(W,W,W) from E3 projected on the bundle's basis U (W = U B):
///   T = (a0+1)(a0+2)/2 E3(W,W,W) - a0(a0+1)/2 (U1+U2+U3)(W,W,W) + a0^2 (W^T M1)^{(x)3},
/// where W^T E2 W = [I + a0 (W^T M1)(W^T M1)^T] / (a0+1) since W^T M2 W = I.
inline Tensor3 assemble_t3(const Tensor3& e3_on_basis, const MomentBundle& b) {
  if (e3_on_basis.dim() != b.k) throw ContractViolation("assemble_t3: basis dimension mismatch");
  const double a0 = b.alpha0;
  const int k = b.k;
  Tensor3 t = e3_on_basis.transform(b.rotation);
  t *= (a0 + 1.0) * (a0 + 2.0) / 2.0;
  const Eigen::VectorXd mw = b.rotation.transpose() * (b.basis.transpose() * b.m1);
  const Eigen::MatrixXd S = (Eigen::MatrixXd::Identity(k, k) + a0 * mw * mw.transpose()) / (a0 + 1.0);
  const double cu = a0 * (a0 + 1.0) / 2.0;
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q)
      for (int r = 0; r < k; ++r)
        t(p, q, r) += -cu * (S(p, q) * mw[r] + S(p, r) * mw[q] + S(q, r) * mw[p]) + a0 * a0 * mw[p] * mw[q] * mw[r];
  return t;
}

/// Second pass over the data: the whitened third-order moment tensor.
inline Tensor3 project_t3(const TopicalCounts& counts, const MomentBundle& bundle) {
  return assemble_t3(project_e3(counts, bundle.basis), bundle);
}

/// Debug dump of a sparse matrix as "row col value" triplets (0-based).
inline void write_triplets(std::ostream& out, const SparseMatrix& m) {
  char buf[64];
  for (Eigen::Index c = 0; c < m.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(m, c); it; ++it) {
      std::snprintf(buf, sizeof buf, "%.17g", it.value());
      out << it.row() << ' ' << it.col() << ' ' << buf << '\n';
    }
}

}  // namespace strod
