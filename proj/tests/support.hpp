#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "strod/strod.hpp"

namespace strod::testing {

/// Corpus from whitespace-separated lines, no stopwords.
inline Corpus corpus_from_lines(const std::vector<std::string>& lines, std::size_t min_tokens = 3) {
  std::ostringstream ss;
  for (const auto& l : lines) ss << l << '\n';
  std::istringstream in(ss.str());
  IngestOptions opts;
  opts.stopwords.clear();
  opts.min_tokens = min_tokens;
  return ingest(in, opts);
}

/// Leaf distribution putting weight on words x with x % blocks == block,
/// `floor` elsewhere.
inline std::vector<double> block_phi(int V, int blocks, int block, double floor, int shape = 7) {
  std::vector<double> phi(static_cast<std::size_t>(V));
  double t = 0.0;
  for (int x = 0; x < V; ++x) {
    const double w = x % blocks == block ? 1.0 + (x % shape) : floor;
    phi[static_cast<std::size_t>(x)] = w;
    t += w;
  }
  for (double& p : phi) p /= t;
  return phi;
}

/// Flat K-topic model with symmetric alpha summing to alpha0.
inline GenerativeSpec flat_spec(int V, int K, std::size_t D, double doc_len, double alpha0, std::uint64_t seed,
                                double floor = 0.02) {
  GenerativeSpec s;
  s.vocab_size = static_cast<std::size_t>(V);
  s.num_docs = D;
  s.length.value = doc_len;
  s.seed = seed;
  s.root.alpha.assign(static_cast<std::size_t>(K), alpha0 / K);
  for (int z = 0; z < K; ++z) {
    GenNode leaf;
    leaf.phi = block_phi(V, K, z, floor);
    s.root.children.push_back(leaf);
  }
  return s;
}

/// Two-level model: K1 top topics on disjoint word blocks, each with K2
/// children splitting their block.
inline GenerativeSpec two_level_spec(int V, int K1, int K2, std::size_t D, double doc_len, std::uint64_t seed) {
  GenerativeSpec s;
  s.vocab_size = static_cast<std::size_t>(V);
  s.num_docs = D;
  s.length.value = doc_len;
  s.seed = seed;
  s.root.alpha.assign(static_cast<std::size_t>(K1), 1.0 / K1);
  for (int z = 0; z < K1; ++z) {
    GenNode mid;
    mid.alpha.assign(static_cast<std::size_t>(K2), 1.0 / K2);
    for (int c = 0; c < K2; ++c) {
      GenNode leaf;
      leaf.phi.assign(static_cast<std::size_t>(V), 0.0);
      double t = 0.0;
      for (int x = 0; x < V; ++x) {
        const int blk = x % K1, sub = (x / K1) % K2;
        const double w = blk == z ? (sub == c ? 1.0 + (x % 5) : 0.05) : 0.0;
        leaf.phi[static_cast<std::size_t>(x)] = w;
        t += w;
      }
      for (double& p : leaf.phi) p /= t;
      mid.children.push_back(leaf);
    }
    s.root.children.push_back(mid);
  }
  return s;
}

/// Best L1 distance of each recovered child of `node` to the true phis at
/// `truth_parent`'s children, under the optimal one-to-one matching.
inline std::vector<std::pair<NodePath, double>> matched_l1(const TopicNode& node, const std::vector<Eigen::VectorXd>& truth,
                                                           std::vector<int>* assignment = nullptr) {
  const auto n = static_cast<Eigen::Index>(node.children.size());
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      cost(i, j) = (node.children[static_cast<std::size_t>(i)].phi - truth[static_cast<std::size_t>(j)]).lpNorm<1>();
  auto match = solve_assignment(cost);
  if (assignment) *assignment = match;
  std::vector<std::pair<NodePath, double>> out;
  for (Eigen::Index i = 0; i < n; ++i)
    out.emplace_back(node.children[static_cast<std::size_t>(i)].path, cost(i, match[static_cast<std::size_t>(i)]));
  return out;
}

// ---------------------------------------------------------------------------
// Dense oracles. They enumerate token positions directly and share no code
// with the implicit estimators.

/// Documents as token lists over eligible documents of a corpus.
inline std::vector<std::vector<WordId>> eligible_token_lists(const Corpus& c) {
  std::vector<std::vector<WordId>> out;
  for (const auto& d : c.documents())
    if (d.moment_eligible) out.push_back(d.tokens);
  return out;
}

/// M1 and E2 by averaging over all ordered pairs of distinct positions.
inline void oracle_m1_e2(const std::vector<std::vector<WordId>>& docs, int V, Eigen::VectorXd& m1, Eigen::MatrixXd& e2) {
  m1 = Eigen::VectorXd::Zero(V);
  e2 = Eigen::MatrixXd::Zero(V, V);
  for (const auto& d : docs) {
    const double l = static_cast<double>(d.size());
    for (auto w : d) m1[w] += 1.0 / l;
    for (std::size_t a = 0; a < d.size(); ++a)
      for (std::size_t b = 0; b < d.size(); ++b)
        if (a != b) e2(d[a], d[b]) += 1.0 / (l * (l - 1.0));
  }
  m1 /= static_cast<double>(docs.size());
  e2 /= static_cast<double>(docs.size());
}

/// Dense E3 (V^3 entries) over ordered triples of distinct positions.
inline std::vector<double> oracle_e3(const std::vector<std::vector<WordId>>& docs, int V) {
  std::vector<double> e3(static_cast<std::size_t>(V) * V * V, 0.0);
  for (const auto& d : docs) {
    const double l = static_cast<double>(d.size());
    const double s = 1.0 / (l * (l - 1.0) * (l - 2.0));
    for (std::size_t a = 0; a < d.size(); ++a)
      for (std::size_t b = 0; b < d.size(); ++b)
        for (std::size_t c = 0; c < d.size(); ++c)
          if (a != b && b != c && a != c)
            e3[(static_cast<std::size_t>(d[a]) * V + d[b]) * V + d[c]] += s;
  }
  for (double& v : e3) v /= static_cast<double>(docs.size());
  return e3;
}

/// Dense M2 = (a0+1) E2 - a0 M1 M1^T.
inline Eigen::MatrixXd oracle_m2(const Eigen::VectorXd& m1, const Eigen::MatrixXd& e2, double a0) {
  return (a0 + 1.0) * e2 - a0 * m1 * m1.transpose();
}

/// Dense M3 = (a0+1)(a0+2)/2 E3 - a0(a0+1)/2 [E2 (x) M1 over the three mode
/// placements] + a0^2 M1^{(x)3}, contracted as M3(W, W, W).
inline Tensor3 oracle_t3(const std::vector<double>& e3, const Eigen::VectorXd& m1, const Eigen::MatrixXd& e2, double a0,
                         const Eigen::MatrixXd& W) {
  const int V = static_cast<int>(m1.size());
  const int k = static_cast<int>(W.cols());
  std::vector<double> m3(static_cast<std::size_t>(V) * V * V);
  for (int x = 0; x < V; ++x)
    for (int y = 0; y < V; ++y)
      for (int z = 0; z < V; ++z) {
        const double u = e2(x, y) * m1[z] + e2(x, z) * m1[y] + e2(y, z) * m1[x];
        m3[(static_cast<std::size_t>(x) * V + y) * V + z] = (a0 + 1.0) * (a0 + 2.0) / 2.0 * e3[(static_cast<std::size_t>(x) * V + y) * V + z] -
                                                            a0 * (a0 + 1.0) / 2.0 * u + a0 * a0 * m1[x] * m1[y] * m1[z];
      }
  Tensor3 t(k);
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q)
      for (int r = 0; r < k; ++r) {
        double s = 0.0;
        for (int x = 0; x < V; ++x)
          for (int y = 0; y < V; ++y)
            for (int z = 0; z < V; ++z) s += m3[(static_cast<std::size_t>(x) * V + y) * V + z] * W(x, p) * W(y, q) * W(z, r);
        t(p, q, r) = s;
      }
  return t;
}

inline Eigen::MatrixXd dense(const SparseMatrix& m) { return Eigen::MatrixXd(m); }

}  // namespace strod::testing
