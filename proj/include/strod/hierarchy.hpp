#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "strod/corpus.hpp"
#include "strod/error.hpp"
#include "strod/moments.hpp"
#include "strod/path.hpp"
#include "strod/sparse_eigen.hpp"
#include "strod/spectral.hpp"

namespace strod {

struct Alpha0Policy {
  bool learn = false;
  double value = 1.0;  // fixed alpha_{t,0}, or the starting point when learning
  double delta = 0.5;  // learning rate
  int max_iter = 50;
  double tol = 1e-3;   // relative: stop when |alpha0' - alpha0| <= tol * alpha0
};

struct TreeConfig {
  int width = 5;   // K
  int height = 2;  // H
  std::optional<double> eta;
  std::vector<int> level_k;  // fixed child count per level (level 0 = root)
  Alpha0Policy alpha0;
  int outer = 30;  // N
  int inner = 30;  // n
  std::uint64_t seed = 0;
  double eig_tol = 1e-12;

  void validate() const {
    if (width < 1) throw ContractViolation("width K must be >= 1");
    if (height < 1) throw ContractViolation("height H must be >= 1");
    if (eta && (*eta < 0.0 || *eta > 1.0)) throw ContractViolation("eta must lie in [0, 1]");
    if (outer < 1 || inner < 1) throw ContractViolation("outer N and inner n must be >= 1");
    if (!(alpha0.value > 0)) throw ContractViolation("alpha0 must be positive");
    if (!(alpha0.delta > 0) || alpha0.delta > 1) throw ContractViolation("delta must lie in (0, 1]");
    for (int k : level_k)
      if (k < 0 || k > width) throw WidthBoundError("per-level k must lie in [0, K]");
  }
};

struct NodeDiagnostics {
  std::string leaf_reason;  // why expansion stopped here, if it was attempted
  std::size_t eligible_docs = 0;
  std::vector<double> e2_eigenvalues;
  std::vector<double> m2_eigenvalues;
  std::vector<double> tensor_eigenvalues;
  double lambda_sum = 0.0;  // sum of raw lambda_z over children
  int extraction_failures = 0;
  int floored_eigenvalues = 0;
  std::size_t moment_passes = 0;
  bool alpha0_learned = false;
  bool alpha0_converged = true;
  int alpha0_iterations = 0;
  double raw_negative_mass = 0.0;  // of this node's own phi, from its parent's decomposition
};

struct TopicNode {
  NodePath path;
  std::vector<double> alpha;  // alpha_{t,z} for each child
  double alpha0 = 0.0;        // alpha_{t,0} used when the node was expanded
  double lambda = 1.0;        // raw mixing weight within the parent
  double weight = 1.0;        // lambda / sum of sibling lambdas
  Eigen::VectorXd phi;        // recovered word distribution (root: M1)
  std::vector<TopicNode> children;
  NodeDiagnostics diagnostics;
  std::vector<std::pair<std::string, double>> phrases;  // ranked, for display

  bool is_leaf() const noexcept { return children.empty(); }
  double alpha_sum() const { return std::accumulate(alpha.begin(), alpha.end(), 0.0); }
};

struct TopicTree {
  TopicNode root;
  TreeConfig config;
  std::string corpus_digest;
  std::size_t vocab_size = 0;

  std::size_t node_count() const {
    std::size_t n = 0;
    std::function<void(const TopicNode&)> walk = [&](const TopicNode& t) {
      ++n;
      for (const auto& c : t.children) walk(c);
    };
    walk(root);
    return n;
  }
};

struct ExpansionStats {
  NodePath path;
  int k = 0;
  std::size_t eligible_docs = 0;
  std::size_t moment_passes = 0;
  double seconds_moments = 0, seconds_eigen = 0, seconds_project = 0, seconds_decompose = 0, seconds_total = 0;
  std::string leaf_reason;
};

using ExpansionObserver = std::function<void(const ExpansionStats&)>;

/// Thrown when a cancel callback asks a build to stop between expansions.
class Cancelled : public Error {
 public:
  Cancelled() : Error("build cancelled") {}
};

inline const TopicNode& find_node(const TopicNode& root, const NodePath& path) {
  const TopicNode* node = &root;
  for (int step : path.steps()) {
    if (step < 1 || static_cast<std::size_t>(step) > node->children.size())
      throw LookupError("unknown node path '" + path.str() + "'");
    node = &node->children[static_cast<std::size_t>(step - 1)];
  }
  return *node;
}

inline TopicNode& find_node(TopicNode& root, const NodePath& path) {
  return const_cast<TopicNode&>(find_node(static_cast<const TopicNode&>(root), path));
}

/// Mixture of the children: sum_z (alpha_z / alpha_0) phi_{t/z}.
inline Eigen::VectorXd marginal_phi(const TopicNode& node) {
  if (node.children.empty()) throw ContractViolation("marginal_phi: '" + node.path.str() + "' is a leaf");
  const double a0 = node.alpha_sum();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(node.children.front().phi.size());
  for (std::size_t z = 0; z < node.children.size(); ++z) out += (node.alpha[z] / a0) * node.children[z].phi;
  return out;
}

/// Smallest k with g(k)/g(K) > eta, where g is the cumulative sum of the
/// (non-negative part of the) descending eigenvalues. eta <= 0 gives 0 and
/// eta >= 1 gives K.
inline int select_num_topics(const Eigen::VectorXd& sigma, double eta) {
  const int K = static_cast<int>(sigma.size());
  for (int z = 1; z < K; ++z)
    if (sigma[z] > sigma[z - 1]) throw ContractViolation("select_num_topics: eigenvalues must be sorted descending");
  double total = 0.0;
  for (int z = 0; z < K; ++z) total += std::max(0.0, sigma[z]);
  if (!(total > 0)) throw DegenerateNodeError("all eigenvalues are zero");
  if (eta <= 0.0) return 0;
  if (eta >= 1.0) return K;
  double g = 0.0;
  for (int z = 0; z < K; ++z) {
    g += std::max(0.0, sigma[z]);
    if (g / total > eta) return z + 1;
  }
  return K;
}

/// Everything about a node that does not depend on alpha_0: one pass for
/// (M1, E2), the E2 eigenpairs, and one pass for E3 on the top-k basis.
struct NodeMoments {
  FirstSecondMoments first_second;
  EigenPairs e2_eig;  // at least k pairs
  Tensor3 e3_basis;   // E3(U_k, U_k, U_k)
  int k = 0;
};

struct NodeDecomposition {
  MomentBundle bundle;
  DecompositionResult tensor;
  std::vector<Component> components;  // extraction order
  double lambda_sum = 0.0;
};

inline NodeDecomposition decompose_at(const NodeMoments& nm, double alpha0, int N, int n, std::uint64_t seed) {
  NodeDecomposition d;
  d.bundle = whiten(nm.first_second.m1, nm.first_second.e2, nm.e2_eig, alpha0, nm.k);
  d.tensor = power_decompose(assemble_t3(nm.e3_basis, d.bundle), N, n, seed);
  d.components = recover_components(d.tensor.pairs, d.bundle);
  for (const auto& c : d.components) d.lambda_sum += c.lambda;
  return d;
}

/// |alpha0' - alpha0| with alpha0' = sum_z alpha_{t,z} = alpha0 * sum_z lambda_z.
inline double alpha0_discrepancy(const NodeMoments& nm, double alpha0, int N, int n, std::uint64_t seed) {
  auto d = decompose_at(nm, alpha0, N, n, seed);
  return std::abs(alpha0 * d.lambda_sum - alpha0);
}

struct Alpha0Result {
  double alpha0 = 1.0;
  bool converged = false;
  int iterations = 0;
  double discrepancy = 0.0;
};

/// Fixed-point learning of alpha_{t,0}: decompose, alpha0' = sum_z alpha_{t,z},
/// alpha0 <- alpha0 + delta (alpha0' - alpha0). Without convergence the best
/// iterate seen is returned with converged = false.
inline Alpha0Result learn_alpha0(const NodeMoments& nm, double init, double delta, int max_iter, double tol, int N,
                                 int n, std::uint64_t seed) {
  if (!(delta > 0) || delta > 1) throw ContractViolation("learn_alpha0: delta must lie in (0, 1]");
  Alpha0Result best;
  best.alpha0 = init;
  best.discrepancy = std::numeric_limits<double>::infinity();
  double a0 = init;
  for (int it = 1; it <= max_iter; ++it) {
    double next;
    try {
      auto d = decompose_at(nm, a0, N, n, seed);
      next = a0 * d.lambda_sum;
    } catch (const Error&) {
      break;  // whitening failed at this alpha0; keep the best iterate so far
    }
    const double gap = std::abs(next - a0);
    best.iterations = it;
    if (gap < best.discrepancy) {
      best.discrepancy = gap;
      best.alpha0 = a0;
    }
    if (gap <= tol * a0) {
      best.alpha0 = a0;
      best.discrepancy = gap;
      best.converged = true;
      return best;
    }
    a0 = std::max(a0 + delta * (next - a0), 1e-6);
  }
  return best;
}

struct ExpandRequest {
  std::optional<int> k;         // explicit branch count; otherwise per-level k / eta / K
  std::optional<double> alpha0; // explicit alpha_{t,0}; otherwise the config policy
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline int planned_k(const TreeConfig& cfg, std::size_t level) {
  if (level < cfg.level_k.size()) return cfg.level_k[level];
  return cfg.width;
}

}  // namespace detail

/// Expands `node` (a leaf) from its topical counts: moments, E2
/// eigenpairs, whitening, the whitened third moment, the power method and
/// recovery. Failure modes leave the node a leaf with a reason attached.
inline ExpansionStats expand_with_counts(TopicNode& node, const TopicalCounts& counts, const TreeConfig& cfg,
                                         const ExpandRequest& req = {}) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  ExpansionStats st;
  st.path = node.path;
  node.children.clear();
  node.alpha.clear();
  node.alpha0 = 0.0;
  auto& diag = node.diagnostics;
  const double keep_negative_mass = diag.raw_negative_mass;
  diag = NodeDiagnostics{};
  diag.raw_negative_mass = keep_negative_mass;
  const std::size_t passes_before = counts.moment_passes();

  auto finish = [&](std::string reason) {
    diag.leaf_reason = std::move(reason);
    diag.moment_passes = counts.moment_passes() - passes_before;
    st.leaf_reason = diag.leaf_reason;
    st.moment_passes = diag.moment_passes;
    st.seconds_total = detail::seconds_since(t_start);
    return st;
  };

  const int V = static_cast<int>(counts.vocab_size);
  int k = 0;
  bool choose_by_eta = false;
  if (req.k) {
    if (*req.k > cfg.width) throw WidthBoundError("k = " + std::to_string(*req.k) + " exceeds width K = " + std::to_string(cfg.width));
    if (*req.k < 1) throw ContractViolation("k must be >= 1");
    k = *req.k;
  } else if (node.path.level() < cfg.level_k.size()) {
    k = cfg.level_k[node.path.level()];
    if (k == 0) return finish("k_is_zero");
  } else if (cfg.eta) {
    choose_by_eta = true;
    k = cfg.width;
  } else {
    k = cfg.width;
  }

  diag.eligible_docs = counts.num_eligible();
  st.eligible_docs = diag.eligible_docs;
  if (diag.eligible_docs == 0) return finish("no_eligible_documents");

  auto t0 = clock::now();
  NodeMoments nm;
  nm.first_second = estimate_m1_e2(counts);
  st.seconds_moments = detail::seconds_since(t0);
  if (node.path.is_root()) node.phi = nm.first_second.m1;

  t0 = clock::now();
  const int kmax = std::min(k, V);
  try {
    nm.e2_eig = top_k_eigenpairs(nm.first_second.e2, kmax, cfg.eig_tol);
  } catch (const ConvergenceError& e) {
    return finish(std::string("eigensolver: ") + e.what());
  }
  diag.e2_eigenvalues.assign(nm.e2_eig.values.data(), nm.e2_eig.values.data() + nm.e2_eig.values.size());
  if (choose_by_eta) {
    try {
      k = select_num_topics(nm.e2_eig.values, *cfg.eta);
    } catch (const DegenerateNodeError&) {
      return finish("zero_spectrum");
    }
    if (k == 0) return finish("eta_selected_zero_children");
  }
  k = std::min(k, kmax);
  nm.k = k;
  st.k = k;

  double alpha0 = req.alpha0.value_or(cfg.alpha0.value);
  const bool learn = !req.alpha0 && cfg.alpha0.learn;
  try {
    (void)whiten(nm.first_second.m1, nm.first_second.e2, nm.e2_eig, alpha0, k);
  } catch (const RankDeficiencyError& e) {
    return finish(std::string("rank_deficient: ") + e.what());
  }
  st.seconds_eigen = detail::seconds_since(t0);

  t0 = clock::now();
  nm.e3_basis = project_e3(counts, nm.e2_eig.vectors.leftCols(k));
  st.seconds_project = detail::seconds_since(t0);

  t0 = clock::now();
  const std::uint64_t seed = node_seed(cfg.seed, node.path);
  if (learn) {
    auto res = learn_alpha0(nm, alpha0, cfg.alpha0.delta, cfg.alpha0.max_iter, cfg.alpha0.tol, cfg.outer, cfg.inner, seed);
    alpha0 = res.alpha0;
    diag.alpha0_learned = true;
    diag.alpha0_converged = res.converged;
    diag.alpha0_iterations = res.iterations;
  }
  NodeDecomposition dec;
  try {
    dec = decompose_at(nm, alpha0, cfg.outer, cfg.inner, seed);
  } catch (const RankDeficiencyError& e) {
    return finish(std::string("rank_deficient: ") + e.what());
  } catch (const InvalidEigenvalueError& e) {
    return finish(std::string("invalid_component: ") + e.what());
  }
  st.seconds_decompose = detail::seconds_since(t0);

  diag.m2_eigenvalues.assign(dec.bundle.sigma.data(), dec.bundle.sigma.data() + dec.bundle.sigma.size());
  for (const auto& p : dec.tensor.pairs) diag.tensor_eigenvalues.push_back(p.lambda);
  diag.extraction_failures = static_cast<int>(dec.tensor.failed.size());
  diag.floored_eigenvalues = dec.bundle.floored;
  diag.lambda_sum = dec.lambda_sum;
  if (dec.components.empty()) return finish("extraction_failed");

  std::vector<std::size_t> order(dec.components.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dec.components[a].lambda > dec.components[b].lambda;
  });
  node.alpha0 = alpha0;
  for (std::size_t z = 0; z < order.size(); ++z) {
    const auto& comp = dec.components[order[z]];
    TopicNode child;
    child.path = node.path.child(static_cast<int>(z + 1));
    child.lambda = comp.lambda;
    child.weight = comp.lambda / dec.lambda_sum;
    // With one component the mixture is the mean itself.
    child.phi = order.size() == 1 && k == 1 ? nm.first_second.m1 : comp.v;
    child.diagnostics.raw_negative_mass = comp.raw_negative_mass;
    node.alpha.push_back(alpha0 * comp.lambda);
    node.children.push_back(std::move(child));
  }
  diag.leaf_reason.clear();
  diag.moment_passes = counts.moment_passes() - passes_before;
  st.moment_passes = diag.moment_passes;
  st.seconds_total = detail::seconds_since(t_start);
  return st;
}

/// Topical counts of the node at `path`, derived top-down from the root.
inline TopicalCounts counts_for(const TopicTree& tree, const Corpus& corpus, const NodePath& path) {
  TopicalCounts counts = root_counts(corpus);
  const TopicNode* node = &tree.root;
  for (int step : path.steps()) {
    if (step < 1 || static_cast<std::size_t>(step) > node->children.size())
      throw LookupError("unknown node path '" + path.str() + "'");
    std::vector<Eigen::VectorXd> phis;
    for (const auto& c : node->children) phis.push_back(c.phi);
    counts = topical_counts(counts, node->alpha, phis, step);
    node = &node->children[static_cast<std::size_t>(step - 1)];
  }
  return counts;
}

struct BuildHooks {
  ExpansionObserver observer;
  std::function<bool()> cancel;  // returns true to stop before the next expansion
};

namespace detail {

inline void grow(TopicNode& node, const TopicalCounts& counts, const TreeConfig& cfg, const BuildHooks& hooks,
                 const ExpandRequest& first = {}) {
  if (node.path.level() >= static_cast<std::size_t>(cfg.height)) return;
  if (hooks.cancel && hooks.cancel()) throw Cancelled();
  auto st = expand_with_counts(node, counts, cfg, first);
  if (hooks.observer) hooks.observer(st);
  if (node.children.empty()) return;
  std::vector<Eigen::VectorXd> phis;
  for (const auto& c : node.children) phis.push_back(c.phi);
  auto child_counts = split_counts(counts, node.alpha, phis);
  for (std::size_t z = 0; z < node.children.size(); ++z) grow(node.children[z], child_counts[z], cfg, hooks);
}

}  // namespace detail

inline TopicTree make_root_tree(const Corpus& corpus, const TreeConfig& cfg) {
  cfg.validate();
  TopicTree tree;
  tree.config = cfg;
  tree.corpus_digest = corpus.digest();
  tree.vocab_size = corpus.vocab_size();
  tree.root.path = NodePath::root();
  Eigen::VectorXd unigram = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(corpus.vocab_size()));
  for (const auto& c : corpus.counts())
    for (auto [w, n] : c) unigram[w] += n;
  if (corpus.total_tokens() > 0) unigram /= static_cast<double>(corpus.total_tokens());
  tree.root.phi = unigram;
  return tree;
}

/// Top-down recursive construction to height H; degenerate nodes become
/// annotated leaves.
inline TopicTree build_hierarchy(const Corpus& corpus, const TreeConfig& cfg, const BuildHooks& hooks = {}) {
  TopicTree tree = make_root_tree(corpus, cfg);
  if (corpus.num_eligible() == 0) {
    tree.root.diagnostics.leaf_reason = "no_eligible_documents";
    return tree;
  }
  auto counts = root_counts(corpus);
  detail::grow(tree.root, counts, cfg, hooks);
  return tree;
}

inline void check_corpus(const TopicTree& tree, const Corpus& corpus) {
  if (tree.corpus_digest != corpus.digest())
    throw StructuralError("tree was built from a different corpus (digest " + tree.corpus_digest + " vs " +
                          corpus.digest() + ")");
}

/// Expands one leaf (a single level).
inline ExpansionStats expand_node(TopicTree& tree, const Corpus& corpus, const NodePath& path,
                                  const ExpandRequest& req = {}) {
  check_corpus(tree, corpus);
  TopicNode& node = find_node(tree.root, path);
  if (!node.is_leaf()) throw NotALeafError("node '" + path.str() + "' is not a leaf");
  auto counts = counts_for(tree, corpus, path);
  return expand_with_counts(node, counts, tree.config, req);
}

/// Discards the subtree under `path`, re-expands it with `new_k` children and
/// regrows its descendants per the tree config. Nodes outside the subtree are
/// untouched.
inline void resplit_node(TopicTree& tree, const Corpus& corpus, const NodePath& path, int new_k,
                         const BuildHooks& hooks = {}) {
  check_corpus(tree, corpus);
  if (new_k > tree.config.width)
    throw WidthBoundError("k = " + std::to_string(new_k) + " exceeds width K = " + std::to_string(tree.config.width));
  if (new_k < 1) throw ContractViolation("k must be >= 1");
  TopicNode& node = find_node(tree.root, path);
  if (node.is_leaf()) throw NotExpandedError("node '" + path.str() + "' was never expanded");
  auto counts = counts_for(tree, corpus, path);
  ExpandRequest req;
  req.k = new_k;
  if (hooks.cancel && hooks.cancel()) throw Cancelled();
  auto st = expand_with_counts(node, counts, tree.config, req);
  if (hooks.observer) hooks.observer(st);
  if (node.children.empty()) return;
  std::vector<Eigen::VectorXd> phis;
  for (const auto& c : node.children) phis.push_back(c.phi);
  auto child_counts = split_counts(counts, node.alpha, phis);
  for (std::size_t z = 0; z < node.children.size(); ++z)
    detail::grow(node.children[z], child_counts[z], tree.config, hooks);
}

}  // namespace strod
