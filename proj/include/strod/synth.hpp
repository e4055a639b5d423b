#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "strod/assignment.hpp"
#include "strod/corpus.hpp"
#include "strod/error.hpp"
#include "strod/hierarchy.hpp"
#include "strod/path.hpp"

namespace strod {

/// Node of a generative topic tree: internal nodes carry a Dirichlet prior
/// over their children, leaves carry a word distribution.
struct GenNode {
  std::vector<double> alpha;
  std::vector<GenNode> children;
  std::vector<double> phi;

  bool is_leaf() const noexcept { return children.empty(); }
};

struct DocLength {
  enum class Kind { Fixed, Poisson } kind = Kind::Fixed;
  double value = 60;  // fixed length, or Poisson mean
};

struct GenerativeSpec {
  GenNode root;
  std::size_t vocab_size = 0;
  std::size_t num_docs = 0;
  DocLength length;
  std::uint64_t seed = 0;

  void validate() const {
    std::function<void(const GenNode&)> check = [&](const GenNode& n) {
      if (n.is_leaf()) {
        if (n.phi.size() != vocab_size) throw ContractViolation("leaf phi has wrong dimension");
        double s = 0.0;
        for (double v : n.phi) {
          if (v < 0) throw ContractViolation("leaf phi has a negative entry");
          s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ContractViolation("leaf phi does not sum to 1");
        return;
      }
      if (n.alpha.size() != n.children.size()) throw ContractViolation("alpha size differs from child count");
      for (double a : n.alpha)
        if (!(a > 0)) throw ContractViolation("alpha entries must be positive");
      for (const auto& c : n.children) check(c);
    };
    if (vocab_size == 0) throw ContractViolation("vocab_size must be positive");
    check(root);
  }
};

/// Word distribution of every node: leaves as given, internal nodes by
/// marginalizing children with weights alpha_z / alpha_0.
inline std::map<NodePath, Eigen::VectorXd> true_phis(const GenerativeSpec& spec) {
  std::map<NodePath, Eigen::VectorXd> out;
  std::function<Eigen::VectorXd(const GenNode&, const NodePath&)> walk = [&](const GenNode& n, const NodePath& p) {
    Eigen::VectorXd phi;
    if (n.is_leaf()) {
      phi = Eigen::Map<const Eigen::VectorXd>(n.phi.data(), static_cast<Eigen::Index>(n.phi.size()));
    } else {
      double a0 = 0.0;
      for (double a : n.alpha) a0 += a;
      phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.vocab_size));
      for (std::size_t z = 0; z < n.children.size(); ++z)
        phi += (n.alpha[z] / a0) * walk(n.children[z], p.child(static_cast<int>(z + 1)));
    }
    out[p] = phi;
    return phi;
  };
  walk(spec.root, NodePath::root());
  return out;
}

namespace detail {

/// log of a Gamma(shape, 1) draw; stable for tiny shapes via
/// Gamma(a) = Gamma(a + 1) * U^(1/a).
inline double log_gamma_draw(double shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (shape >= 1.0) {
    std::gamma_distribution<double> g(shape, 1.0);
    return std::log(std::max(g(rng), std::numeric_limits<double>::min()));
  }
  std::gamma_distribution<double> g(shape + 1.0, 1.0);
  double u;
  do u = unif(rng);
  while (u <= 0.0);
  return std::log(std::max(g(rng), std::numeric_limits<double>::min())) + std::log(u) / shape;
}

/// Dirichlet draw by normalized Gamma variables, computed in log space.
inline std::vector<double> dirichlet_draw(const std::vector<double>& alpha, std::mt19937_64& rng) {
  std::vector<double> logs(alpha.size());
  for (std::size_t z = 0; z < alpha.size(); ++z) logs[z] = log_gamma_draw(alpha[z], rng);
  const double mx = *std::max_element(logs.begin(), logs.end());
  double s = 0.0;
  for (double& l : logs) s += (l = std::exp(l - mx));
  for (double& l : logs) l /= s;
  return logs;
}

inline std::size_t categorical(const std::vector<double>& cdf, double u) {
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u * cdf.back());
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace detail

/// Samples a corpus: per document theta_t ~ Dir(alpha_t) for every internal
/// node, then per token a root-to-leaf path and a word from the leaf's phi.
/// Words are named w0..w{V-1} with vocabulary index = word number.
inline Corpus generate(const GenerativeSpec& spec) {
  spec.validate();
  std::vector<std::string> words;
  for (std::size_t x = 0; x < spec.vocab_size; ++x) words.push_back("w" + std::to_string(x));

  // Flatten the tree: internal nodes get a slot for theta.
  struct Flat {
    std::vector<double> alpha;
    std::vector<int> child;      // flat index of each child
    std::vector<double> word_cdf;  // leaves only
  };
  std::vector<Flat> flat;
  std::function<int(const GenNode&)> add = [&](const GenNode& n) {
    const int id = static_cast<int>(flat.size());
    flat.emplace_back();
    if (n.is_leaf()) {
      std::vector<double> cdf(n.phi.size());
      double s = 0.0;
      for (std::size_t x = 0; x < n.phi.size(); ++x) cdf[x] = (s += n.phi[x]);
      flat[id].word_cdf = std::move(cdf);
      return id;
    }
    flat[id].alpha = n.alpha;
    for (const auto& c : n.children) {
      const int cid = add(c);
      flat[id].child.push_back(cid);
    }
    return id;
  };
  add(spec.root);

  std::vector<Document> docs(spec.num_docs);
  std::vector<std::vector<double>> theta_cdf(flat.size());
  for (std::size_t i = 0; i < spec.num_docs; ++i) {
    std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(i + 1)));
    std::size_t len = static_cast<std::size_t>(spec.length.value);
    if (spec.length.kind == DocLength::Kind::Poisson) {
      std::poisson_distribution<long long> pois(spec.length.value);
      len = static_cast<std::size_t>(pois(rng));
    }
    for (std::size_t f = 0; f < flat.size(); ++f) {
      if (flat[f].child.empty()) continue;
      auto theta = detail::dirichlet_draw(flat[f].alpha, rng);
      double s = 0.0;
      for (double& t : theta) t = (s += t);
      theta_cdf[f] = std::move(theta);
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto& d = docs[i];
    d.id = "d" + std::to_string(i);
    d.tokens.reserve(len);
    for (std::size_t j = 0; j < len; ++j) {
      int node = 0;
      while (!flat[node].child.empty()) node = flat[node].child[detail::categorical(theta_cdf[node], unif(rng))];
      d.tokens.push_back(static_cast<WordId>(detail::categorical(flat[node].word_cdf, unif(rng))));
    }
    if (!d.tokens.empty()) d.sentence_bounds.push_back(0);
  }
  return Corpus::from_documents(Vocabulary(std::move(words)), std::move(docs), 3);
}

// GenerativeSpec JSON schema (version 1):
// {"vocab_size": V, "num_docs": D, "seed": s,
//  "doc_length": {"kind": "fixed" | "poisson", "value": x},
//  "root": node}   where node = {"alpha": [..], "children": [node..]} | {"phi": [..]}
inline GenNode gen_node_from_json(const nlohmann::json& j) {
  GenNode n;
  if (j.contains("phi")) {
    n.phi = j.at("phi").get<std::vector<double>>();
    return n;
  }
  n.alpha = j.at("alpha").get<std::vector<double>>();
  for (const auto& c : j.at("children")) n.children.push_back(gen_node_from_json(c));
  return n;
}

inline nlohmann::json gen_node_to_json(const GenNode& n) {
  if (n.is_leaf()) return {{"phi", n.phi}};
  nlohmann::json kids = nlohmann::json::array();
  for (const auto& c : n.children) kids.push_back(gen_node_to_json(c));
  return {{"alpha", n.alpha}, {"children", kids}};
}

inline GenerativeSpec spec_from_json(const nlohmann::json& j) {
  GenerativeSpec s;
  s.vocab_size = j.at("vocab_size").get<std::size_t>();
  s.num_docs = j.at("num_docs").get<std::size_t>();
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("doc_length")) {
    const auto& dl = j.at("doc_length");
    const auto kind = dl.value("kind", std::string("fixed"));
    if (kind == "fixed")
      s.length.kind = DocLength::Kind::Fixed;
    else if (kind == "poisson")
      s.length.kind = DocLength::Kind::Poisson;
    else
      throw ContractViolation("doc_length.kind must be 'fixed' or 'poisson'");
    s.length.value = dl.at("value").get<double>();
  }
  s.root = gen_node_from_json(j.at("root"));
  s.validate();
  return s;
}

inline nlohmann::json spec_to_json(const GenerativeSpec& s) {
  return {{"vocab_size", s.vocab_size},
          {"num_docs", s.num_docs},
          {"seed", s.seed},
          {"doc_length",
           {{"kind", s.length.kind == DocLength::Kind::Fixed ? "fixed" : "poisson"}, {"value", s.length.value}}},
          {"root", gen_node_to_json(s.root)}};
}

/// KL(p || q) after adding `smoothing` to every entry of both and renormalizing.
inline double smoothed_kl(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double smoothing) {
  if (p.size() != q.size()) throw StructuralError("KL between distributions of different length");
  const double sp = p.sum() + smoothing * static_cast<double>(p.size());
  const double sq = q.sum() + smoothing * static_cast<double>(q.size());
  double kl = 0.0;
  for (Eigen::Index x = 0; x < p.size(); ++x) {
    const double a = (p[x] + smoothing) / sp;
    const double b = (q[x] + smoothing) / sq;
    if (a > 0) kl += a * std::log(a / b);
  }
  return std::max(kl, 0.0);
}

struct MatchedPair {
  NodePath a, b;
  double kl = 0.0;          // KL(phi_a || phi_b)
  double kl_reverse = 0.0;  // KL(phi_b || phi_a)
};

struct VarianceReport {
  std::vector<MatchedPair> pairs;  // top-down order
  double mean_kl = 0.0;            // the run variance
  double mean_kl_reverse = 0.0;
  double mean_kl_symmetric = 0.0;
};

/// Top-down: children of each matched parent pair are matched by maximum
/// weight matching on -KL, then recursively their children.
inline VarianceReport run_variance(const TopicTree& a, const TopicTree& b, double smoothing = 1e-12) {
  VarianceReport rep;
  std::function<void(const TopicNode&, const TopicNode&)> walk = [&](const TopicNode& x, const TopicNode& y) {
    if (x.children.size() != y.children.size())
      throw StructuralError("child count differs at '" + x.path.str() + "' vs '" + y.path.str() + "'");
    const auto n = static_cast<Eigen::Index>(x.children.size());
    if (n == 0) return;
    Eigen::MatrixXd kl(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        kl(i, j) = smoothed_kl(x.children[static_cast<std::size_t>(i)].phi, y.children[static_cast<std::size_t>(j)].phi, smoothing);
    auto match = max_weight_matching(-kl);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& cx = x.children[static_cast<std::size_t>(i)];
      const auto& cy = y.children[static_cast<std::size_t>(match[static_cast<std::size_t>(i)])];
      rep.pairs.push_back({cx.path, cy.path, kl(i, match[static_cast<std::size_t>(i)]), smoothed_kl(cy.phi, cx.phi, smoothing)});
    }
    for (Eigen::Index i = 0; i < n; ++i)
      walk(x.children[static_cast<std::size_t>(i)], y.children[static_cast<std::size_t>(match[static_cast<std::size_t>(i)])]);
  };
  walk(a.root, b.root);
  if (!rep.pairs.empty()) {
    for (const auto& p : rep.pairs) {
      rep.mean_kl += p.kl;
      rep.mean_kl_reverse += p.kl_reverse;
    }
    rep.mean_kl /= static_cast<double>(rep.pairs.size());
    rep.mean_kl_reverse /= static_cast<double>(rep.pairs.size());
    rep.mean_kl_symmetric = 0.5 * (rep.mean_kl + rep.mean_kl_reverse);
  }
  return rep;
}

/// Mean run variance over all ordered pairs of distinct runs.
inline double average_run_variance(const std::vector<TopicTree>& runs, double smoothing = 1e-12) {
  if (runs.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t j = 0; j < runs.size(); ++j) {
      if (i == j) continue;
      total += run_variance(runs[i], runs[j], smoothing).mean_kl;
      ++count;
    }
  return total / static_cast<double>(count);
}

inline nlohmann::json variance_to_json(const VarianceReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"a", p.a.str()}, {"b", p.b.str()}, {"kl", p.kl}, {"kl_reverse", p.kl_reverse}});
  return {{"format", "strod-variance"},
          {"version", 1},
          {"variance", r.mean_kl},
          {"mean_kl", r.mean_kl},
          {"mean_kl_reverse", r.mean_kl_reverse},
          {"mean_kl_symmetric", r.mean_kl_symmetric},
          {"pairs", pairs}};
}

}  // namespace strod
