#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "strod/corpus.hpp"
#include "strod/error.hpp"
#include "strod/hierarchy.hpp"
#include "strod/path.hpp"

namespace strod {

inline constexpr int kTreeFormatVersion = 1;
inline constexpr std::size_t kTopWords = 20;

struct PhraseSettings {
  std::size_t minsup = 5;
  std::size_t max_len = 5;
  double completeness = 0.8;
  double phraseness = 4.0;
  std::size_t top_n = 10;

  void validate() const {
    if (minsup < 1) throw ContractViolation("minsup must be >= 1");
    if (max_len < 2) throw ContractViolation("max phrase length must be >= 2");
  }
};

/// One revision step. `build` grows a fresh tree from the config; `expand`
/// and `resplit` act on one node.
struct JournalEntry {
  enum class Op { Build, Expand, Resplit } op = Op::Build;
  NodePath path;
  std::optional<int> k;
  std::optional<double> alpha0;
};

/// Everything persisted for a tree: the tree, how phrases were ranked, and
/// the journal that reproduces it from the corpus.
struct TreeDocument {
  TopicTree tree;
  PhraseSettings phrases;
  std::vector<JournalEntry> journal;
};

inline std::string op_name(JournalEntry::Op op) {
  switch (op) {
    case JournalEntry::Op::Build: return "build";
    case JournalEntry::Op::Expand: return "expand";
    case JournalEntry::Op::Resplit: return "resplit";
  }
  return "build";
}

inline nlohmann::json entry_to_json(const JournalEntry& e) {
  nlohmann::json j = {{"op", op_name(e.op)}};
  if (e.op != JournalEntry::Op::Build) j["path"] = e.path.str();
  if (e.k) j["k"] = *e.k;
  if (e.alpha0) j["alpha0"] = *e.alpha0;
  return j;
}

inline JournalEntry entry_from_json(const nlohmann::json& j) {
  JournalEntry e;
  const auto op = j.at("op").get<std::string>();
  if (op == "build")
    e.op = JournalEntry::Op::Build;
  else if (op == "expand")
    e.op = JournalEntry::Op::Expand;
  else if (op == "resplit")
    e.op = JournalEntry::Op::Resplit;
  else
    throw ContractViolation("unknown journal op '" + op + "'");
  if (j.contains("path")) e.path = NodePath::parse(j.at("path").get<std::string>());
  if (j.contains("k")) e.k = j.at("k").get<int>();
  if (j.contains("alpha0")) e.alpha0 = j.at("alpha0").get<double>();
  if (e.op == JournalEntry::Op::Resplit && !e.k) throw ContractViolation("resplit entry needs k");
  return e;
}

inline nlohmann::json config_to_json(const TreeConfig& c) {
  nlohmann::json j = {{"width", c.width},
                      {"height", c.height},
                      {"eta", nullptr},
                      {"level_k", c.level_k},
                      {"alpha0",
                       {{"learn", c.alpha0.learn},
                        {"value", c.alpha0.value},
                        {"delta", c.alpha0.delta},
                        {"max_iter", c.alpha0.max_iter},
                        {"tol", c.alpha0.tol}}},
                      {"outer", c.outer},
                      {"inner", c.inner},
                      {"seed", c.seed},
                      {"eig_tol", c.eig_tol}};
  if (c.eta) j["eta"] = *c.eta;
  return j;
}

inline TreeConfig config_from_json(const nlohmann::json& j) {
  TreeConfig c;
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  if (j.contains("eta") && !j.at("eta").is_null()) c.eta = j.at("eta").get<double>();
  c.level_k = j.value("level_k", c.level_k);
  if (j.contains("alpha0")) {
    const auto& a = j.at("alpha0");
    c.alpha0.learn = a.value("learn", c.alpha0.learn);
    c.alpha0.value = a.value("value", c.alpha0.value);
    c.alpha0.delta = a.value("delta", c.alpha0.delta);
    c.alpha0.max_iter = a.value("max_iter", c.alpha0.max_iter);
    c.alpha0.tol = a.value("tol", c.alpha0.tol);
  }
  c.outer = j.value("outer", c.outer);
  c.inner = j.value("inner", c.inner);
  c.seed = j.value("seed", c.seed);
  c.eig_tol = j.value("eig_tol", c.eig_tol);
  c.validate();
  return c;
}

inline nlohmann::json phrase_settings_to_json(const PhraseSettings& p) {
  return {{"minsup", p.minsup},
          {"max_len", p.max_len},
          {"completeness", p.completeness},
          {"phraseness", p.phraseness},
          {"top_n", p.top_n}};
}

inline PhraseSettings phrase_settings_from_json(const nlohmann::json& j) {
  PhraseSettings p;
  p.minsup = j.value("minsup", p.minsup);
  p.max_len = j.value("max_len", p.max_len);
  p.completeness = j.value("completeness", p.completeness);
  p.phraseness = j.value("phraseness", p.phraseness);
  p.top_n = j.value("top_n", p.top_n);
  p.validate();
  return p;
}

inline nlohmann::json diagnostics_to_json(const NodeDiagnostics& d) {
  return {{"leaf_reason", d.leaf_reason},
          {"eligible_docs", d.eligible_docs},
          {"e2_eigenvalues", d.e2_eigenvalues},
          {"m2_eigenvalues", d.m2_eigenvalues},
          {"tensor_eigenvalues", d.tensor_eigenvalues},
          {"lambda_sum", d.lambda_sum},
          {"extraction_failures", d.extraction_failures},
          {"floored_eigenvalues", d.floored_eigenvalues},
          {"moment_passes", d.moment_passes},
          {"alpha0_learned", d.alpha0_learned},
          {"alpha0_converged", d.alpha0_converged},
          {"alpha0_iterations", d.alpha0_iterations},
          {"raw_negative_mass", d.raw_negative_mass}};
}

/// The `top` most probable words, ties broken by word id.
inline std::vector<std::pair<WordId, double>> top_words(const Eigen::VectorXd& phi, std::size_t top) {
  std::vector<std::pair<WordId, double>> all;
  all.reserve(static_cast<std::size_t>(phi.size()));
  for (Eigen::Index x = 0; x < phi.size(); ++x)
    if (phi[x] > 0) all.emplace_back(static_cast<WordId>(x), phi[x]);
  const std::size_t n = std::min(top, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
  all.resize(n);
  return all;
}

/// A node without its children.
inline nlohmann::json node_to_json_shallow(const TopicNode& n, const Vocabulary& vocab) {
  nlohmann::json top = nlohmann::json::array();
  for (auto [w, p] : top_words(n.phi, kTopWords)) top.push_back({vocab.word(w), p});
  nlohmann::json phrases = nlohmann::json::array();
  for (const auto& [text, score] : n.phrases) phrases.push_back({text, score});
  return {{"path", n.path.str()},
          {"alpha", n.alpha},
          {"alpha0", n.alpha0},
          {"lambda", n.lambda},
          {"weight", n.weight},
          {"phi_top", top},
          {"phrases", phrases},
          {"diagnostics", diagnostics_to_json(n.diagnostics)}};
}

inline nlohmann::json node_to_json(const TopicNode& n, const Vocabulary& vocab) {
  auto j = node_to_json_shallow(n, vocab);
  nlohmann::json kids = nlohmann::json::array();
  for (const auto& c : n.children) kids.push_back(node_to_json(c, vocab));
  j["children"] = std::move(kids);
  return j;
}

inline nlohmann::json document_to_json(const TreeDocument& doc, const Vocabulary& vocab) {
  nlohmann::json journal = nlohmann::json::array();
  for (const auto& e : doc.journal) journal.push_back(entry_to_json(e));
  return {{"format", "strod-tree"},
          {"version", kTreeFormatVersion},
          {"corpus_digest", doc.tree.corpus_digest},
          {"vocab_size", doc.tree.vocab_size},
          {"config", config_to_json(doc.tree.config)},
          {"phrase_settings", phrase_settings_to_json(doc.phrases)},
          {"journal", journal},
          {"root", node_to_json(doc.tree.root, vocab)}};
}

/// Canonical text form: two-space indentation, shortest round-trip doubles,
/// trailing newline. Equal trees give equal bytes.
inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline std::string serialize_document(const TreeDocument& doc, const Vocabulary& vocab) {
  return dump_json(document_to_json(doc, vocab));
}

/// The parts of a saved tree needed to replay it: header, config, journal.
struct TreeHeader {
  std::string corpus_digest;
  std::size_t vocab_size = 0;
  TreeConfig config;
  PhraseSettings phrases;
  std::vector<JournalEntry> journal;
};

inline TreeHeader header_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "strod-tree") throw StructuralError("not a strod-tree document");
  if (j.value("version", 0) != kTreeFormatVersion)
    throw StructuralError("unsupported tree format version " + std::to_string(j.value("version", 0)));
  TreeHeader h;
  h.corpus_digest = j.at("corpus_digest").get<std::string>();
  h.vocab_size = j.at("vocab_size").get<std::size_t>();
  h.config = config_from_json(j.at("config"));
  h.phrases = phrase_settings_from_json(j.value("phrase_settings", nlohmann::json::object()));
  for (const auto& e : j.at("journal")) h.journal.push_back(entry_from_json(e));
  return h;
}

inline std::string read_text_file(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open '" + file + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + file + "'");
  out << text;
  if (!out) throw Error("write failed for '" + file + "'");
}

/// Sparse sidecar with the full word distributions: "path<TAB>word<TAB>prob"
/// per nonzero entry, probabilities with 17 significant digits.
inline void write_phi_sidecar(std::ostream& out, const TopicTree& tree, const Vocabulary& vocab) {
  char buf[40];
  std::function<void(const TopicNode&)> walk = [&](const TopicNode& n) {
    for (Eigen::Index x = 0; x < n.phi.size(); ++x) {
      if (n.phi[x] == 0.0) continue;
      std::snprintf(buf, sizeof buf, "%.17g", n.phi[x]);
      out << n.path.str() << '\t' << vocab.word(static_cast<WordId>(x)) << '\t' << buf << '\n';
    }
    for (const auto& c : n.children) walk(c);
  };
  walk(tree.root);
}

}  // namespace strod
