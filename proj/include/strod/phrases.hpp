#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "strod/corpus.hpp"
#include "strod/error.hpp"
#include "strod/hierarchy.hpp"
#include "strod/path.hpp"

namespace strod {

struct Phrase {
  std::vector<WordId> words;
  std::size_t frequency = 0;
  bool complete = true;
  bool phraseness_ok = true;
  double phraseness = 0.0;  // (f_obs - f_exp) / sqrt(f_obs) under the best split; 0 for unigrams

  bool rank_eligible() const noexcept { return complete && phraseness_ok; }
};

/// Sparse per-document phrase counts: (phrase index, count), sorted by index.
using PhraseCountVector = std::vector<std::pair<std::uint32_t, double>>;

struct PhraseTable {
  std::vector<Phrase> phrases;                 // ordered by (word ids) lexicographically
  std::vector<PhraseCountVector> doc_counts;   // c_{i,P}
  std::map<std::vector<WordId>, std::uint32_t> index;
  std::size_t total_tokens = 0;
  std::size_t minsup = 1;

  std::size_t frequency_of(const std::vector<WordId>& words) const {
    auto it = index.find(words);
    return it == index.end() ? 0 : phrases[it->second].frequency;
  }
};

inline std::string phrase_text(const std::vector<WordId>& words, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.word(words[i]);
  }
  return out;
}

namespace detail {

template <class Fn>
void for_each_sentence(const Document& d, Fn&& fn) {
  for (std::size_t s = 0; s < d.sentence_bounds.size(); ++s) {
    const std::size_t begin = d.sentence_bounds[s];
    const std::size_t end = s + 1 < d.sentence_bounds.size() ? d.sentence_bounds[s + 1] : d.tokens.size();
    fn(begin, end);
  }
}

}  // namespace detail

/// Frequent consecutive word sequences (length 2..max_len) inside sentences,
/// found level-wise: a length-n candidate is counted only where its length
/// n-1 prefix and suffix are both frequent. All single words are included.
inline PhraseTable mine_phrases(const Corpus& corpus, std::size_t minsup, std::size_t max_len) {
  if (minsup < 1) throw ContractViolation("mine_phrases: minsup must be >= 1");
  if (max_len < 2) throw ContractViolation("mine_phrases: max_len must be >= 2");
  std::map<std::vector<WordId>, std::size_t> freq;
  for (const auto& d : corpus.documents())
    for (WordId w : d.tokens) ++freq[{w}];

  std::map<std::vector<WordId>, std::size_t> frequent_prev;  // length n-1, freq >= minsup
  for (const auto& [p, f] : freq)
    if (f >= minsup) frequent_prev.emplace(p, f);

  for (std::size_t n = 2; n <= max_len && !frequent_prev.empty(); ++n) {
    std::map<std::vector<WordId>, std::size_t> level;
    std::vector<WordId> gram(n), prefix(n - 1), suffix(n - 1);
    for (const auto& d : corpus.documents()) {
      detail::for_each_sentence(d, [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j + n <= end; ++j) {
          std::copy(d.tokens.begin() + j, d.tokens.begin() + j + n, gram.begin());
          std::copy(gram.begin(), gram.end() - 1, prefix.begin());
          std::copy(gram.begin() + 1, gram.end(), suffix.begin());
          if (!frequent_prev.count(prefix) || !frequent_prev.count(suffix)) continue;
          ++level[gram];
        }
      });
    }
    frequent_prev.clear();
    for (auto& [p, f] : level)
      if (f >= minsup) {
        frequent_prev.emplace(p, f);
        freq.emplace(p, f);
      }
  }

  PhraseTable table;
  table.total_tokens = corpus.total_tokens();
  table.minsup = minsup;
  for (const auto& [p, f] : freq) {
    table.index.emplace(p, static_cast<std::uint32_t>(table.phrases.size()));
    table.phrases.push_back(Phrase{p, f});
  }

  table.doc_counts.resize(corpus.num_documents());
  std::vector<WordId> gram;
  for (std::size_t i = 0; i < corpus.num_documents(); ++i) {
    const auto& d = corpus.documents()[i];
    std::map<std::uint32_t, double> counts;
    detail::for_each_sentence(d, [&](std::size_t begin, std::size_t end) {
      for (std::size_t j = begin; j < end; ++j) {
        gram.clear();
        for (std::size_t n = 1; n <= max_len && j + n <= end; ++n) {
          gram.push_back(d.tokens[j + n - 1]);
          auto it = table.index.find(gram);
          if (it == table.index.end()) break;  // no longer extension can be frequent
          counts[it->second] += 1.0;
        }
      }
    });
    table.doc_counts[i].assign(counts.begin(), counts.end());
  }
  return table;
}

/// Marks quality flags. Completeness: P is incomplete when a one-word
/// extension (left or right) accounts for more than `completeness_tau` of its
/// occurrences. Phraseness: over every binary split P = A.B the expected
/// count under independence is f(A) f(B) / L; with the largest expectation,
/// score = (f - f_exp) / sqrt(f) must reach `phraseness_tau`.
inline PhraseTable filter_phrases(PhraseTable table, double completeness_tau, double phraseness_tau) {
  if (!std::isfinite(completeness_tau) || !std::isfinite(phraseness_tau))
    throw ContractViolation("filter_phrases: thresholds must be finite");
  std::vector<std::size_t> max_extension(table.phrases.size(), 0);
  for (const auto& p : table.phrases) {
    if (p.words.size() < 2) continue;
    std::vector<WordId> prefix(p.words.begin(), p.words.end() - 1);
    std::vector<WordId> suffix(p.words.begin() + 1, p.words.end());
    for (const auto* sub : {&prefix, &suffix}) {
      auto it = table.index.find(*sub);
      if (it != table.index.end()) max_extension[it->second] = std::max(max_extension[it->second], p.frequency);
    }
  }
  const double L = static_cast<double>(std::max<std::size_t>(table.total_tokens, 1));
  for (std::size_t i = 0; i < table.phrases.size(); ++i) {
    auto& p = table.phrases[i];
    const double f = static_cast<double>(p.frequency);
    p.complete = !(f > 0 && static_cast<double>(max_extension[i]) / f > completeness_tau);
    if (p.words.size() < 2) {
      p.phraseness = 0.0;
      p.phraseness_ok = true;
      continue;
    }
    double expected = 0.0;
    for (std::size_t s = 1; s < p.words.size(); ++s) {
      std::vector<WordId> a(p.words.begin(), p.words.begin() + static_cast<std::ptrdiff_t>(s));
      std::vector<WordId> b(p.words.begin() + static_cast<std::ptrdiff_t>(s), p.words.end());
      const double fa = static_cast<double>(table.frequency_of(a));
      const double fb = static_cast<double>(table.frequency_of(b));
      expected = std::max(expected, fa * fb / L);
    }
    p.phraseness = (f - expected) / std::sqrt(f);
    p.phraseness_ok = p.phraseness >= phraseness_tau;
  }
  return table;
}

/// c_{i,P}(t) for one node; indexed like PhraseTable::doc_counts.
using TopicalPhraseCounts = std::vector<PhraseCountVector>;

/// Splits a node's phrase counts among its children:
///   c_{i,P}(t/z) = c_{i,P}(t) alpha_z prod_{x in P} phi_{z,x} / sum_y alpha_y prod_{x in P} phi_{y,x}.
inline std::vector<TopicalPhraseCounts> split_phrase_counts(const PhraseTable& table, const TopicalPhraseCounts& parent,
                                                            const TopicNode& node) {
  const std::size_t k = node.children.size();
  if (k == 0) throw ContractViolation("split_phrase_counts: node is a leaf");
  const auto V = node.children.front().phi.size();
  Eigen::MatrixXd share(k, table.phrases.size());
  for (std::size_t p = 0; p < table.phrases.size(); ++p) {
    double den = 0.0;
    std::vector<double> num(k);
    for (std::size_t z = 0; z < k; ++z) {
      double prod = node.alpha[z];
      for (WordId x : table.phrases[p].words) {
        if (static_cast<Eigen::Index>(x) >= V) throw ContractViolation("phrase word outside the vocabulary");
        prod *= node.children[z].phi[x];
      }
      num[z] = prod;
      den += prod;
    }
    for (std::size_t z = 0; z < k; ++z) share(z, p) = den > 0 ? num[z] / den : 0.0;
  }
  std::vector<TopicalPhraseCounts> out(k, TopicalPhraseCounts(parent.size()));
  for (std::size_t i = 0; i < parent.size(); ++i)
    for (auto [p, c] : parent[i])
      for (std::size_t z = 0; z < k; ++z) {
        const double v = c * share(z, p);
        if (v > 0) out[z][i].emplace_back(p, v);
      }
  return out;
}

/// Topical phrase counts for every node of the tree, root counts = c_{i,P}.
inline std::map<NodePath, TopicalPhraseCounts> topical_phrase_counts(const PhraseTable& table, const TopicTree& tree) {
  std::map<NodePath, TopicalPhraseCounts> out;
  std::function<void(const TopicNode&, const TopicalPhraseCounts&)> walk = [&](const TopicNode& node,
                                                                              const TopicalPhraseCounts& counts) {
    out[node.path] = counts;
    if (node.is_leaf()) return;
    auto kids = split_phrase_counts(table, counts, node);
    for (std::size_t z = 0; z < node.children.size(); ++z) walk(node.children[z], kids[z]);
  };
  walk(tree.root, table.doc_counts);
  return out;
}

/// p(P|t): mean over documents with non-zero topical phrase mass of
/// c_{i,P}(t) / sum_{P'} c_{i,P'}(t). Only rank-eligible phrases count.
inline std::vector<double> phrase_popularity(const PhraseTable& table, const TopicalPhraseCounts& counts) {
  std::vector<double> p(table.phrases.size(), 0.0);
  std::size_t docs = 0;
  for (const auto& doc : counts) {
    double mass = 0.0;
    for (auto [idx, c] : doc)
      if (table.phrases[idx].rank_eligible()) mass += c;
    if (!(mass > 0)) continue;
    ++docs;
    for (auto [idx, c] : doc)
      if (table.phrases[idx].rank_eligible()) p[idx] += c / mass;
  }
  if (docs > 0)
    for (double& v : p) v /= static_cast<double>(docs);
  return p;
}

inline constexpr double kRankSmoothing = 1e-12;

/// r_t(P) = p(P|t) log(p(P|t) / (p(P|parent) + eps)); zero when p(P|t) = 0.
inline double pointwise_kl(double p_topic, double p_parent) {
  if (!(p_topic > 0)) return 0.0;
  return p_topic * std::log(p_topic / (p_parent + kRankSmoothing));
}

struct RankedPhrase {
  std::uint32_t phrase = 0;
  std::string text;
  double score = 0.0;
};

struct RankedPhrases {
  NodePath path;
  std::vector<RankedPhrase> entries;  // descending score, ties by text
};

inline RankedPhrases rank_phrases(const NodePath& path, const PhraseTable& table, const TopicalPhraseCounts& node_counts,
                                  const TopicalPhraseCounts& parent_counts, const Vocabulary& vocab) {
  if (path.is_root()) throw ContractViolation("rank_phrases: the root has no parent to compare against");
  const auto pt = phrase_popularity(table, node_counts);
  const auto pp = phrase_popularity(table, parent_counts);
  RankedPhrases out;
  out.path = path;
  for (std::size_t i = 0; i < table.phrases.size(); ++i) {
    if (!table.phrases[i].rank_eligible()) continue;
    out.entries.push_back({static_cast<std::uint32_t>(i), phrase_text(table.phrases[i].words, vocab),
                           pointwise_kl(pt[i], pp[i])});
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const RankedPhrase& a, const RankedPhrase& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.text < b.text;
  });
  return out;
}

/// Key under which singular/plural variants collapse for display.
inline std::string plural_fold_key(const std::string& text) {
  if (text.size() > 3 && text.back() == 's' && text[text.size() - 2] != 's') return text.substr(0, text.size() - 1);
  return text;
}

/// The first `top_n` entries, showing only the best-ranked of any phrases that
/// differ only by a trailing plural 's'. Presentation only.
inline std::vector<RankedPhrase> display_phrases(const RankedPhrases& ranked, std::size_t top_n) {
  std::vector<RankedPhrase> out;
  std::unordered_set<std::string> seen;
  for (const auto& e : ranked.entries) {
    if (out.size() >= top_n) break;
    if (!seen.insert(plural_fold_key(e.text)).second) continue;
    out.push_back(e);
  }
  return out;
}

/// Rankings for every non-root node.
inline std::map<NodePath, RankedPhrases> rank_all(const PhraseTable& table, const TopicTree& tree, const Vocabulary& vocab) {
  auto counts = topical_phrase_counts(table, tree);
  std::map<NodePath, RankedPhrases> out;
  for (const auto& [path, c] : counts) {
    if (path.is_root()) continue;
    out.emplace(path, rank_phrases(path, table, c, counts.at(path.parent()), vocab));
  }
  return out;
}

/// Stores the top `top_n` display phrases on every non-root node.
inline void annotate_phrases(TopicTree& tree, const PhraseTable& table, const Vocabulary& vocab, std::size_t top_n) {
  auto ranked = rank_all(table, tree, vocab);
  std::function<void(TopicNode&)> walk = [&](TopicNode& node) {
    node.phrases.clear();
    if (auto it = ranked.find(node.path); it != ranked.end())
      for (const auto& e : display_phrases(it->second, top_n)) node.phrases.emplace_back(e.text, e.score);
    for (auto& c : node.children) walk(c);
  };
  walk(tree.root);
}

/// TSV export: path, rank (1-based), phrase, score. Display folding applies.
inline void write_phrase_tsv(std::ostream& out, const std::map<NodePath, RankedPhrases>& ranked, std::size_t top_n) {
  char buf[64];
  out << "path\trank\tphrase\tscore\n";
  for (const auto& [path, r] : ranked) {
    std::size_t rank = 0;
    for (const auto& e : display_phrases(r, top_n)) {
      std::snprintf(buf, sizeof buf, "%.17g", e.score);
      out << path.str() << '\t' << ++rank << '\t' << e.text << '\t' << buf << '\n';
    }
  }
}

}  // namespace strod
