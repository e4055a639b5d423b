#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "strod/corpus.hpp"
#include "strod/error.hpp"
#include "strod/hierarchy.hpp"
#include "strod/phrases.hpp"
#include "strod/serialize.hpp"

namespace strod {

/// Phrases mined and filtered once per corpus.
inline PhraseTable prepare_phrases(const Corpus& corpus, const PhraseSettings& s) {
  s.validate();
  return filter_phrases(mine_phrases(corpus, s.minsup, s.max_len), s.completeness, s.phraseness);
}

/// Applies one journal entry to `doc` and refreshes phrase annotations. The
/// entry is appended to the journal only if it succeeds.
inline ExpansionStats apply_entry(TreeDocument& doc, const Corpus& corpus, const PhraseTable& table,
                                  const JournalEntry& e, const BuildHooks& hooks = {}) {
  ExpansionStats last;
  BuildHooks h = hooks;
  h.observer = [&](const ExpansionStats& st) {
    last = st;
    if (hooks.observer) hooks.observer(st);
  };
  switch (e.op) {
    case JournalEntry::Op::Build:
      doc.tree = build_hierarchy(corpus, doc.tree.config, h);
      doc.journal.clear();
      break;
    case JournalEntry::Op::Expand: {
      ExpandRequest req;
      req.k = e.k;
      req.alpha0 = e.alpha0;
      last = expand_node(doc.tree, corpus, e.path, req);
      if (hooks.observer) hooks.observer(last);
      break;
    }
    case JournalEntry::Op::Resplit:
      resplit_node(doc.tree, corpus, e.path, *e.k, h);
      break;
  }
  annotate_phrases(doc.tree, table, corpus.vocabulary(), doc.phrases.top_n);
  doc.journal.push_back(e);
  return last;
}

/// Rebuilds a tree from its header by replaying the journal on `corpus`,
/// starting from the root-only tree.
inline TreeDocument replay(const TreeHeader& header, const Corpus& corpus, const PhraseTable& table,
                           const BuildHooks& hooks = {}) {
  if (header.corpus_digest != corpus.digest())
    throw StructuralError("tree was built from a different corpus (digest " + header.corpus_digest + " vs " +
                          corpus.digest() + ")");
  if (header.vocab_size != corpus.vocab_size()) throw StructuralError("vocabulary size differs from the corpus");
  TreeDocument doc;
  doc.tree = make_root_tree(corpus, header.config);
  doc.phrases = header.phrases;
  for (const auto& e : header.journal) apply_entry(doc, corpus, table, e, hooks);
  return doc;
}

/// Loads a saved tree file against `corpus`: replays its journal and checks
/// the result reproduces the file byte for byte.
inline TreeDocument load_document(const std::string& file, const Corpus& corpus, const BuildHooks& hooks = {}) {
  const std::string text = read_text_file(file);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError("'" + file + "' is not valid JSON: " + e.what());
  }
  const auto header = header_from_json(j);
  const auto table = prepare_phrases(corpus, header.phrases);
  auto doc = replay(header, corpus, table, hooks);
  if (serialize_document(doc, corpus.vocabulary()) != text)
    throw StructuralError("replaying the journal of '" + file + "' does not reproduce the saved tree");
  return doc;
}

/// Immutable view published to readers: the document and its serialization.
struct Snapshot {
  TreeDocument doc;
  std::string json;
  std::uint64_t revision = 0;
};

/// Corpus + current tree + journal. Mutations are serialized by a writer
/// mutex and publish a new snapshot; readers hold snapshots that never change.
class Session {
 public:
  Session(std::shared_ptr<const Corpus> corpus, TreeConfig config, PhraseSettings phrases)
      : corpus_(std::move(corpus)), table_(prepare_phrases(*corpus_, phrases)) {
    config.validate();
    TreeDocument doc;
    doc.tree = make_root_tree(*corpus_, config);
    doc.phrases = phrases;
    publish(std::move(doc));
  }

  const Corpus& corpus() const noexcept { return *corpus_; }
  const PhraseTable& phrase_table() const noexcept { return table_; }

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(snap_mu_);
    return snap_;
  }

  void set_observer(ExpansionObserver obs) {
    std::lock_guard lock(write_mu_);
    observer_ = std::move(obs);
  }

  /// Asks a running mutation to stop before its next node expansion.
  void cancel() { cancel_.store(true); }

  std::shared_ptr<const Snapshot> apply(const JournalEntry& e) {
    std::lock_guard lock(write_mu_);
    cancel_.store(false);
    TreeDocument doc = snapshot()->doc;
    BuildHooks hooks{observer_, [this] { return cancel_.load(); }};
    apply_entry(doc, *corpus_, table_, e, hooks);
    return publish(std::move(doc));
  }

  std::shared_ptr<const Snapshot> build() { return apply({JournalEntry::Op::Build, {}, {}, {}}); }

  std::shared_ptr<const Snapshot> expand(const NodePath& path, std::optional<int> k = {},
                                         std::optional<double> alpha0 = {}) {
    return apply({JournalEntry::Op::Expand, path, k, alpha0});
  }

  std::shared_ptr<const Snapshot> resplit(const NodePath& path, int k) {
    return apply({JournalEntry::Op::Resplit, path, k, {}});
  }

  void save(const std::string& file) const { write_text_file(file, snapshot()->json); }

  std::shared_ptr<const Snapshot> load(const std::string& file) {
    std::lock_guard lock(write_mu_);
    auto doc = load_document(file, *corpus_);
    if (doc.phrases.minsup != snapshot()->doc.phrases.minsup || doc.phrases.max_len != snapshot()->doc.phrases.max_len ||
        doc.phrases.completeness != snapshot()->doc.phrases.completeness ||
        doc.phrases.phraseness != snapshot()->doc.phrases.phraseness)
      table_ = prepare_phrases(*corpus_, doc.phrases);
    return publish(std::move(doc));
  }

 private:
  std::shared_ptr<const Snapshot> publish(TreeDocument doc) {
    auto snap = std::make_shared<Snapshot>();
    snap->json = serialize_document(doc, corpus_->vocabulary());
    snap->doc = std::move(doc);
    std::lock_guard lock(snap_mu_);
    snap->revision = snap_ ? snap_->revision + 1 : 0;
    snap_ = snap;
    return snap_;
  }

  std::shared_ptr<const Corpus> corpus_;
  PhraseTable table_;
  std::shared_ptr<const Snapshot> snap_;
  mutable std::mutex snap_mu_;
  std::mutex write_mu_;
  ExpansionObserver observer_;
  std::atomic<bool> cancel_{false};
};

}  // namespace strod
