#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <locale.h>
#include <map>
#include <optional>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>
#include <wctype.h>

#include <nlohmann/json.hpp>

#include "strod/error.hpp"
#include "strod/path.hpp"
#include "strod/stopwords.hpp"

namespace strod {

/// 0-based vocabulary index. Serialized files use the same value (the
/// vocabulary file's line number minus one).
using WordId = std::uint32_t;
using WordCount = std::pair<WordId, std::uint32_t>;
/// Sorted by word id, no zero entries.
using SparseWordCounts = std::vector<WordCount>;

struct Document {
  std::string id;
  std::vector<WordId> tokens;
  /// Token offsets where sentences begin; strictly increasing, starts at 0.
  std::vector<std::size_t> sentence_bounds;
  bool moment_eligible = false;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      auto [it, inserted] = index_.emplace(words_[i], static_cast<WordId>(i));
      if (!inserted) throw ContractViolation("duplicate vocabulary word '" + words_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(WordId id) const { return words_.at(id); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  std::optional<WordId> find(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  WordId intern(const std::string& w) {
    auto [it, inserted] = index_.emplace(w, static_cast<WordId>(words_.size()));
    if (inserted) words_.push_back(w);
    return it->second;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, WordId> index_;
};

enum class InputFormat { Lines, JsonLines };

inline InputFormat parse_input_format(std::string_view s) {
  if (s == "lines" || s == "txt" || s == "text") return InputFormat::Lines;
  if (s == "jsonl" || s == "json-lines" || s == "jsonlines") return InputFormat::JsonLines;
  throw ContractViolation("unknown input format '" + std::string(s) + "'");
}

/// Immutable after construction; safe to share read-only.
class Corpus {
 public:
  Corpus() = default;

  /// Builds counts and eligibility from tokenized documents. Documents with
  /// fewer than `min_tokens` tokens stay in the corpus but are excluded from
  /// moment estimation (never below 3: third-order moments need l(l-1)(l-2) > 0).
  static Corpus from_documents(Vocabulary vocab, std::vector<Document> docs,
                               std::size_t min_tokens = 3) {
    Corpus c;
    c.vocabulary_ = std::move(vocab);
    c.documents_ = std::move(docs);
    c.min_tokens_ = min_tokens;
    const std::size_t threshold = std::max<std::size_t>(min_tokens, 3);
    c.counts_.reserve(c.documents_.size());
    for (std::size_t i = 0; i < c.documents_.size(); ++i) {
      auto& d = c.documents_[i];
      for (WordId w : d.tokens)
        if (w >= c.vocabulary_.size())
          throw ContractViolation("token index out of vocabulary in document '" + d.id + "'");
      for (std::size_t s = 0; s < d.sentence_bounds.size(); ++s) {
        if (d.sentence_bounds[s] >= d.tokens.size() ||
            (s == 0 && d.sentence_bounds[s] != 0) ||
            (s > 0 && d.sentence_bounds[s] <= d.sentence_bounds[s - 1]))
          throw ContractViolation("invalid sentence bounds in document '" + d.id + "'");
      }
      d.moment_eligible = d.tokens.size() >= threshold;
      std::vector<WordId> sorted = d.tokens;
      std::sort(sorted.begin(), sorted.end());
      SparseWordCounts counts;
      for (WordId w : sorted) {
        if (!counts.empty() && counts.back().first == w)
          ++counts.back().second;
        else
          counts.emplace_back(w, 1);
      }
      c.total_tokens_ += d.tokens.size();
      c.id_index_.emplace(d.id, i);
      c.counts_.push_back(std::move(counts));
    }
    c.digest_ = c.compute_digest();
    return c;
  }

  const std::vector<Document>& documents() const noexcept { return documents_; }
  const Vocabulary& vocabulary() const noexcept { return vocabulary_; }
  const std::vector<SparseWordCounts>& counts() const noexcept { return counts_; }
  std::size_t num_documents() const noexcept { return documents_.size(); }
  std::size_t vocab_size() const noexcept { return vocabulary_.size(); }
  std::size_t total_tokens() const noexcept { return total_tokens_; }
  std::size_t min_tokens() const noexcept { return min_tokens_; }

  std::size_t num_eligible() const {
    return static_cast<std::size_t>(std::count_if(documents_.begin(), documents_.end(),
                                                  [](const Document& d) { return d.moment_eligible; }));
  }

  std::size_t doc_index(const std::string& id) const {
    auto it = id_index_.find(id);
    if (it == id_index_.end()) throw LookupError("unknown document id '" + id + "'");
    return it->second;
  }

  /// Content digest over vocabulary, tokens and sentence bounds (hex FNV-1a).
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string compute_digest() const {
    std::uint64_t h = fnv1a("strod-corpus-v1");
    for (const auto& w : vocabulary_.words()) {
      h = fnv1a(w, h);
      h = fnv1a("\n", h);
    }
    for (const auto& d : documents_) {
      h = fnv1a(d.id, h);
      std::string buf;
      for (WordId t : d.tokens) buf += std::to_string(t) + ",";
      buf += "|";
      for (auto b : d.sentence_bounds) buf += std::to_string(b) + ",";
      h = fnv1a(buf, h);
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
  }

  Vocabulary vocabulary_;
  std::vector<Document> documents_;
  std::vector<SparseWordCounts> counts_;
  std::unordered_map<std::string, std::size_t> id_index_;
  std::size_t total_tokens_ = 0;
  std::size_t min_tokens_ = 3;
  std::string digest_;
};

/// c_i for the document with the given id.
inline const SparseWordCounts& word_counts(const Corpus& corpus, const std::string& doc_id) {
  return corpus.counts()[corpus.doc_index(doc_id)];
}

namespace detail {

class CtypeLocale {
 public:
  CtypeLocale() { loc_ = newlocale(LC_CTYPE_MASK, "C.UTF-8", static_cast<locale_t>(0)); }
  ~CtypeLocale() {
    if (loc_) freelocale(loc_);
  }
  CtypeLocale(const CtypeLocale&) = delete;
  CtypeLocale& operator=(const CtypeLocale&) = delete;

  bool is_word(char32_t c) const {
    if (c < 0x80) return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
    return loc_ && iswalnum_l(static_cast<wint_t>(c), loc_);
  }
  char32_t lower(char32_t c) const {
    if (c < 0x80) return (c >= 'A' && c <= 'Z') ? c + 32 : c;
    return loc_ ? static_cast<char32_t>(towlower_l(static_cast<wint_t>(c), loc_)) : c;
  }

 private:
  locale_t loc_ = static_cast<locale_t>(0);
};

inline const CtypeLocale& ctype_locale() {
  static const CtypeLocale loc;
  return loc;
}

inline void append_utf8(std::string& out, char32_t c) {
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
}

/// Decodes UTF-8; returns false on malformed input.
inline bool decode_utf8(std::string_view s, std::vector<char32_t>& out) {
  out.clear();
  for (std::size_t i = 0; i < s.size();) {
    auto b = static_cast<unsigned char>(s[i]);
    int len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    char32_t c = len == 1 ? b : len == 2 ? (b & 0x1F) : len == 3 ? (b & 0x0F) : (b & 0x07);
    for (int k = 1; k < len; ++k) {
      auto cb = static_cast<unsigned char>(s[i + k]);
      if ((cb >> 6) != 0x2) return false;
      c = (c << 6) | (cb & 0x3F);
    }
    if ((len == 2 && c < 0x80) || (len == 3 && c < 0x800) || (len == 4 && c < 0x10000) ||
        c > 0x10FFFF || (c >= 0xD800 && c <= 0xDFFF))
      return false;
    out.push_back(c);
    i += len;
  }
  return true;
}

inline bool is_sentence_end(char32_t c) { return c == '.' || c == '!' || c == '?' || c == ';'; }

}  // namespace detail

/// Lowercased word tokens grouped by sentence. Sentence breaks are taken at
/// [.!?;] before any stopword removal. Returns false on invalid UTF-8.
inline bool tokenize_sentences(std::string_view text, std::vector<std::vector<std::string>>& sentences) {
  std::vector<char32_t> cps;
  if (!detail::decode_utf8(text, cps)) return false;
  const auto& loc = detail::ctype_locale();
  sentences.assign(1, {});
  std::string word;
  auto flush = [&] {
    if (!word.empty()) sentences.back().push_back(std::move(word));
    word.clear();
  };
  for (char32_t c : cps) {
    if (loc.is_word(c)) {
      detail::append_utf8(word, loc.lower(c));
      continue;
    }
    flush();
    if (detail::is_sentence_end(c) && !sentences.back().empty()) sentences.emplace_back();
  }
  flush();
  if (sentences.back().empty()) sentences.pop_back();
  return true;
}

struct IngestOptions {
  InputFormat format = InputFormat::Lines;
  StopwordSet stopwords = default_stopwords();
  std::size_t min_tokens = 3;
  /// Optional normalization hook (e.g. a stemmer), applied after lowercasing.
  std::function<std::string(const std::string&)> normalize;
};

inline Corpus ingest(std::istream& source, const IngestOptions& opts) {
  Vocabulary vocab;
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::vector<std::string>> sentences;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string id = std::to_string(line_no);
    std::string text;
    if (opts.format == InputFormat::JsonLines) {
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw IngestError(std::string("malformed JSON: ") + e.what(), line_no);
      }
      if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
        throw IngestError("expected an object with a string \"text\" field", line_no);
      if (j.contains("id")) {
        if (j["id"].is_string())
          id = j["id"].get<std::string>();
        else if (j["id"].is_number_integer())
          id = std::to_string(j["id"].get<long long>());
        else
          throw IngestError("\"id\" must be a string", line_no);
      }
      text = j["text"].get<std::string>();
    } else {
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      text = line;
    }
    if (!tokenize_sentences(text, sentences)) throw IngestError("invalid UTF-8", line_no);

    Document doc;
    doc.id = std::move(id);
    for (const auto& sentence : sentences) {
      const std::size_t start = doc.tokens.size();
      for (const auto& raw : sentence) {
        if (opts.stopwords.count(raw)) continue;
        std::string w = opts.normalize ? opts.normalize(raw) : raw;
        if (w.empty() || opts.stopwords.count(w)) continue;
        doc.tokens.push_back(vocab.intern(w));
      }
      if (doc.tokens.size() > start) doc.sentence_bounds.push_back(start);
    }
    docs.push_back(std::move(doc));
  }
  bool any = std::any_of(docs.begin(), docs.end(), [](const Document& d) { return !d.tokens.empty(); });
  if (!any) throw EmptyCorpusError("corpus is empty after tokenization and stopword removal");
  {
    std::unordered_map<std::string, int> seen;
    for (const auto& d : docs)
      if (seen[d.id]++) throw IngestError("duplicate document id '" + d.id + "'", 0);
  }
  return Corpus::from_documents(std::move(vocab), std::move(docs), opts.min_tokens);
}

inline Corpus ingest(std::istream& source, InputFormat format, const StopwordSet& stopwords,
                     std::size_t min_tokens = 3) {
  IngestOptions opts;
  opts.format = format;
  opts.stopwords = stopwords;
  opts.min_tokens = min_tokens;
  return ingest(source, opts);
}

inline Corpus ingest_file(const std::string& file, const IngestOptions& opts) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open input '" + file + "'");
  return ingest(in, opts);
}

// On-disk corpus (format "strod-corpus", version 1):
//   manifest.json   {"format","version","min_tokens","documents","vocabulary","digest"}
//   vocab.txt       one word per line; line n holds word id n-1
//   documents.jsonl {"id": string, "tokens": [word ids], "sentences": [offsets]}
inline constexpr int kCorpusFormatVersion = 1;

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "vocab.txt", std::ios::binary);
    for (const auto& w : corpus.vocabulary().words()) out << w << '\n';
  }
  {
    std::ofstream out(dir / "documents.jsonl", std::ios::binary);
    for (const auto& d : corpus.documents()) {
      nlohmann::json j = {{"id", d.id}, {"tokens", d.tokens}, {"sentences", d.sentence_bounds}};
      out << j.dump() << '\n';
    }
  }
  nlohmann::json manifest = {{"format", "strod-corpus"},
                             {"version", kCorpusFormatVersion},
                             {"min_tokens", corpus.min_tokens()},
                             {"documents", corpus.num_documents()},
                             {"vocabulary", corpus.vocab_size()},
                             {"digest", corpus.digest()}};
  std::ofstream(dir / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw Error("missing manifest.json in '" + dir.string() + "'");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.value("format", "") != "strod-corpus" || manifest.value("version", 0) != kCorpusFormatVersion)
    throw Error("unsupported corpus format in '" + dir.string() + "'");
  std::vector<std::string> words;
  {
    std::ifstream in(dir / "vocab.txt", std::ios::binary);
    std::string w;
    while (std::getline(in, w)) words.push_back(w);
  }
  std::vector<Document> docs;
  {
    std::ifstream in(dir / "documents.jsonl", std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw IngestError(std::string("malformed JSON: ") + e.what(), line_no);
      }
      Document d;
      d.id = j.at("id").get<std::string>();
      d.tokens = j.at("tokens").get<std::vector<WordId>>();
      d.sentence_bounds = j.at("sentences").get<std::vector<std::size_t>>();
      docs.push_back(std::move(d));
    }
  }
  return Corpus::from_documents(Vocabulary(std::move(words)), std::move(docs),
                                manifest.at("min_tokens").get<std::size_t>());
}

/// Loads either a serialized corpus directory or a raw text/JSON-lines file.
inline Corpus load_any_corpus(const std::string& input, const IngestOptions& opts) {
  if (std::filesystem::is_directory(input)) return load_corpus(input);
  return ingest_file(input, opts);
}

}  // namespace strod
