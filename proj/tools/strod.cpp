#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "strod/service.hpp"
#include "strod/strod.hpp"

namespace {

struct CorpusOptions {
  std::string input;
  std::string format = "lines";
  std::string stopwords_file;
  bool no_stopwords = false;
  std::size_t min_tokens = 3;

  void add(CLI::App* app, bool required = true) {
    auto* in = app->add_option("--input", input, "Corpus: text/JSON-lines file or a saved corpus directory");
    if (required) in->required();
    app->add_option("--format", format, "Input format: lines | jsonl")->check(CLI::IsMember({"lines", "jsonl"}));
    app->add_option("--stopwords", stopwords_file, "Stopword file, one word per line");
    app->add_flag("--no-stopwords", no_stopwords, "Keep all words");
    app->add_option("--min-tokens", min_tokens, "Minimum document length for moment estimation");
  }

  strod::Corpus load() const {
    strod::IngestOptions opts;
    opts.format = strod::parse_input_format(format);
    if (no_stopwords)
      opts.stopwords.clear();
    else if (!stopwords_file.empty())
      opts.stopwords = strod::load_stopwords(stopwords_file);
    opts.min_tokens = min_tokens;
    return strod::load_any_corpus(input, opts);
  }
};

struct TreeOptions {
  strod::TreeConfig cfg;
  strod::PhraseSettings phrases;
  std::string alpha0 = "1";
  std::vector<int> level_k;
  double eta = -1;

  void add(CLI::App* app) {
    app->add_option("--height", cfg.height, "Tree height H");
    app->add_option("--width", cfg.width, "Maximum branching K");
    app->add_option("--eta", eta, "Energy threshold for choosing child counts, in [0,1]");
    app->add_option("--k", level_k, "Fixed child count per level, e.g. 3,2")->delimiter(',');
    app->add_option("--alpha0", alpha0, "Dirichlet concentration: a number, or 'learn'");
    app->add_option("--delta", cfg.alpha0.delta, "Learning rate for alpha0");
    app->add_option("--outer", cfg.outer, "Power-method restarts N");
    app->add_option("--inner", cfg.inner, "Power-method iterations n");
    app->add_option("--seed", cfg.seed, "Global seed");
    app->add_option("--minsup", phrases.minsup, "Minimum phrase support");
    app->add_option("--max-phrase-len", phrases.max_len, "Longest mined phrase");
    app->add_option("--completeness", phrases.completeness, "Completeness threshold");
    app->add_option("--phraseness", phrases.phraseness, "Phraseness threshold");
    app->add_option("--top-phrases", phrases.top_n, "Phrases kept per node");
  }

  strod::TreeConfig config() const {
    strod::TreeConfig c = cfg;
    if (eta >= 0) c.eta = eta;
    c.level_k = level_k;
    if (alpha0 == "learn") {
      c.alpha0.learn = true;
    } else {
      try {
        c.alpha0.value = std::stod(alpha0);
      } catch (const std::exception&) {
        throw strod::ContractViolation("--alpha0 must be a number or 'learn'");
      }
    }
    c.validate();
    return c;
  }
};

void print_stats(const strod::ExpansionStats& st) {
  std::fprintf(stderr,
               "node %-10s k=%d eligible=%zu passes=%zu moments=%.3fs eigen=%.3fs project=%.3fs decompose=%.3fs "
               "total=%.3fs%s%s\n",
               st.path.str().c_str(), st.k, st.eligible_docs, st.moment_passes, st.seconds_moments, st.seconds_eigen,
               st.seconds_project, st.seconds_decompose, st.seconds_total, st.leaf_reason.empty() ? "" : " leaf=",
               st.leaf_reason.c_str());
}

void write_outputs(const strod::TreeDocument& doc, const strod::Corpus& corpus, const strod::PhraseTable& table,
                   const std::string& output, const std::string& phi_out) {
  strod::write_text_file(output, strod::serialize_document(doc, corpus.vocabulary()));
  std::ofstream tsv(output + ".phrases.tsv", std::ios::binary);
  strod::write_phrase_tsv(tsv, strod::rank_all(table, doc.tree, corpus.vocabulary()), doc.phrases.top_n);
  if (!phi_out.empty()) {
    std::ofstream out(phi_out, std::ios::binary);
    strod::write_phi_sidecar(out, doc.tree, corpus.vocabulary());
  }
}

/// Reads a saved tree and replays it on the corpus.
strod::TreeDocument load_tree(const std::string& file, const strod::Corpus& corpus) {
  return strod::load_document(file, corpus, {print_stats, {}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recursive tensor decomposition of topical hierarchies"};
  app.set_config("--config", "", "TOML/INI file with option defaults; flags override");
  app.require_subcommand(1);

  CorpusOptions corpus_opts;
  TreeOptions tree_opts;
  std::string output, phi_out, tree_file, path_text, spec_file, tree_a, tree_b, host = "127.0.0.1";
  std::optional<int> k;
  std::optional<double> alpha0;
  std::size_t top_n = 10;
  double smoothing = 1e-12;
  int port = strod::default_port();
  bool build_first = false;

  auto* build = app.add_subcommand("build", "Build a topical hierarchy");
  corpus_opts.add(build);
  tree_opts.add(build);
  build->add_option("--output", output, "Tree JSON output")->required();
  build->add_option("--phi-out", phi_out, "Optional sidecar with full word distributions");

  auto* expand = app.add_subcommand("expand", "Expand one leaf of a saved tree");
  corpus_opts.add(expand);
  expand->add_option("--tree", tree_file, "Saved tree")->required();
  expand->add_option("--path", path_text, "Node path, e.g. o/1")->required();
  expand->add_option("--k", k, "Child count (default: per tree config)");
  expand->add_option("--alpha0", alpha0, "Dirichlet concentration for this node");
  expand->add_option("--output", output, "Tree JSON output")->required();

  auto* resplit = app.add_subcommand("resplit", "Re-split an expanded node with a new child count");
  corpus_opts.add(resplit);
  resplit->add_option("--tree", tree_file, "Saved tree")->required();
  resplit->add_option("--path", path_text, "Node path, e.g. o/1")->required();
  resplit->add_option("--k", k, "New child count")->required();
  resplit->add_option("--output", output, "Tree JSON output")->required();

  auto* rank = app.add_subcommand("rank-phrases", "Export ranked phrases of a saved tree as TSV");
  corpus_opts.add(rank);
  rank->add_option("--tree", tree_file, "Saved tree")->required();
  rank->add_option("--top-n", top_n, "Phrases per node");
  rank->add_option("--output", output, "TSV output (default stdout)");

  auto* variance = app.add_subcommand("variance", "Run variance between two saved trees");
  corpus_opts.add(variance);
  variance->add_option("--a", tree_a, "First tree")->required();
  variance->add_option("--b", tree_b, "Second tree")->required();
  variance->add_option("--smoothing", smoothing, "KL smoothing");
  variance->add_option("--output", output, "JSON output (default stdout)");

  auto* generate = app.add_subcommand("generate", "Sample a synthetic corpus from a generative spec");
  generate->add_option("--spec", spec_file, "Generative spec JSON")->required();
  generate->add_option("--output", output, "Corpus directory")->required();
  std::optional<std::uint64_t> gen_seed;
  generate->add_option("--seed", gen_seed, "Override the spec seed");

  auto* serve = app.add_subcommand("serve", "Serve a session over HTTP");
  corpus_opts.add(serve);
  tree_opts.add(serve);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (default from STROD_PORT)");
  serve->add_option("--tree", tree_file, "Saved tree to load at startup");
  serve->add_flag("--build", build_first, "Build the full tree at startup");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      const auto corpus = corpus_opts.load();
      const auto cfg = tree_opts.config();
      const auto table = strod::prepare_phrases(corpus, tree_opts.phrases);
      strod::TreeDocument doc;
      doc.tree.config = cfg;
      doc.phrases = tree_opts.phrases;
      strod::apply_entry(doc, corpus, table, {strod::JournalEntry::Op::Build, {}, {}, {}}, {print_stats, {}});
      write_outputs(doc, corpus, table, output, phi_out);
      std::fprintf(stderr, "wrote %s (%zu nodes)\n", output.c_str(), doc.tree.node_count());
    } else if (*expand || *resplit) {
      const auto corpus = corpus_opts.load();
      auto doc = load_tree(tree_file, corpus);
      const auto table = strod::prepare_phrases(corpus, doc.phrases);
      strod::JournalEntry e;
      e.op = *expand ? strod::JournalEntry::Op::Expand : strod::JournalEntry::Op::Resplit;
      e.path = strod::NodePath::parse(path_text);
      e.k = k;
      e.alpha0 = alpha0;
      strod::apply_entry(doc, corpus, table, e, {print_stats, {}});
      write_outputs(doc, corpus, table, output, "");
    } else if (*rank) {
      const auto corpus = corpus_opts.load();
      const auto doc = load_tree(tree_file, corpus);
      const auto table = strod::prepare_phrases(corpus, doc.phrases);
      const auto ranked = strod::rank_all(table, doc.tree, corpus.vocabulary());
      if (output.empty()) {
        strod::write_phrase_tsv(std::cout, ranked, top_n);
      } else {
        std::ofstream out(output, std::ios::binary);
        strod::write_phrase_tsv(out, ranked, top_n);
      }
    } else if (*variance) {
      const auto corpus = corpus_opts.load();
      const auto a = load_tree(tree_a, corpus);
      const auto b = load_tree(tree_b, corpus);
      const auto text = strod::dump_json(strod::variance_to_json(strod::run_variance(a.tree, b.tree, smoothing)));
      if (output.empty())
        std::cout << text;
      else
        strod::write_text_file(output, text);
    } else if (*generate) {
      auto spec = strod::spec_from_json(nlohmann::json::parse(strod::read_text_file(spec_file)));
      if (gen_seed) spec.seed = *gen_seed;
      const auto corpus = strod::generate(spec);
      strod::save_corpus(corpus, output);
      nlohmann::json truth = {{"spec", strod::spec_to_json(spec)}, {"phi", nlohmann::json::object()}};
      for (const auto& [p, phi] : strod::true_phis(spec))
        truth["phi"][p.str()] = std::vector<double>(phi.data(), phi.data() + phi.size());
      strod::write_text_file((std::filesystem::path(output) / "truth.json").string(), strod::dump_json(truth));
      std::fprintf(stderr, "wrote %zu documents to %s\n", corpus.num_documents(), output.c_str());
    } else if (*serve) {
      auto corpus = std::make_shared<const strod::Corpus>(corpus_opts.load());
      auto session = std::make_shared<strod::Session>(corpus, tree_opts.config(), tree_opts.phrases);
      session->set_observer(print_stats);
      if (!tree_file.empty())
        session->load(tree_file);
      else if (build_first)
        session->build();
      strod::Service service(session);
      std::fprintf(stderr, "serving on http://%s:%d\n", host.c_str(), port);
      service.run(host, port);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
