// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "support.hpp"
#include "strod/service.hpp"

using namespace strod;
using namespace strod::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TreeConfig config(int width, int height, std::vector<int> level_k = {}, std::uint64_t seed = 0) {
  TreeConfig c;
  c.width = width;
  c.height = height;
  c.level_k = std::move(level_k);
  c.seed = seed;
  return c;
}

const Corpus& flat_corpus() {
  static const Corpus c = generate(flat_spec(100, 3, 20000, 60, 1.0, 2024));
  return c;
}

const GenerativeSpec& deep_spec() {
  static const GenerativeSpec s = two_level_spec(120, 3, 2, 20000, 60, 2025);
  return s;
}

const Corpus& deep_corpus() {
  static const Corpus c = generate(deep_spec());
  return c;
}

std::vector<Eigen::VectorXd> truth_children(const GenNode& node, const std::map<NodePath, Eigen::VectorXd>& phis,
                                            const NodePath& path) {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t z = 0; z < node.children.size(); ++z) out.push_back(phis.at(path.child(static_cast<int>(z + 1))));
  return out;
}

// 1. Implicit T~ against the dense M3 contraction.
Outcome implicit_tensor() {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = generate(flat_spec(15, 3, 200, 12, 1.0, 101));
  auto tc = root_counts(c);
  auto fs1 = estimate_m1_e2(tc);
  auto b = whiten(fs1.m1, fs1.e2, 1.0, 3);
  auto t = project_t3(tc, b);
  const double secs = seconds_since(t0);
  Eigen::VectorXd m1;
  Eigen::MatrixXd e2;
  const auto docs = eligible_token_lists(c);
  oracle_m1_e2(docs, 15, m1, e2);
  const double diff = max_abs_diff(t, oracle_t3(oracle_e3(docs, 15), m1, e2, 1.0, b.W));
  return {diff <= 1e-8 && secs < 10.0, "max|diff| " + fmt("%.3g", diff) + ", " + fmt("%.3f", secs) + " s"};
}

// 2. W^T M2 W = I against the dense M2 built from enumerated pairs.
Outcome whitening_identity() {
  double worst = 0.0;
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    auto c = generate(flat_spec(50, 4, 3000, 40, 1.0, seed));
    auto fs1 = estimate_m1_e2(root_counts(c));
    auto b = whiten(fs1.m1, fs1.e2, 1.0, 4);
    Eigen::VectorXd m1;
    Eigen::MatrixXd e2;
    oracle_m1_e2(eligible_token_lists(c), 50, m1, e2);
    const Eigen::MatrixXd m2 = oracle_m2(m1, e2, 1.0);
    worst = std::max(worst, (b.W.transpose() * m2 * b.W - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-8, "max|W'M2W - I| " + fmt("%.3g", worst)};
}

// 3. Recovery of the generating parameters.
Outcome recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto spec = flat_spec(100, 3, 20000, 60, 1.0, 2024);
  auto tree = build_hierarchy(flat_corpus(), config(3, 1));
  const double secs = seconds_since(t0);
  const auto phis = true_phis(spec);
  std::vector<int> match;
  auto l1 = matched_l1(tree.root, truth_children(spec.root, phis, NodePath::root()), &match);
  const double alpha0 = std::accumulate(spec.root.alpha.begin(), spec.root.alpha.end(), 0.0);
  double worst_l1 = 0.0, worst_lambda = 0.0;
  for (std::size_t i = 0; i < l1.size(); ++i) {
    worst_l1 = std::max(worst_l1, l1[i].second);
    const double truth = spec.root.alpha[static_cast<std::size_t>(match[i])] / alpha0;
    worst_lambda = std::max(worst_lambda, std::abs(tree.root.children[i].lambda - truth));
  }

  const auto& ds = deep_spec();
  const auto dphis = true_phis(ds);
  auto deep = build_hierarchy(deep_corpus(), config(3, 2, {3, 2}));
  std::vector<int> top;
  matched_l1(deep.root, truth_children(ds.root, dphis, NodePath::root()), &top);
  double worst_leaf = 0.0;
  for (std::size_t i = 0; i < deep.root.children.size(); ++i) {
    const NodePath tp = NodePath::root().child(top[i] + 1);
    const auto& gen = ds.root.children[static_cast<std::size_t>(top[i])];
    for (const auto& [p, d] : matched_l1(deep.root.children[i], truth_children(gen, dphis, tp)))
      worst_leaf = std::max(worst_leaf, d);
  }
  const bool pass = worst_l1 <= 0.05 && worst_lambda <= 0.05 && secs <= 300 && worst_leaf <= 0.08;
  return {pass, "flat L1 " + fmt("%.4f", worst_l1) + ", |lambda - lambda*| " + fmt("%.4f", worst_lambda) + ", " +
                    fmt("%.2f", secs) + " s; two-level leaf L1 " + fmt("%.4f", worst_leaf)};
}

// 4. Resplit leaves everything outside the subtree byte-identical; subsumption.
Outcome revision() {
  auto corpus = std::shared_ptr<const Corpus>(&deep_corpus(), [](const Corpus*) {});
  PhraseSettings ps;
  ps.minsup = 50;
  ps.max_len = 3;
  Session s(corpus, config(3, 2, {3, 2}), ps);
  const auto before = nlohmann::json::parse(s.build()->json);
  const auto after = nlohmann::json::parse(s.resplit(NodePath::parse("o/1"), 3)->json);
  bool same = after["root"]["children"][0]["children"].size() == 3;
  for (int z = 1; z < 3; ++z) same = same && after["root"]["children"][z].dump() == before["root"]["children"][z].dump();
  auto shallow = [](nlohmann::json j) {
    j.erase("children");
    return j.dump();
  };
  same = same && shallow(after["root"]) == shallow(before["root"]);
  // o/1 itself belongs to the resplit subtree; what it received from the root's
  // decomposition must not move.
  for (const char* key : {"lambda", "weight", "phi_top", "phrases"})
    same = same && after["root"]["children"][0][key] == before["root"]["children"][0][key];

  auto small = build_hierarchy(deep_corpus(), config(3, 1, {3, 2}, 4));
  auto full = build_hierarchy(deep_corpus(), config(3, 2, {3, 2}, 4));
  bool subsumed = small.root.alpha == full.root.alpha;
  for (std::size_t z = 0; z < small.root.children.size(); ++z) {
    subsumed = subsumed && small.root.children[z].phi == full.root.children[z].phi;
    expand_node(small, deep_corpus(), small.root.children[z].path);
  }
  for (std::size_t z = 0; z < small.root.children.size(); ++z) {
    const auto& a = small.root.children[z];
    const auto& b = full.root.children[z];
    subsumed = subsumed && a.alpha == b.alpha && a.children.size() == b.children.size();
    for (std::size_t y = 0; subsumed && y < a.children.size(); ++y) subsumed = a.children[y].phi == b.children[y].phi;
  }
  return {same && subsumed, std::string("outside o/1 ") + (same ? "identical" : "changed") + ", subsumption " +
                                (subsumed ? "holds" : "violated")};
}

// 5. Two seeds on the flat recovery corpus.
Outcome stability() {
  auto a = build_hierarchy(flat_corpus(), config(3, 1, {}, 1));
  auto b = build_hierarchy(flat_corpus(), config(3, 1, {}, 77));
  const double v = run_variance(a, b).mean_kl;
  return {v <= 0.01, "run variance " + fmt("%.3g", v)};
}

// 6. Power iteration on an exactly decomposable tensor.
Outcome convergence() {
  const int k = 5;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  Eigen::MatrixXd A(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) A(i, j) = g(rng);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
  Tensor3 T(k);
  for (int z = 0; z < k; ++z) T.add_cube(Q.col(z), 1.0 + z);
  int converged = 0, fast = 0;
  for (int start = 0; start < 1000; ++start) {
    auto tr = power_iterate(T, random_unit_vector(k, rng), 200, 0.0);
    const double overlap = (Q.transpose() * tr.v).cwiseAbs().maxCoeff();
    if (overlap < 1.0 - 1e-10) continue;
    ++converged;
    const auto n = std::min<std::size_t>(20, tr.residuals.size());
    if (std::any_of(tr.residuals.begin(), tr.residuals.begin() + static_cast<std::ptrdiff_t>(n),
                    [](double r) { return r <= 1e-12; }))
      ++fast;
  }
  const double frac = converged ? static_cast<double>(fast) / converged : 0.0;
  return {converged > 0 && frac >= 0.95,
          std::to_string(fast) + "/" + std::to_string(converged) + " converged starts within 20 iterations"};
}

// 7. Expansion time at L and 2L tokens, and passes per expansion.
Outcome scaling() {
  auto timed = [](std::size_t docs, bool& two_passes) {
    auto c = generate(flat_spec(100, 3, docs, 60, 1.0, 31));
    std::vector<double> t;
    for (int rep = 0; rep < 5; ++rep) {
      BuildHooks hooks;
      hooks.observer = [&](const ExpansionStats& st) {
        if (st.k > 0) {
          t.push_back(st.seconds_total);
          two_passes = two_passes && st.moment_passes == 2;
        }
      };
      build_hierarchy(c, config(3, 1), hooks);
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
  };
  bool two = true;
  const double t1 = timed(20000, two), t2 = timed(40000, two);
  const double ratio = t2 / t1;
  return {ratio <= 2.5 && two, "time ratio " + fmt("%.2f", ratio) + " (" + fmt("%.3f", t1) + " s vs " +
                                   fmt("%.3f", t2) + " s), passes per expansion " + (two ? "2" : "not 2")};
}

// 8. eta endpoints and the alpha0 discrepancy minimum.
Outcome hyperparameters() {
  auto counts = root_counts(flat_corpus());
  NodeMoments nm;
  nm.first_second = estimate_m1_e2(counts);
  nm.e2_eig = top_k_eigenpairs(nm.first_second.e2, 5);
  const int full = select_num_topics(nm.e2_eig.values, 1.0), none = select_num_topics(nm.e2_eig.values, 0.0);
  nm.k = 3;
  nm.e3_basis = project_e3(counts, nm.e2_eig.vectors.leftCols(3));
  double d[3];
  const double grid[3] = {0.25, 1.0, 4.0};
  for (int i = 0; i < 3; ++i) d[i] = alpha0_discrepancy(nm, grid[i], 30, 30, 1);
  const bool pass = full == 5 && none == 0 && d[1] < d[0] && d[1] < d[2];
  return {pass, "eta=1 -> " + std::to_string(full) + ", eta=0 -> " + std::to_string(none) + "; discrepancy " +
                    fmt("%.3g", d[0]) + " / " + fmt("%.3g", d[1]) + " / " + fmt("%.3g", d[2])};
}

// 9. Phrase ranking against direct evaluation, unigram reduction, apriori.
Outcome phrases() {
  auto c = generate(two_level_spec(24, 2, 2, 1500, 30, 12));
  auto tree = build_hierarchy(c, config(2, 2, {2, 2}));
  auto table = filter_phrases(mine_phrases(c, 10, 3), 1.0, -1e9);
  const auto ranked = rank_all(table, tree, c.vocabulary());
  const auto counts = topical_phrase_counts(table, tree);

  // Dense direct evaluation down the tree.
  const std::size_t P = table.phrases.size(), D = c.num_documents();
  using Dense = std::vector<std::vector<double>>;
  auto popularity = [&](const Dense& m) {
    std::vector<double> p(P, 0.0);
    std::size_t docs = 0;
    for (const auto& row : m) {
      double mass = 0.0;
      for (double v : row) mass += v;
      if (mass == 0.0) continue;
      ++docs;
      for (std::size_t q = 0; q < P; ++q) p[q] += row[q] / mass;
    }
    for (double& v : p) v /= static_cast<double>(docs);
    return p;
  };
  double score_err = 0.0;
  std::size_t scored = 0;
  std::function<void(const TopicNode&, const Dense&)> walk = [&](const TopicNode& node, const Dense& m) {
    const auto parent_pop = popularity(m);
    for (std::size_t z = 0; z < node.children.size(); ++z) {
      Dense child(D, std::vector<double>(P, 0.0));
      for (std::size_t q = 0; q < P; ++q) {
        double den = 0.0, num = 0.0;
        for (std::size_t y = 0; y < node.children.size(); ++y) {
          double prod = node.alpha[y];
          for (WordId x : table.phrases[q].words) prod *= node.children[y].phi[x];
          den += prod;
          if (y == z) num = prod;
        }
        for (std::size_t i = 0; i < D; ++i) child[i][q] = den > 0 ? m[i][q] * num / den : 0.0;
      }
      const auto pop = popularity(child);
      for (const auto& e : ranked.at(node.children[z].path).entries) {
        const double p = pop[e.phrase], pp = parent_pop[e.phrase];
        const double direct = p > 0 ? p * std::log(p / (pp + 1e-12)) : 0.0;
        score_err = std::max(score_err, std::abs(e.score - direct));
        ++scored;
      }
      walk(node.children[z], child);
    }
  };
  Dense root(D, std::vector<double>(P, 0.0));
  for (std::size_t i = 0; i < D; ++i)
    for (auto [idx, v] : table.doc_counts[i]) root[i][idx] = v;
  walk(tree.root, root);

  // Unigram phrase counts against the word-level topical counts.
  bool unigram_exact = true;
  for (const auto& [path, pc] : counts) {
    if (path.is_root()) continue;
    const auto wc = counts_for(tree, c, path);
    for (std::size_t i = 0; i < D && unigram_exact; ++i) {
      std::map<WordId, double> uni;
      for (auto [idx, v] : pc[i])
        if (table.phrases[idx].words.size() == 1) uni[table.phrases[idx].words[0]] = v;
      const auto& words = wc.docs[i];
      if (uni.size() != words.nnz()) unigram_exact = false;
      for (std::size_t e = 0; e < words.nnz() && unigram_exact; ++e) {
        auto it = uni.find(words.index[e]);
        unigram_exact = it != uni.end() && it->second == words.value[e];
      }
    }
  }

  bool apriori = true;
  for (const Corpus* corpus : std::vector<const Corpus*>{&c, &flat_corpus()}) {
    const auto t = mine_phrases(*corpus, 5, 4);
    for (const auto& p : t.phrases) {
      if (p.words.size() < 2) continue;
      std::vector<WordId> pre(p.words.begin(), p.words.end() - 1), suf(p.words.begin() + 1, p.words.end());
      apriori = apriori && p.frequency >= t.minsup && p.frequency <= t.frequency_of(pre) && p.frequency <= t.frequency_of(suf);
    }
  }
  const bool pass = scored > 0 && score_err <= 1e-12 && unigram_exact && apriori;
  return {pass, "max score error " + fmt("%.3g", score_err) + " over " + std::to_string(scored) + " scores; unigram " +
                    (unigram_exact ? "exact" : "mismatch") + "; apriori " + (apriori ? "holds" : "violated")};
}

// 10. CLI, service and journal replay produce the same bytes.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(STROD_CLI) + " " + args + " 2>>" + log.string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "strod_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto log = dir / "stderr.log";
  auto p = [&](const char* name) { return (dir / name).string(); };
  write_text_file(p("spec.json"), dump_json(spec_to_json(two_level_spec(36, 3, 2, 3000, 30, 41))));
  const std::string flags = " --width 3 --height 2 --k 3,2 --seed 9 --minsup 20 --max-phrase-len 3";
  bool ok = run_cli("generate --spec " + p("spec.json") + " --output " + p("corpus"), log) == 0;
  ok = ok && run_cli("build --input " + p("corpus") + flags + " --output " + p("a.json"), log) == 0;
  ok = ok && run_cli("build --input " + p("corpus") + flags + " --output " + p("b.json"), log) == 0;
  ok = ok && run_cli("resplit --input " + p("corpus") + " --tree " + p("a.json") + " --path o/2 --k 3 --output " +
                         p("r.json"),
                     log) == 0;
  if (!ok) return {false, "CLI invocation failed, see " + log.string()};
  const auto a = read_text_file(p("a.json")), r = read_text_file(p("r.json"));
  const bool cli_same = a == read_text_file(p("b.json"));

  auto corpus = std::make_shared<const Corpus>(load_corpus(p("corpus")));
  const auto header = header_from_json(nlohmann::json::parse(a));
  auto session = std::make_shared<Session>(corpus, header.config, header.phrases);
  Service service(session);
  const int port = service.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(300, 0);
  auto built = client.Post("/build", "{}", "application/json");
  auto tree1 = client.Get("/tree");
  auto resplit = client.Post("/nodes/o~2/resplit", R"({"k": 3})", "application/json");
  auto tree2 = client.Get("/tree");
  service.stop();
  const bool service_same = built && built->status == 200 && tree1 && tree1->body == a && resplit &&
                            resplit->status == 200 && tree2 && tree2->body == r;

  const bool replay_same = serialize_document(load_document(p("a.json"), *corpus), corpus->vocabulary()) == a &&
                           serialize_document(load_document(p("r.json"), *corpus), corpus->vocabulary()) == r;
  fs::remove_all(dir);
  return {cli_same && service_same && replay_same, std::string("CLI ") + (cli_same ? "identical" : "differs") +
                                                       ", service " + (service_same ? "identical" : "differs") +
                                                       ", replay " + (replay_same ? "identical" : "differs")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"implicit tensor matches dense oracle", implicit_tensor},
      {"whitening identity", whitening_identity},
      {"parameter recovery", recovery},
      {"robust revision and subsumption", revision},
      {"run-to-run stability", stability},
      {"power iteration convergence rate", convergence},
      {"linear scaling and two data passes", scaling},
      {"hyperparameter procedures", hyperparameters},
      {"phrase pipeline", phrases},
      {"determinism and journal replay", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%-4s %2zu  %-38s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
