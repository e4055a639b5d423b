#include <filesystem>
#include <thread>

#include <gtest/gtest.h>

#include "support.hpp"
#include "strod/service.hpp"

using namespace strod;
using namespace strod::testing;
using nlohmann::json;

namespace {

std::shared_ptr<const Corpus> shared_corpus() {
  static auto c = std::make_shared<const Corpus>(generate(two_level_spec(36, 3, 2, 3000, 30, 23)));
  return c;
}

std::shared_ptr<Session> fresh_session() {
  TreeConfig cfg;
  cfg.width = 3;
  cfg.height = 2;
  cfg.level_k = {3, 2};
  PhraseSettings p;
  p.minsup = 20;
  p.max_len = 3;
  return std::make_shared<Session>(shared_corpus(), cfg, p);
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    session = fresh_session();
    service = std::make_unique<Service>(session);
    const int port = service->start("127.0.0.1", 0);
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(120, 0);
  }
  void TearDown() override { service->stop(); }

  json post(const std::string& path, const json& body, int expect_status) {
    auto res = client->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res) << path;
    if (!res) return {};
    EXPECT_EQ(res->status, expect_status) << path << ": " << res->body;
    return json::parse(res->body);
  }
  json get(const std::string& path, int expect_status = 200) {
    auto res = client->Get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return {};
    EXPECT_EQ(res->status, expect_status) << path << ": " << res->body;
    return json::parse(res->body);
  }

  std::shared_ptr<Session> session;
  std::unique_ptr<Service> service;
  std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST(ServicePaths, UrlSegmentsUseTilde) {
  EXPECT_EQ(parse_url_path("o~2~1"), NodePath::parse("o/2/1"));
  EXPECT_EQ(parse_url_path("o"), NodePath::root());
  EXPECT_THROW(parse_url_path("x~1"), LookupError);
}

TEST_F(ServiceTest, HealthAndTree) {
  auto h = get("/health");
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_EQ(h.at("revision"), 0);
  EXPECT_EQ(h.at("nodes"), 1);
  auto res = client->Get("/tree");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, session->snapshot()->json);
}

TEST_F(ServiceTest, ExpandRootThenInspect) {
  auto r = post("/nodes/o/expand", {{"k", 3}}, 200);
  EXPECT_EQ(r.at("changed"), "o");
  EXPECT_EQ(r.at("revision"), 1);
  EXPECT_EQ(r.at("node").at("children").size(), 3u);
  auto n = get("/nodes/o~2");
  EXPECT_EQ(n.at("path"), "o/2");
  EXPECT_TRUE(n.at("children").empty());
  auto root = get("/nodes/o");
  EXPECT_EQ(root.at("children"), json::array({"o/1", "o/2", "o/3"}));
}

TEST_F(ServiceTest, ErrorMapping) {
  auto e = get("/nodes/missing", 404);
  EXPECT_EQ(e.at("error"), "unknown_path");
  EXPECT_EQ(get("/nodes/o~7", 404).at("error"), "unknown_path");
  EXPECT_EQ(post("/nodes/o/resplit", {{"k", 2}}, 409).at("error"), "not_expanded");
  post("/nodes/o/expand", {{"k", 3}}, 200);
  EXPECT_EQ(post("/nodes/o/expand", json::object(), 409).at("error"), "not_a_leaf");
  EXPECT_EQ(post("/nodes/o/resplit", {{"k", 4}}, 422).at("error"), "k_exceeds_width");
  EXPECT_EQ(post("/nodes/o/resplit", json::object(), 400).at("error"), "bad_request");
  auto res = client->Post("/nodes/o~1/expand", "{oops", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(get("/health").at("revision"), 1);
}

TEST_F(ServiceTest, ResplitLeavesSiblingsByteIdentical) {
  session->build();
  const auto before = session->snapshot();
  const auto sibling = client->Get("/nodes/o~2");
  ASSERT_TRUE(sibling);
  auto r = post("/nodes/o~1/resplit", {{"k", 3}}, 200);
  EXPECT_EQ(r.at("node").at("children").size(), 3u);
  const auto after = client->Get("/nodes/o~2");
  ASSERT_TRUE(after);
  // The revision field differs; everything else must not.
  auto a = json::parse(sibling->body), b = json::parse(after->body);
  a.erase("revision");
  b.erase("revision");
  EXPECT_EQ(a.dump(), b.dump());
  auto full = json::parse(session->snapshot()->json), old = json::parse(before->json);
  EXPECT_EQ(full["root"]["children"][1].dump(), old["root"]["children"][1].dump());
  EXPECT_EQ(full["root"]["children"][2].dump(), old["root"]["children"][2].dump());
}

TEST_F(ServiceTest, SaveAndLoad) {
  post("/nodes/o/expand", {{"k", 3}}, 200);
  post("/nodes/o~3/expand", {{"k", 2}, {"alpha0", 0.5}}, 200);
  const auto file = (std::filesystem::temp_directory_path() / "strod_service_tree.json").string();
  post("/save", {{"path", file}}, 200);
  const auto saved = session->snapshot()->json;
  post("/nodes/o~1/expand", {{"k", 2}}, 200);
  auto r = post("/load", {{"path", file}}, 200);
  auto res = client->Get("/tree");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, saved);
  EXPECT_EQ(post("/load", {{"path", file + ".missing"}}, 500).at("error"), "internal");
  std::filesystem::remove(file);
}

TEST_F(ServiceTest, ConcurrentReadsSeeOldOrNewTree) {
  session->build();
  const auto old_json = session->snapshot()->json;
  std::atomic<bool> done{false};
  std::vector<std::string> bodies;
  std::thread reader([&] {
    httplib::Client c("127.0.0.1", service->port());
    while (!done.load()) {
      auto res = c.Get("/tree");
      if (res) bodies.push_back(res->body);
    }
  });
  auto r = post("/nodes/o~2/resplit", {{"k", 3}}, 200);
  done = true;
  reader.join();
  const auto new_json = session->snapshot()->json;
  ASSERT_FALSE(bodies.empty());
  for (const auto& b : bodies) EXPECT_TRUE(b == old_json || b == new_json);
}

TEST_F(ServiceTest, MatchesDirectSessionTree) {
  post("/nodes/o/expand", {{"k", 3}}, 200);
  post("/nodes/o~1/expand", {{"k", 2}}, 200);
  post("/nodes/o~1/resplit", {{"k", 3}}, 200);
  auto direct = fresh_session();
  direct->expand(NodePath::root(), 3);
  direct->expand(NodePath::parse("o/1"), 2);
  direct->resplit(NodePath::parse("o/1"), 3);
  auto res = client->Get("/tree");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, direct->snapshot()->json);
}

TEST_F(ServiceTest, BuildMatchesSessionBuild) {
  auto r = post("/build", json::object(), 200);
  EXPECT_EQ(r.at("changed"), "o");
  EXPECT_EQ(r.at("node").at("children").size(), 3u);
  auto res = client->Get("/tree");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, fresh_session()->build()->json);
}
