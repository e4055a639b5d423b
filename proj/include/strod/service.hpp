#pragma once

#include <cstdlib>
#include <memory>
#include <string>
#include <thread>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "strod/error.hpp"
#include "strod/path.hpp"
#include "strod/serialize.hpp"
#include "strod/session.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines _res as a macro.
#include <httplib.h>

namespace strod {

inline constexpr int kDefaultPort = 8470;

/// Port from STROD_PORT, else kDefaultPort.
inline int default_port() {
  if (const char* env = std::getenv("STROD_PORT")) {
    try {
      const int p = std::stoi(env);
      if (p > 0 && p < 65536) return p;
    } catch (const std::exception&) {
    }
  }
  return kDefaultPort;
}

/// URL form of a node path: '~' separates steps ("o~1~2").
inline NodePath parse_url_path(const std::string& segment) { return NodePath::parse(segment, '~'); }

struct HttpError {
  int status;
  std::string code;
};

inline HttpError classify(const std::exception& e) {
  if (dynamic_cast<const LookupError*>(&e)) return {404, "unknown_path"};
  if (dynamic_cast<const NotALeafError*>(&e)) return {409, "not_a_leaf"};
  if (dynamic_cast<const NotExpandedError*>(&e)) return {409, "not_expanded"};
  if (dynamic_cast<const WidthBoundError*>(&e)) return {422, "k_exceeds_width"};
  if (dynamic_cast<const Cancelled*>(&e)) return {409, "cancelled"};
  if (dynamic_cast<const StructuralError*>(&e)) return {409, "structural_mismatch"};
  if (dynamic_cast<const ContractViolation*>(&e)) return {400, "bad_request"};
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return {400, "bad_request"};
  return {500, "internal"};
}

/// JSON-over-HTTP front end for a Session.
///
///   GET  /health
///   GET  /tree
///   GET  /nodes/{path}              node detail, children as paths
///   POST /build                     rebuild the full tree from the config
///   POST /nodes/{path}/expand       {"k"?: int, "alpha0"?: number}
///   POST /nodes/{path}/resplit      {"k": int}
///   POST /save                      {"path": file}
///   POST /load                      {"path": file}
class Service {
 public:
  explicit Service(std::shared_ptr<Session> session) : session_(std::move(session)) { routes(); }
  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host, int port) {
    if (port == 0)
      port_ = server_.bind_to_any_port(host);
    else if (server_.bind_to_port(host, port))
      port_ = port;
    else
      port_ = -1;
    if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }

 private:
  static void send_json(httplib::Response& res, int status, const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json");
  }

  static void send_error(httplib::Response& res, const std::exception& e) {
    auto he = classify(e);
    send_json(res, he.status, nlohmann::json({{"error", he.code}, {"message", e.what()}}).dump());
  }

  template <class F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      send_error(res, e);
    }
  }

  static nlohmann::json body_json(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw ContractViolation("request body must be a JSON object");
    return j;
  }

  void routes() {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      auto snap = session_->snapshot();
      send_json(res, 200,
                nlohmann::json({{"status", "ok"}, {"revision", snap->revision}, {"nodes", snap->doc.tree.node_count()}})
                    .dump());
    });

    server_.Get("/tree", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, session_->snapshot()->json);
    });

    server_.Get(R"(/nodes/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto snap = session_->snapshot();
        const auto& node = find_node(snap->doc.tree.root, parse_url_path(req.matches[1]));
        auto j = node_to_json_shallow(node, session_->corpus().vocabulary());
        nlohmann::json kids = nlohmann::json::array();
        for (const auto& c : node.children) kids.push_back(c.path.str());
        j["children"] = kids;
        j["revision"] = snap->revision;
        send_json(res, 200, dump_json(j));
      });
    });

    server_.Post("/build", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { reply_mutation(res, session_->build(), NodePath::root()); });
    });

    server_.Post(R"(/nodes/([^/]+)/expand)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto path = parse_url_path(req.matches[1]);
        const auto body = body_json(req);
        std::optional<int> k;
        std::optional<double> alpha0;
        if (body.contains("k") && !body["k"].is_null()) k = body["k"].get<int>();
        if (body.contains("alpha0") && !body["alpha0"].is_null()) alpha0 = body["alpha0"].get<double>();
        reply_mutation(res, session_->expand(path, k, alpha0), path);
      });
    });

    server_.Post(R"(/nodes/([^/]+)/resplit)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto path = parse_url_path(req.matches[1]);
        const auto body = body_json(req);
        if (!body.contains("k")) throw ContractViolation("resplit needs k");
        reply_mutation(res, session_->resplit(path, body["k"].get<int>()), path);
      });
    });

    server_.Post("/save", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto file = body_json(req).at("path").get<std::string>();
        session_->save(file);
        send_json(res, 200, nlohmann::json({{"saved", file}, {"revision", session_->snapshot()->revision}}).dump());
      });
    });

    server_.Post("/load", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto file = body_json(req).at("path").get<std::string>();
        auto snap = session_->load(file);
        send_json(res, 200, nlohmann::json({{"loaded", file}, {"revision", snap->revision}}).dump());
      });
    });
  }

  void reply_mutation(httplib::Response& res, const std::shared_ptr<const Snapshot>& snap, const NodePath& path) {
    const auto& node = find_node(snap->doc.tree.root, path);
    nlohmann::json j = {{"changed", path.str()},
                        {"revision", snap->revision},
                        {"node", node_to_json(node, session_->corpus().vocabulary())}};
    send_json(res, 200, dump_json(j));
  }

  std::shared_ptr<Session> session_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace strod
