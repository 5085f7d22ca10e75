#include "koa/raterkit.hpp"

#include <chrono>
#include <ctime>

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

#include "koa/error.hpp"

namespace koa {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

struct RaterServer::Impl {
  RaterStore& store;
  ServerOptions options;
  httplib::Server server;

  Impl(RaterStore& s, ServerOptions o) : store(s), options(std::move(o)) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                                {"Cache-Control", "no-store"}});
    // no SO_REUSEPORT: a second server on the same port must fail to bind
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get(R"(/api/raters/([^/]+)/packets)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string rater = req.matches[1];
      if (!authorised(req, res, rater)) return;
      nlohmann::json list = nlohmann::json::array();
      nlohmann::json next;
      for (const auto& p : store.assigned(rater)) {
        const bool done = store.rated(p.packet_id, rater);
        list.push_back({{"packet_id", p.packet_id}, {"rated", done}});
        if (!done && next.is_null()) next = p.packet_id;
      }
      send_json(res, 200, {{"rater_id", rater}, {"packets", list}, {"next", next}});
    });

    server.Get(R"(/api/packets/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto p = store.packet(std::string(req.matches[1]));
      if (!p) return send_error(res, 404, "unknown_packet", "no such packet");
      if (!authorised(req, res, p->rater_id)) return;
      send_json(res, 200, packet_payload(*p));
    });

    server.Post("/api/ratings", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error&) {
        return send_json(res, 400, {{"error", "validation"}, {"errors", {{{"field", "body"}, {"message", "invalid JSON"}}}}});
      }
      auto [rating, errors] = rating_from_json(body);
      if (!rating) {
        nlohmann::json es = nlohmann::json::array();
        for (const auto& e : errors) es.push_back({{"field", e.field}, {"message", e.message}});
        return send_json(res, 400, {{"error", "validation"}, {"errors", es}});
      }
      if (!authorised(req, res, rating->rater_id)) return;
      if (rating->timestamp.empty()) rating->timestamp = utc_now();
      const auto result = store.submit(*rating);
      switch (result.outcome) {
        case RaterStore::Outcome::Created:
          return send_json(res, 201, {{"status", "created"}, {"packet_id", rating->packet_id}});
        case RaterStore::Outcome::Conflict:
          return send_error(res, 409, "conflict", "this packet has already been rated by this rater");
        case RaterStore::Outcome::UnknownPacket: return send_error(res, 404, "unknown_packet", "no such packet");
        case RaterStore::Outcome::NotAssigned:
          return send_error(res, 403, "not_assigned", "packet is not assigned to this rater");
        case RaterStore::Outcome::Invalid: {
          nlohmann::json es = nlohmann::json::array();
          for (const auto& e : result.errors) es.push_back({{"field", e.field}, {"message", e.message}});
          return send_json(res, 400, {{"error", "validation"}, {"errors", es}});
        }
      }
    });

    server.Get(R"(/api/raters/([^/]+)/progress)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string rater = req.matches[1];
      if (!authorised(req, res, rater)) return;
      const auto p = store.progress(rater);
      send_json(res, 200, {{"rater_id", rater}, {"assigned", p.assigned}, {"rated", p.rated}, {"remaining", p.assigned - p.rated}});
    });
  }

  bool authorised(const httplib::Request& req, httplib::Response& res, const std::string& rater) {
    if (options.tokens.empty()) return true;
    const auto it = options.tokens.find(rater);
    const std::string header = req.get_header_value("Authorization");
    if (it == options.tokens.end() || header != "Bearer " + it->second) {
      send_error(res, 401, "unauthorised", "missing or invalid rater token");
      return false;
    }
    return true;
  }
};

RaterServer::RaterServer(RaterStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {}

RaterServer::~RaterServer() { stop(); }

int RaterServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p <= 0) fail(ErrorCategory::Io, "cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) fail(ErrorCategory::Io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void RaterServer::listen() { impl_->server.listen_after_bind(); }

void RaterServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace koa
