#include "koa/agents.hpp"

#include <cstdlib>

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

#include "koa/error.hpp"
#include "koa/log.hpp"

namespace koa {

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  std::string_view url = options_.url;
  if (!url.starts_with("http://")) {
    fail(ErrorCategory::Usage, "http backend url must start with http:// (got '" + options_.url + "')");
  }
  url.remove_prefix(7);
  const auto slash = url.find('/');
  std::string_view authority = url.substr(0, slash);
  path_ = slash == std::string_view::npos ? "/" : std::string(url.substr(slash));
  const auto colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    host_ = std::string(authority.substr(0, colon));
    try {
      port_ = std::stoi(std::string(authority.substr(colon + 1)));
    } catch (const std::exception&) {
      fail(ErrorCategory::Usage, "bad port in backend url '" + options_.url + "'");
    }
  } else {
    host_ = std::string(authority);
  }
  if (host_.empty()) fail(ErrorCategory::Usage, "backend url has no host");
}

std::string HttpBackend::fingerprint() const { return "http:" + options_.url + "#" + options_.model; }

std::string HttpBackend::generate(const GenerationRequest& req) {
  std::string user = "Intent: " + req.intent + "\nEvidence (quote numbers exactly as rendered):\n";
  for (const auto& c : req.citations) user += "  " + c.field + " = " + c.rendered + "\n";
  if (!req.slots.empty()) {
    user += "Context:\n";
    for (const auto& [k, v] : req.slots) user += "  " + k + ": " + v + "\n";
  }
  if (req.conversation && !req.conversation->empty()) {
    user += "Conversation so far:\n";
    for (const auto& m : *req.conversation) user += "  [" + std::string(role_name(m.role)) + "] " + m.text + "\n";
  }
  const nlohmann::json body = {
      {"model", options_.model},
      {"messages", {{{"role", "system"}, {"content", req.system_prompt}}, {{"role", "user"}, {"content", user}}}},
  };

  httplib::Headers headers;
  if (const char* tok = std::getenv(options_.token_env.c_str()); tok && *tok) {
    headers.emplace("Authorization", std::string("Bearer ") + tok);
  }
  std::string last_error;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    httplib::Client cli(host_, port_);
    const auto secs = options_.timeout.count() / 1000;
    const auto usecs = (options_.timeout.count() % 1000) * 1000;
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status >= 500 || res->status == 429) {
      last_error = "status " + std::to_string(res->status);
    } else if (res->status != 200) {
      fail(ErrorCategory::Transport, "backend rejected the request with status " + std::to_string(res->status));
    } else {
      try {
        const auto j = nlohmann::json::parse(res->body);
        if (j.contains("choices")) return j.at("choices").at(0).at("message").at("content").get<std::string>();
        if (j.contains("text")) return j.at("text").get<std::string>();
        last_error = "response carries neither choices nor text";
      } catch (const nlohmann::json::exception& e) {
        last_error = std::string("malformed response: ") + e.what();
      }
    }
    log::warning("backend attempt " + std::to_string(attempt + 1) + " failed: " + last_error);
  }
  fail(ErrorCategory::Transport, "backend unavailable after " + std::to_string(options_.retries + 1) +
                                     " attempts: " + last_error);
}

}  // namespace koa
