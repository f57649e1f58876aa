#pragma once
// HTTP POST transport for the wire protocol, plus a tiny server wrapper used
// to expose in-process handlers on a socket (loopback tests, local services).

#include "wiretap/wire.hpp"

#include "httplib.h"

#include <cstdlib>
#include <optional>
#include <regex>
#include <string>
#include <thread>

namespace wiretap {

struct ParsedUrl {
  std::string scheme_host_port;  // e.g. http://127.0.0.1:8080
  std::string path;              // defaults to "/"
};

inline ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(http://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw InvalidArgument("unsupported endpoint URL '" + url + "' (expected http://host[:port][/path])");
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

class HttpTransport : public Transport {
 public:
  HttpTransport(const std::string& url, int timeout_ms) : url_(parse_url(url)), timeout_ms_(timeout_ms) {
    require(timeout_ms > 0, "HttpTransport: timeout must be positive");
  }

  std::string roundtrip(const std::string& request) override {
    // One client per call keeps the transport safe to share across threads.
    httplib::Client cli(url_.scheme_host_port);
    const auto sec = timeout_ms_ / 1000, usec = (timeout_ms_ % 1000) * 1000;
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
    auto res = cli.Post(url_.path, request, "application/json");
    if (!res) throw TransportError("POST " + url_.scheme_host_port + url_.path + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransportError("POST " + url_.path + " returned HTTP " + std::to_string(res->status));
    return res->body;
  }

 private:
  ParsedUrl url_;
  int timeout_ms_;
};

/// Serves a handler on 127.0.0.1 at an ephemeral port until destroyed.
class LoopbackServer {
 public:
  explicit LoopbackServer(FunctionTransport::Handler handler) {
    server_.Post("/", [h = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
      try {
        res.set_content(h(req.body), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(e.what(), "text/plain");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw TransportError("LoopbackServer: could not bind");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LoopbackServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  LoopbackServer(const LoopbackServer&) = delete;
  LoopbackServer& operator=(const LoopbackServer&) = delete;

  int port() const noexcept { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/"; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

inline constexpr const char* kJudgeUrlEnv = "WIRETAP_JUDGE_URL";
inline constexpr const char* kGeneratorUrlEnv = "WIRETAP_GENERATOR_URL";
inline constexpr const char* kPolicyUrlEnv = "WIRETAP_POLICY_URL";

/// Endpoint override from the environment, if set and non-empty.
inline std::optional<std::string> endpoint_from_env(const char* var) {
  const char* v = std::getenv(var);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

}  // namespace wiretap
