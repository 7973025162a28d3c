#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

namespace cspeech {

/// Plain-HTTP JSON endpoint, e.g. "http://localhost:8080/v1/chat".
struct HttpEndpoint {
  std::string host_port;  // "http://host:port"
  std::string path;       // "/v1/chat"
  std::string token;      // sent as a bearer token when non-empty
  std::chrono::seconds timeout{60};

  /// Parses a URL; https and malformed URLs are ConfigErrors.
  static HttpEndpoint parse(const std::string& url);
  /// Builds an endpoint from the URL in `url_var` and the token in `token_var`.
  /// A missing URL variable is a ConfigError; the token is optional.
  static HttpEndpoint from_env(const char* url_var, const char* token_var);
};

/// POSTs a JSON body and returns the parsed response. Connection failures,
/// timeouts and 5xx are TransportErrors; other non-2xx statuses and
/// non-JSON bodies are InputErrors.
nlohmann::json post_json(const HttpEndpoint& endpoint, const nlohmann::json& body);

}  // namespace cspeech
