#include "cspeech/http_client.hpp"

#include <cstdlib>

#include <httplib.h>

#include "cspeech/common.hpp"

namespace cspeech {

HttpEndpoint HttpEndpoint::parse(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind("https://", 0) == 0) throw ConfigError("https endpoints are not supported: use a local proxy");
  if (url.rfind(scheme, 0) != 0) throw ConfigError("endpoint URL must start with http://");
  const auto slash = url.find('/', scheme.size());
  HttpEndpoint e;
  e.host_port = url.substr(0, slash);
  e.path = slash == std::string::npos ? "/" : url.substr(slash);
  if (e.host_port.size() == scheme.size()) throw ConfigError("endpoint URL has no host");
  return e;
}

HttpEndpoint HttpEndpoint::from_env(const char* url_var, const char* token_var) {
  const char* url = std::getenv(url_var);
  if (!url || !*url) throw ConfigError(std::string("environment variable ") + url_var + " is not set");
  auto e = parse(url);
  if (const char* tok = token_var ? std::getenv(token_var) : nullptr) e.token = tok;
  return e;
}

nlohmann::json post_json(const HttpEndpoint& endpoint, const nlohmann::json& body) {
  httplib::Client cli(endpoint.host_port);
  cli.set_connection_timeout(endpoint.timeout);
  cli.set_read_timeout(endpoint.timeout);
  cli.set_write_timeout(endpoint.timeout);
  httplib::Headers headers;
  if (!endpoint.token.empty()) headers.emplace("Authorization", "Bearer " + endpoint.token);
  auto res = cli.Post(endpoint.path, headers, body.dump(), "application/json");
  if (!res) throw TransportError("POST " + endpoint.host_port + endpoint.path + ": " + httplib::to_string(res.error()));
  if (res->status >= 500) throw TransportError("POST " + endpoint.path + ": status " + std::to_string(res->status));
  if (res->status < 200 || res->status >= 300)
    throw InputError("POST " + endpoint.path + ": status " + std::to_string(res->status) + ": " + res->body);
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception&) {
    throw InputError("POST " + endpoint.path + ": response is not JSON");
  }
}

}  // namespace cspeech
