#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <semaphore>

#include "moma/errors.h"
#include "moma/llm_backend.h"

namespace moma {

HttpConfig http_config_from_env() {
  HttpConfig cfg;
  const char* base = std::getenv("MOMA_API_BASE");
  const char* key = std::getenv("MOMA_API_KEY");
  if (!base || !*base) throw ConfigError("MOMA_API_BASE is not set");
  cfg.base_url = base;
  if (key) cfg.api_key = key;
  return cfg;
}

struct HttpBackend::Impl {
  explicit Impl(HttpConfig c) : config(std::move(c)), slots(std::max(1, config.max_in_flight)) {
    auto scheme = config.base_url.find("://");
    if (scheme == std::string::npos) throw ConfigError("API base URL needs a scheme: " + config.base_url);
    auto path_start = config.base_url.find('/', scheme + 3);
    if (path_start == std::string::npos) {
      origin = config.base_url;
    } else {
      origin = config.base_url.substr(0, path_start);
      path_prefix = config.base_url.substr(path_start);
    }
    while (!path_prefix.empty() && path_prefix.back() == '/') path_prefix.pop_back();
  }

  HttpConfig config;
  std::string origin;
  std::string path_prefix;
  std::counting_semaphore<> slots;
};

HttpBackend::HttpBackend(HttpConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
HttpBackend::~HttpBackend() = default;

json HttpBackend::build_request_body(std::span<const ChatMessage> messages,
                                     const GenParams& params) {
  json body;
  body["model"] = params.model_name;
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  body["messages"] = std::move(msgs);
  // Integral temperatures go out as integers ("temperature": 0).
  double whole = 0;
  if (std::modf(params.temperature, &whole) == 0.0)
    body["temperature"] = static_cast<std::int64_t>(whole);
  else
    body["temperature"] = params.temperature;
  body["max_tokens"] = params.max_tokens;
  if (params.seed) body["seed"] = *params.seed;
  return body;
}

Completion HttpBackend::parse_response_body(std::string_view body) {
  try {
    auto j = json::parse(body);
    Completion c;
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw BackendError(BackendError::Kind::kMalformedResponse, "content is not a string");
    c.text = content.get<std::string>();
    if (j.contains("usage") && j["usage"].is_object()) {
      c.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
      c.usage.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
    }
    if (c.usage.prompt_tokens < 0 || c.usage.completion_tokens < 0)
      throw BackendError(BackendError::Kind::kMalformedResponse, "negative token usage");
    return c;
  } catch (const json::exception& e) {
    throw BackendError(BackendError::Kind::kMalformedResponse, e.what());
  }
}

Completion HttpBackend::complete(std::span<const ChatMessage> messages, const GenParams& params) {
  auto body = build_request_body(messages, params).dump();

  impl_->slots.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{impl_->slots};

  httplib::Client client(impl_->origin);
  auto timeout = std::chrono::milliseconds(impl_->config.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!impl_->config.api_key.empty())
    headers.emplace("Authorization", "Bearer " + impl_->config.api_key);

  auto start = std::chrono::steady_clock::now();
  auto res = client.Post(impl_->path_prefix + "/chat/completions", headers, body, "application/json");
  auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - start)
                     .count();
  if (!res) {
    // Connection-level failures are treated as transient like timeouts.
    throw BackendError(BackendError::Kind::kTimeout, "transport error: " + httplib::to_string(res.error()));
  }
  if (res->status == 429) {
    std::int64_t retry_after_ms = 0;
    if (res->has_header("Retry-After")) {
      try {
        retry_after_ms = static_cast<std::int64_t>(std::stod(res->get_header_value("Retry-After")) * 1000);
      } catch (const std::exception&) {
      }
    }
    throw BackendError(BackendError::Kind::kRateLimited, "HTTP 429", 429, retry_after_ms);
  }
  if (res->status < 200 || res->status >= 300) {
    throw BackendError(BackendError::Kind::kHttpError, "HTTP " + std::to_string(res->status),
                       res->status);
  }
  Completion c = parse_response_body(res->body);
  c.latency_ms = latency;
  return c;
}

}  // namespace moma
