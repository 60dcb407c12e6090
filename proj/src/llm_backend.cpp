#include "moma/llm_backend.h"

#include <openssl/evp.h>

#include <cmath>
#include <random>
#include <thread>

#include "moma/errors.h"
#include "moma/text_util.h"

namespace moma {

ModelProfile gpt35_profile() {
  GenParams p;
  p.model_name = "gpt-3.5-turbo-0125";
  p.temperature = 0.0;
  return {"gpt-3.5-turbo-0125", p};
}

ModelProfile llama3_profile() {
  GenParams p;
  p.model_name = "llama-3-8b-instruct";
  p.temperature = 0.01;
  return {"llama-3-8b-instruct", p};
}

ModelProfile profile_by_name(std::string_view name) {
  if (text::iequals(name, "gpt") || text::iequals(name, "gpt-3.5-turbo-0125") ||
      text::iequals(name, "gpt-3.5-turbo"))
    return gpt35_profile();
  if (text::iequals(name, "llama") || text::iequals(name, "llama-3-8b-instruct"))
    return llama3_profile();
  throw ConfigError("unknown model profile '" + std::string(name) + "'");
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

RequestFingerprint fingerprint(std::span<const ChatMessage> messages, const GenParams& params) {
  // nlohmann objects are key-sorted, so the canonical form does not depend
  // on construction order.
  json canon;
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({to_string(m.role), m.content});
  canon["messages"] = std::move(msgs);
  canon["model"] = params.model_name;
  canon["temperature"] = params.temperature;
  canon["max_tokens"] = params.max_tokens;
  return {sha256_hex(canon.dump())};
}

// ---------------------------------------------------------------------------

BackendError::BackendError(Kind kind, const std::string& message, int status,
                           std::int64_t retry_after_ms)
    : std::runtime_error(kind_name(kind) + ": " + message),
      kind_(kind),
      status_(status),
      retry_after_ms_(retry_after_ms) {}

bool BackendError::retryable() const {
  switch (kind_) {
    case Kind::kTimeout:
    case Kind::kRateLimited:
      return true;
    case Kind::kHttpError:
      return status_ >= 500 && status_ <= 599;
    case Kind::kMalformedResponse:
    case Kind::kScriptMiss:
      return false;
  }
  return false;
}

std::string BackendError::kind_name(Kind kind) {
  switch (kind) {
    case Kind::kTimeout:
      return "Timeout";
    case Kind::kRateLimited:
      return "RateLimited";
    case Kind::kHttpError:
      return "HttpError";
    case Kind::kMalformedResponse:
      return "MalformedResponse";
    case Kind::kScriptMiss:
      return "ScriptMiss";
  }
  return "BackendError";
}

// ---------------------------------------------------------------------------

TokenUsage synthesize_usage(std::span<const ChatMessage> messages, std::string_view reply) {
  std::int64_t prompt_chars = 0;
  for (const auto& m : messages) prompt_chars += static_cast<std::int64_t>(m.content.size());
  auto ceil4 = [](std::int64_t n) { return (n + 3) / 4; };
  return {ceil4(prompt_chars), ceil4(static_cast<std::int64_t>(reply.size()))};
}

namespace {

BackendError::Kind parse_error_kind(std::string_view name) {
  if (text::iequals(name, "timeout")) return BackendError::Kind::kTimeout;
  if (text::iequals(name, "rate_limited")) return BackendError::Kind::kRateLimited;
  if (text::iequals(name, "http_error")) return BackendError::Kind::kHttpError;
  if (text::iequals(name, "malformed")) return BackendError::Kind::kMalformedResponse;
  throw ConfigError("unknown scripted error '" + std::string(name) + "'");
}

std::string error_kind_token(BackendError::Kind kind) {
  switch (kind) {
    case BackendError::Kind::kTimeout:
      return "timeout";
    case BackendError::Kind::kRateLimited:
      return "rate_limited";
    case BackendError::Kind::kHttpError:
      return "http_error";
    case BackendError::Kind::kMalformedResponse:
      return "malformed";
    case BackendError::Kind::kScriptMiss:
      break;
  }
  throw ConfigError("ScriptMiss cannot be scripted");
}

}  // namespace

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries) {
  for (auto& e : entries) add(std::move(e));
}

ScriptedBackend::Entry ScriptedBackend::parse_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("script line is not JSON: ") + e.what());
  }
  Entry e;
  if (j.contains("fingerprint")) e.fingerprint = j["fingerprint"].get<std::string>();
  if (j.contains("seq")) e.seq = j["seq"].get<std::int64_t>();
  if (!e.fingerprint && !e.seq) throw ConfigError("script line needs 'fingerprint' or 'seq'");
  e.response = j.value("response", "");
  e.note = j.value("note", "");
  if (j.contains("error")) {
    e.error = j["error"].get<std::string>();
    parse_error_kind(*e.error);
  }
  e.status = j.value("status", 0);
  e.retry_after_ms = j.value("retry_after_ms", std::int64_t{0});
  return e;
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open script file " + path.string());
  ScriptedBackend backend;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      backend.add(parse_line(line));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return backend;
}

ScriptedBackend::ScriptedBackend(ScriptedBackend&& other) noexcept {
  std::lock_guard lock(other.mu_);
  by_fingerprint_ = std::move(other.by_fingerprint_);
  served_ = std::move(other.served_);
  queue_ = std::move(other.queue_);
  calls_ = other.calls_;
}

void ScriptedBackend::add(Entry entry) {
  std::lock_guard lock(mu_);
  if (entry.fingerprint) {
    by_fingerprint_[*entry.fingerprint].push_back(std::move(entry));
  } else {
    auto pos = std::upper_bound(queue_.begin(), queue_.end(), *entry.seq,
                                [](std::int64_t s, const Entry& e) { return s < *e.seq; });
    queue_.insert(pos, std::move(entry));
  }
}

void ScriptedBackend::add_response(const RequestFingerprint& fp, std::string response) {
  Entry e;
  e.fingerprint = fp.digest;
  e.response = std::move(response);
  add(std::move(e));
}

void ScriptedBackend::add_queued(std::string response) {
  Entry e;
  {
    std::lock_guard lock(mu_);
    e.seq = queue_.empty() ? 0 : *queue_.back().seq + 1;
  }
  e.response = std::move(response);
  add(std::move(e));
}

void ScriptedBackend::add_queued_error(BackendError::Kind kind, int status,
                                       std::int64_t retry_after_ms) {
  Entry e;
  {
    std::lock_guard lock(mu_);
    e.seq = queue_.empty() ? 0 : *queue_.back().seq + 1;
  }
  e.error = error_kind_token(kind);
  e.status = status;
  e.retry_after_ms = retry_after_ms;
  add(std::move(e));
}

Completion ScriptedBackend::serve(const Entry& entry, std::span<const ChatMessage> messages) {
  if (entry.error) {
    throw BackendError(parse_error_kind(*entry.error), "scripted failure", entry.status,
                       entry.retry_after_ms);
  }
  Completion c;
  c.text = entry.response;
  c.usage = synthesize_usage(messages, c.text);
  c.latency_ms = 0;
  return c;
}

Completion ScriptedBackend::complete(std::span<const ChatMessage> messages,
                                     const GenParams& params) {
  auto fp = fingerprint(messages, params);
  Entry entry;
  {
    std::lock_guard lock(mu_);
    ++calls_;
    auto it = by_fingerprint_.find(fp.digest);
    if (it != by_fingerprint_.end()) {
      auto& n = served_[fp.digest];
      entry = it->second[std::min(n, it->second.size() - 1)];
      ++n;
    } else if (!queue_.empty()) {
      entry = queue_.front();
      queue_.pop_front();
    } else {
      throw BackendError(BackendError::Kind::kScriptMiss,
                         "no scripted response for fingerprint " + fp.digest);
    }
  }
  return serve(entry, messages);
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

// ---------------------------------------------------------------------------

Completion FunctionBackend::complete(std::span<const ChatMessage> messages,
                                     const GenParams& params) {
  Completion c;
  c.text = responder_(messages, params);
  c.usage = synthesize_usage(messages, c.text);
  return c;
}

RecordingBackend::RecordingBackend(Backend& inner, const std::filesystem::path& script_path)
    : inner_(inner), out_(script_path, std::ios::app) {
  if (!out_) throw ConfigError("cannot open script for recording: " + script_path.string());
}

Completion RecordingBackend::complete(std::span<const ChatMessage> messages,
                                      const GenParams& params) {
  Completion c = inner_.complete(messages, params);
  json line;
  line["fingerprint"] = fingerprint(messages, params).digest;
  line["response"] = c.text;
  std::string note;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::kUser) {
      note = it->content.substr(0, std::min<std::size_t>(it->content.size(), 60));
      break;
    }
  }
  line["note"] = note;
  // Truncation can split a UTF-8 sequence; replace rather than throw.
  std::string dumped = line.dump(-1, ' ', false, json::error_handler_t::replace);
  std::lock_guard lock(mu_);
  out_ << dumped << '\n';
  out_.flush();
  return c;
}

// ---------------------------------------------------------------------------

std::int64_t backoff_delay_ms(const RetryPolicy& policy, int retry, std::int64_t retry_after_ms) {
  std::int64_t delay = policy.base_backoff_ms;
  for (int i = 1; i < retry; ++i) delay *= 2;
  return std::max(delay, retry_after_ms);
}

RetryResult with_retry(const std::function<Completion()>& request, const RetryPolicy& policy) {
  if (policy.max_attempts < 1) throw ConfigError("retry policy needs max_attempts >= 1");
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 1;; ++attempt) {
    try {
      RetryResult r;
      r.completion = request();
      r.attempts = attempt;
      return r;
    } catch (BackendError& e) {
      e.set_attempts(attempt);
      if (!e.retryable() || attempt >= policy.max_attempts) throw;
      auto delay = static_cast<double>(backoff_delay_ms(policy, attempt, e.retry_after_ms()));
      if (policy.jitter > 0) delay *= 1.0 + policy.jitter * unit(rng);
      auto ms = std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(delay)));
      if (policy.sleep)
        policy.sleep(ms);
      else
        std::this_thread::sleep_for(ms);
    }
  }
}

}  // namespace moma
