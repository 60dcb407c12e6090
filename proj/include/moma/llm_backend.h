#pragma once

// Uniform completion interface. Every model call in the system goes through
// a Backend, wrapped by CallRecorder (accounting.h) for retries and logging.

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "moma/core_types.h"

namespace moma {

struct GenParams {
  double temperature = 0.0;
  int max_tokens = 512;
  std::string model_name;
  // Excluded from fingerprints.
  std::optional<std::int64_t> seed;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct Completion {
  std::string text;
  TokenUsage usage;
  std::int64_t latency_ms = 0;

  bool operator==(const Completion& o) const {
    return text == o.text && usage.prompt_tokens == o.usage.prompt_tokens &&
           usage.completion_tokens == o.usage.completion_tokens &&
           latency_ms == o.latency_ms;
  }
};

struct ModelProfile {
  std::string name;
  GenParams defaults;
};

// "gpt-3.5-turbo-0125" (temperature 0) and "llama-3-8b-instruct"
// (temperature 0.01).
ModelProfile gpt35_profile();
ModelProfile llama3_profile();
// Accepts "gpt", "gpt-3.5-turbo-0125", "llama", "llama-3-8b-instruct".
ModelProfile profile_by_name(std::string_view name);

struct RequestFingerprint {
  std::string digest;  // 64 lowercase hex chars (SHA-256)
  auto operator<=>(const RequestFingerprint&) const = default;
};

RequestFingerprint fingerprint(std::span<const ChatMessage> messages,
                               const GenParams& params);

std::string sha256_hex(std::string_view data);

class BackendError : public std::runtime_error {
 public:
  enum class Kind { kTimeout, kRateLimited, kHttpError, kMalformedResponse, kScriptMiss };

  BackendError(Kind kind, const std::string& message, int status = 0,
               std::int64_t retry_after_ms = 0);

  Kind kind() const { return kind_; }
  int status() const { return status_; }
  std::int64_t retry_after_ms() const { return retry_after_ms_; }
  // Transport attempts made before this error was surfaced.
  int attempts() const { return attempts_; }
  void set_attempts(int n) { attempts_ = n; }

  // Timeout, RateLimited and HttpError(5xx) only.
  bool retryable() const;

  static std::string kind_name(Kind kind);

 private:
  Kind kind_;
  int status_;
  std::int64_t retry_after_ms_;
  int attempts_ = 1;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual Completion complete(std::span<const ChatMessage> messages,
                              const GenParams& params) = 0;
  // True when outputs (including usage and latency) are a pure function of
  // the request sequence.
  virtual bool deterministic() const { return false; }
};

// ceil(bytes / 4) over all message contents, and over the reply.
TokenUsage synthesize_usage(std::span<const ChatMessage> messages, std::string_view reply);

// Replays canned responses. Fingerprint entries are served per digest in
// file order (the last one repeats); sequence entries are served in `seq`
// order to any request whose fingerprint has no entry.
class ScriptedBackend : public Backend {
 public:
  struct Entry {
    std::optional<std::string> fingerprint;
    std::optional<std::int64_t> seq;
    std::string response;
    std::string note;
    // When set, the entry raises instead of answering: "timeout",
    // "rate_limited", "http_error", "malformed".
    std::optional<std::string> error;
    int status = 0;
    std::int64_t retry_after_ms = 0;
  };

  ScriptedBackend() = default;
  explicit ScriptedBackend(std::vector<Entry> entries);
  ScriptedBackend(ScriptedBackend&& other) noexcept;

  // JSON Lines: {fingerprint | seq, response, note[, error, status, retry_after_ms]}.
  static ScriptedBackend from_file(const std::filesystem::path& path);
  static Entry parse_line(std::string_view line);

  void add(Entry entry);
  void add_response(const RequestFingerprint& fp, std::string response);
  void add_queued(std::string response);
  void add_queued_error(BackendError::Kind kind, int status = 0, std::int64_t retry_after_ms = 0);

  Completion complete(std::span<const ChatMessage> messages, const GenParams& params) override;
  bool deterministic() const override { return true; }

  std::size_t calls() const;

 private:
  Completion serve(const Entry& entry, std::span<const ChatMessage> messages);

  mutable std::mutex mu_;
  std::map<std::string, std::vector<Entry>> by_fingerprint_;
  std::map<std::string, std::size_t> served_;
  std::deque<Entry> queue_;
  std::size_t calls_ = 0;
};

// Computes replies with a callback. Usage is synthesized like the scripted
// backend; latency is 0.
class FunctionBackend : public Backend {
 public:
  using Responder =
      std::function<std::string(std::span<const ChatMessage>, const GenParams&)>;
  explicit FunctionBackend(Responder responder) : responder_(std::move(responder)) {}

  Completion complete(std::span<const ChatMessage> messages, const GenParams& params) override;
  bool deterministic() const override { return true; }

 private:
  Responder responder_;
};

// Forwards to an inner backend and appends every successful exchange as a
// fingerprint-keyed script line, so a run can later be replayed offline.
class RecordingBackend : public Backend {
 public:
  RecordingBackend(Backend& inner, const std::filesystem::path& script_path);

  Completion complete(std::span<const ChatMessage> messages, const GenParams& params) override;
  bool deterministic() const override { return inner_.deterministic(); }

 private:
  Backend& inner_;
  std::mutex mu_;
  std::ofstream out_;
};

struct HttpConfig {
  // e.g. "https://api.openai.com/v1"; requests go to <base>/chat/completions.
  std::string base_url;
  std::string api_key;
  std::int64_t timeout_ms = 60000;
  int max_in_flight = 8;
};

// Reads MOMA_API_BASE and MOMA_API_KEY. Throws ConfigError if the base URL is
// missing.
HttpConfig http_config_from_env();

// OpenAI-compatible chat-completions client.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpConfig config);
  ~HttpBackend() override;

  Completion complete(std::span<const ChatMessage> messages, const GenParams& params) override;

  static json build_request_body(std::span<const ChatMessage> messages, const GenParams& params);
  // Throws BackendError(kMalformedResponse) on any schema deviation.
  static Completion parse_response_body(std::string_view body);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::int64_t base_backoff_ms = 500;
  // Each delay is scaled by a factor drawn from [1, 1 + jitter).
  double jitter = 0.2;
  // Injection point for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

// Delay before retry number `retry` (1-based), ignoring jitter.
std::int64_t backoff_delay_ms(const RetryPolicy& policy, int retry, std::int64_t retry_after_ms);

struct RetryResult {
  Completion completion;
  int attempts = 1;
};

// Retries Timeout, RateLimited and HttpError(5xx) with exponential backoff.
// On exhaustion or a non-retryable error, rethrows the last BackendError with
// attempts() set.
RetryResult with_retry(const std::function<Completion()>& request, const RetryPolicy& policy);

}  // namespace moma
