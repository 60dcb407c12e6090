#pragma once

// Call and token bookkeeping.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moma/core_types.h"
#include "moma/llm_backend.h"

namespace moma {

// Stage labels used in CallEntry::stage.
namespace stage {
inline constexpr const char* kMask = "mask";
inline constexpr const char* kBalance = "balance";
inline constexpr const char* kTask = "task";
inline constexpr const char* kCotReason = "cot-reason";
inline constexpr const char* kCotExtract = "cot-extract";
inline constexpr const char* kDebateJudge = "debate-judge";
std::string debate(int round, int agent);  // "debate-r{round}-a{agent}", 1-based
std::string sc_sample(int sample);         // "sc-sample-{k}", 1-based
}  // namespace stage

// Issues the logical model calls of one (method, item) pair through the
// retry policy and keeps that pair's CallLog.
class CallRecorder {
 public:
  CallRecorder(Backend& backend, RetryPolicy policy, std::string method, std::string item_id);

  // One logical call; appends one entry. Terminal failures are logged with
  // `error` set and rethrown.
  Completion call(const std::string& stage, std::span<const ChatMessage> messages,
                  const GenParams& params);
  // A validation retry of the most recent logical call: its attempts and
  // token counts are folded into the last entry instead of a new one.
  Completion retry_last(std::span<const ChatMessage> messages, const GenParams& params);

  const CallLog& log() const { return log_; }
  CallLog take_log() { return std::move(log_); }
  Backend& backend() { return backend_; }

 private:
  Completion issue(std::span<const ChatMessage> messages, const GenParams& params,
                   CallEntry& entry);

  Backend& backend_;
  RetryPolicy policy_;
  std::string method_;
  std::string item_id_;
  CallLog log_;
};

// The run-wide CallLog. Entries from concurrent workers are given monotone
// sequence numbers at append time.
class CallSink {
 public:
  void append(std::span<const CallEntry> entries);
  CallLog snapshot() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  CallLog entries_;
  std::uint64_t next_seq_ = 0;
};

// Prices per 1k tokens, in whatever unit the caller chooses.
struct PriceTable {
  double prompt_price = 1.0;
  double completion_price = 1.0;
};

struct MethodCost {
  std::int64_t logical_calls = 0;
  std::int64_t attempts = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double generation_cost = 0;
  double overall_cost = 0;
};

struct CostReport {
  std::map<std::string, MethodCost> per_method;
  // overall_cost(method) / overall_cost(reference); empty if no reference.
  std::map<std::string, double> ratios_vs_cot;
  std::string reference;
};

// Throws MetricError(kMissingReferenceMethod) when `reference` is set but
// absent from the logs.
CostReport aggregate_costs(std::span<const CallEntry> entries, const PriceTable& prices,
                           const std::optional<std::string>& reference = std::string("CoT"));

json cost_report_to_json(const CostReport& report, const PriceTable& prices);
CostReport cost_report_from_json(const json& j);
std::string render_cost_table(const CostReport& report);

}  // namespace moma
