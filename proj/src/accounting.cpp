#include "moma/accounting.h"

#include <fmt/format.h>

#include "moma/errors.h"

namespace moma {

namespace stage {
std::string debate(int round, int agent) {
  return "debate-r" + std::to_string(round) + "-a" + std::to_string(agent);
}
std::string sc_sample(int sample) { return "sc-sample-" + std::to_string(sample); }
}  // namespace stage

CallRecorder::CallRecorder(Backend& backend, RetryPolicy policy, std::string method,
                           std::string item_id)
    : backend_(backend),
      policy_(std::move(policy)),
      method_(std::move(method)),
      item_id_(std::move(item_id)) {}

Completion CallRecorder::issue(std::span<const ChatMessage> messages, const GenParams& params,
                               CallEntry& entry) {
  try {
    auto r = with_retry([&] { return backend_.complete(messages, params); }, policy_);
    entry.attempts += r.attempts;
    entry.prompt_tokens += r.completion.usage.prompt_tokens;
    entry.completion_tokens += r.completion.usage.completion_tokens;
    entry.latency_ms += r.completion.latency_ms;
    return r.completion;
  } catch (const BackendError& e) {
    entry.attempts += e.attempts();
    entry.error = e.what();
    throw;
  }
}

Completion CallRecorder::call(const std::string& stage_name, std::span<const ChatMessage> messages,
                              const GenParams& params) {
  CallEntry& entry = log_.emplace_back();
  entry.seq = log_.size() - 1;
  entry.method = method_;
  entry.item_id = item_id_;
  entry.stage = stage_name;
  entry.attempts = 0;
  return issue(messages, params, entry);
}

Completion CallRecorder::retry_last(std::span<const ChatMessage> messages, const GenParams& params) {
  if (log_.empty()) throw std::logic_error("retry_last without a prior call");
  return issue(messages, params, log_.back());
}

void CallSink::append(std::span<const CallEntry> entries) {
  std::lock_guard lock(mu_);
  for (auto e : entries) {
    e.seq = next_seq_++;
    entries_.push_back(std::move(e));
  }
}

CallLog CallSink::snapshot() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::size_t CallSink::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

CostReport aggregate_costs(std::span<const CallEntry> entries, const PriceTable& prices,
                           const std::optional<std::string>& reference) {
  CostReport report;
  for (const auto& e : entries) {
    auto& m = report.per_method[e.method];
    m.logical_calls += 1;
    m.attempts += e.attempts;
    m.prompt_tokens += e.prompt_tokens;
    m.completion_tokens += e.completion_tokens;
  }
  for (auto& [name, m] : report.per_method) {
    m.generation_cost = static_cast<double>(m.completion_tokens) / 1000.0 * prices.completion_price;
    m.overall_cost =
        m.generation_cost + static_cast<double>(m.prompt_tokens) / 1000.0 * prices.prompt_price;
  }
  if (reference) {
    auto ref = report.per_method.find(*reference);
    if (ref == report.per_method.end())
      throw MetricError(MetricError::Kind::kMissingReferenceMethod,
                        "reference method '" + *reference + "' not present in call logs");
    report.reference = *reference;
    for (const auto& [name, m] : report.per_method) {
      report.ratios_vs_cot[name] =
          name == *reference ? 1.0 : m.overall_cost / ref->second.overall_cost;
    }
  }
  return report;
}

json cost_report_to_json(const CostReport& report, const PriceTable& prices) {
  json j;
  j["prices_per_1k"] = {{"prompt", prices.prompt_price}, {"completion", prices.completion_price}};
  json methods = json::object();
  for (const auto& [name, m] : report.per_method) {
    methods[name] = {{"logical_calls", m.logical_calls},
                     {"attempts", m.attempts},
                     {"prompt_tokens", m.prompt_tokens},
                     {"completion_tokens", m.completion_tokens},
                     {"generation_cost", m.generation_cost},
                     {"overall_cost", m.overall_cost}};
  }
  j["per_method"] = methods;
  if (!report.reference.empty()) {
    j["reference"] = report.reference;
    j["ratios_vs_reference"] = report.ratios_vs_cot;
  }
  return j;
}

CostReport cost_report_from_json(const json& j) {
  CostReport r;
  for (const auto& [name, m] : j.at("per_method").items()) {
    MethodCost c;
    c.logical_calls = m.at("logical_calls").get<std::int64_t>();
    c.attempts = m.at("attempts").get<std::int64_t>();
    c.prompt_tokens = m.at("prompt_tokens").get<std::int64_t>();
    c.completion_tokens = m.at("completion_tokens").get<std::int64_t>();
    c.generation_cost = m.at("generation_cost").get<double>();
    c.overall_cost = m.at("overall_cost").get<double>();
    r.per_method[name] = c;
  }
  r.reference = j.value("reference", "");
  if (j.contains("ratios_vs_reference"))
    r.ratios_vs_cot = j["ratios_vs_reference"].get<std::map<std::string, double>>();
  return r;
}

std::string render_cost_table(const CostReport& report) {
  std::string out = "| Method | Calls | Attempts | Prompt tok | Completion tok | Generation | Overall | x" +
                    (report.reference.empty() ? std::string("ref") : report.reference) + " |\n";
  out += "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& [name, m] : report.per_method) {
    std::string ratio = "-";
    if (auto it = report.ratios_vs_cot.find(name); it != report.ratios_vs_cot.end())
      ratio = fmt::format("{:.2f}", it->second);
    out += fmt::format("| {} | {} | {} | {} | {} | {:.4f} | {:.4f} | {} |\n", name, m.logical_calls,
                       m.attempts, m.prompt_tokens, m.completion_tokens, m.generation_cost,
                       m.overall_cost, ratio);
  }
  return out;
}

}  // namespace moma
