#include "moma/baseline_methods.h"

#include <chrono>
#include <map>

#include "moma/answer_parsing.h"
#include "moma/errors.h"
#include "moma/moma_agents.h"
#include "moma/text_util.h"

namespace moma {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

AnswerRecord start_record(const QAItem& item, const MethodKind& m) {
  AnswerRecord rec;
  rec.item_id = item.id;
  rec.method = m;
  return rec;
}

void set_choice(AnswerRecord& rec, const ParseOutcome& p) {
  rec.parsed_choice = p.choice;
  rec.parse_strategy = p.strategy;
}

std::string user_prompt(const QAItem& item, const MethodContext& ctx) {
  auto opts = option_texts(item.options);
  return task_messages(item.context, item.question, opts, *ctx.prompts).back().content;
}

// Runs `body`; a backend failure marks the record Unanswered.
template <class F>
void guarded(AnswerRecord& rec, F&& body) {
  try {
    body();
  } catch (const BackendError& e) {
    rec.status = AnswerStatus::kUnanswered;
    rec.error = e.what();
  }
}

struct CotResult {
  std::string reasoning;
  std::string answer;
};

CotResult two_phase_cot(const QAItem& item, const MethodContext& ctx, CallRecorder& calls,
                        const std::string& reason_stage, const std::string& extract_stage,
                        const GenParams& reason_params) {
  const auto& system = ctx.prompts->task.system_instruction;
  std::string prompt = user_prompt(item, ctx);
  std::vector<ChatMessage> phase1 = {{Role::kSystem, system},
                                     {Role::kUser, prompt + "\n\n" + ctx.prompts->cot_trigger}};
  CotResult out;
  out.reasoning = calls.call(reason_stage, phase1, reason_params).text;
  std::string extract = ctx.prompts->cot_extract.render(
      {{"prompt", prompt}, {"trigger", ctx.prompts->cot_trigger}, {"reasoning", out.reasoning}});
  std::vector<ChatMessage> phase2 = {{Role::kSystem, system}, {Role::kUser, extract}};
  out.answer = calls.call(extract_stage, phase2, ctx.params).text;
  return out;
}

}  // namespace

std::vector<ChatMessage> abp_messages(const QAItem& item, int index, const MethodContext& ctx) {
  if (!ctx.abp) throw ConfigError("ABP methods need an ABP prompt set");
  if (index < 0 || index > 4) throw ConfigError("ABP index must be in 0..4");
  auto opts = option_texts(item.options);
  auto messages = task_messages(item.context, item.question, opts, *ctx.prompts);
  messages.front().content = ctx.abp->prompts[index] + "\n\n" + messages.front().content;
  return messages;
}

AnswerRecord answer_sp(const QAItem& item, const MethodContext& ctx, CallRecorder& calls) {
  auto rec = start_record(item, method::Sp{});
  guarded(rec, [&] {
    auto opts = option_texts(item.options);
    auto messages = task_messages(item.context, item.question, opts, *ctx.prompts);
    rec.raw_responses.push_back(calls.call(stage::kTask, messages, ctx.params).text);
    set_choice(rec, parse_choice(rec.raw_responses.back(), item.options));
  });
  return rec;
}

AnswerRecord answer_abp(const QAItem& item, int index, const MethodContext& ctx, CallRecorder& calls) {
  auto rec = start_record(item, method::Abp{index});
  auto messages = abp_messages(item, index, ctx);
  guarded(rec, [&] {
    rec.raw_responses.push_back(calls.call(stage::kTask, messages, ctx.params).text);
    set_choice(rec, parse_choice(rec.raw_responses.back(), item.options));
  });
  return rec;
}

AnswerRecord answer_cot(const QAItem& item, const MethodContext& ctx, CallRecorder& calls) {
  auto rec = start_record(item, method::Cot{});
  guarded(rec, [&] {
    auto r = two_phase_cot(item, ctx, calls, stage::kCotReason, stage::kCotExtract, ctx.params);
    rec.raw_responses = {r.reasoning, r.answer};
    set_choice(rec, parse_choice(r.answer, item.options));
  });
  return rec;
}

std::optional<int> plurality_vote(std::span<const std::optional<int>> votes) {
  std::map<int, int> count;
  std::map<int, std::size_t> first;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (!votes[i]) continue;
    ++count[*votes[i]];
    first.try_emplace(*votes[i], i);
  }
  std::optional<int> best;
  for (const auto& [choice, n] : count) {
    if (!best || n > count[*best] || (n == count[*best] && first[choice] < first[*best])) best = choice;
  }
  return best;
}

AnswerRecord answer_sc(const QAItem& item, const method::Sc& cfg, const MethodContext& ctx,
                       CallRecorder& calls) {
  auto rec = start_record(item, cfg);
  std::vector<std::optional<int>> votes;
  guarded(rec, [&] {
    for (int k = 1; k <= cfg.samples; ++k) {
      GenParams sample = ctx.params;
      sample.temperature = ctx.sc_temperature;
      sample.seed = ctx.params.seed.value_or(0) + k;
      auto label = stage::sc_sample(k);
      auto r = two_phase_cot(item, ctx, calls, label, label, sample);
      rec.raw_responses.push_back(r.reasoning);
      rec.raw_responses.push_back(r.answer);
      votes.push_back(parse_choice(r.answer, item.options).choice);
    }
  });
  if (rec.status == AnswerStatus::kUnanswered) return rec;
  rec.parsed_choice = plurality_vote(votes);
  if (!rec.parsed_choice) {
    rec.status = AnswerStatus::kUnanswered;
    rec.error = "no sample produced a parseable choice";
  } else {
    rec.parse_strategy = ParseStrategy::kLetterPattern;
    // Report the strategy of the first sample that voted for the winner.
    for (std::size_t i = 0; i < votes.size(); ++i) {
      if (votes[i] == rec.parsed_choice) {
        rec.parse_strategy = parse_choice(rec.raw_responses[2 * i + 1], item.options).strategy;
        break;
      }
    }
  }
  return rec;
}

AnswerRecord answer_som(const QAItem& item, const method::Som& cfg, const MethodContext& ctx,
                        CallRecorder& calls) {
  auto rec = start_record(item, cfg);
  auto opts = option_texts(item.options);
  auto base = task_messages(item.context, item.question, opts, *ctx.prompts);
  std::vector<std::vector<ChatMessage>> history(cfg.agents, base);
  std::vector<std::string> last(cfg.agents);
  guarded(rec, [&] {
    for (int r = 1; r <= cfg.rounds; ++r) {
      std::vector<std::string> current(cfg.agents);
      for (int a = 0; a < cfg.agents; ++a) {
        auto& h = history[a];
        if (r > 1) {
          std::string others;
          for (int b = 0; b < cfg.agents; ++b) {
            if (b == a) continue;
            others += "Agent " + std::to_string(b + 1) + ": " + last[b] + "\n";
          }
          h.push_back({Role::kUser, ctx.prompts->som_revision.render({{"other_answers", others}})});
        }
        current[a] = calls.call(stage::debate(r, a + 1), h, ctx.params).text;
        h.push_back({Role::kAssistant, current[a]});
        rec.raw_responses.push_back(current[a]);
      }
      last = std::move(current);
    }
    if (cfg.aggregation == Aggregation::kJudge) {
      std::string answers;
      for (int a = 0; a < cfg.agents; ++a)
        answers += "Agent " + std::to_string(a + 1) + ": " + last[a] + "\n";
      std::vector<ChatMessage> judge = {
          {Role::kSystem, ctx.prompts->task.system_instruction},
          {Role::kUser, ctx.prompts->som_judge.render({{"prompt", base.back().content}, {"answers", answers}})}};
      rec.raw_responses.push_back(calls.call(stage::kDebateJudge, judge, ctx.params).text);
      set_choice(rec, parse_choice(rec.raw_responses.back(), item.options));
      return;
    }
    std::vector<std::optional<int>> votes;
    std::vector<ParseOutcome> parsed;
    for (const auto& reply : last) {
      parsed.push_back(parse_choice(reply, item.options));
      votes.push_back(parsed.back().choice);
    }
    rec.parsed_choice = plurality_vote(votes);
    for (const auto& p : parsed) {
      if (rec.parsed_choice && p.choice == rec.parsed_choice) {
        rec.parse_strategy = p.strategy;
        break;
      }
    }
  });
  return rec;
}

AnswerRecord answer_item(const QAItem& item, const MethodKind& m, const MethodContext& ctx,
                         Backend& backend, const RetryPolicy& policy) {
  if (auto v = method_violation(m); !v.empty()) throw ConfigError(v);
  if (!ctx.prompts) throw ConfigError("method context has no prompt library");
  CallRecorder calls(backend, policy, method_label(m), item.id);
  auto t0 = std::chrono::steady_clock::now();
  AnswerRecord rec = std::visit(
      overloaded{
          [&](const method::Sp&) { return answer_sp(item, ctx, calls); },
          [&](const method::Cot&) { return answer_cot(item, ctx, calls); },
          [&](const method::Abp& a) { return answer_abp(item, a.index, ctx, calls); },
          [&](const method::Som& s) { return answer_som(item, s, ctx, calls); },
          [&](const method::Sc& s) { return answer_sc(item, s, ctx, calls); },
          [&](const method::MomaMasking&) { return moma_answer(item, m, ctx, calls); },
          [&](const method::MomaBalancing&) { return moma_answer(item, m, ctx, calls); },
      },
      m);
  auto elapsed = std::chrono::steady_clock::now() - t0;
  rec.calls = calls.take_log();
  if (backend.deterministic()) {
    rec.wall_time_ms = 0;
    for (const auto& c : rec.calls) rec.wall_time_ms += c.latency_ms;
  } else {
    rec.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
  }
  return rec;
}

}  // namespace moma
