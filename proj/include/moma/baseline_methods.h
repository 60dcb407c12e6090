#pragma once

// Comparison methods (SP, CoT, ABP, SoM debate, self-consistency) and the
// dispatcher that maps every MethodKind to its answering routine.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moma/accounting.h"
#include "moma/core_types.h"
#include "moma/method_context.h"

namespace moma {

// SP prompt with the ABP text prepended to the system instruction.
std::vector<ChatMessage> abp_messages(const QAItem& item, int index, const MethodContext& ctx);

AnswerRecord answer_sp(const QAItem& item, const MethodContext& ctx, CallRecorder& calls);
// Two calls: reasoning with the trigger appended, then answer extraction.
AnswerRecord answer_cot(const QAItem& item, const MethodContext& ctx, CallRecorder& calls);
AnswerRecord answer_abp(const QAItem& item, int index, const MethodContext& ctx, CallRecorder& calls);
// agents x rounds calls, plus one in judge mode.
AnswerRecord answer_som(const QAItem& item, const method::Som& cfg, const MethodContext& ctx,
                        CallRecorder& calls);
// `samples` two-phase CoT completions at ctx.sc_temperature.
AnswerRecord answer_sc(const QAItem& item, const method::Sc& cfg, const MethodContext& ctx,
                       CallRecorder& calls);

// Most frequent present choice; ties go to the choice whose first vote came
// earliest. Absent entries do not vote.
std::optional<int> plurality_vote(std::span<const std::optional<int>> votes);

// Validates the method, runs it through a fresh CallRecorder and fills in
// calls and wall time.
AnswerRecord answer_item(const QAItem& item, const MethodKind& method, const MethodContext& ctx,
                         Backend& backend, const RetryPolicy& policy);

}  // namespace moma
