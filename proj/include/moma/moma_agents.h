#pragma once

// The MOMA pipeline: a masking assistant agent, a balancing assistant agent
// and an H-free task agent, composed as answer = task(balance(mask(X))).
//
// Assistant agents reply in a structured block:
//
//   MASKED: <context with identifiers replaced>
//   QUESTION: <question with identifiers replaced>
//   OPTIONS: <opt a> || <opt b> || <opt c>        (option masking only)
//   MAP: cashier=A_B; lawyer=C_D
//
//   BALANCED: <masked context with two adjectives before each token>
//   ADJ: A_B=knowledgeable,hardworking; C_D=friendly,honest
//
// Keys are case-insensitive, may be wrapped in a code fence and may span
// several lines.

#include <string>
#include <vector>

#include "moma/accounting.h"
#include "moma/core_types.h"
#include "moma/method_context.h"

namespace moma {

struct MaskingResult {
  std::string masked_context;
  std::string masked_question;
  // Empty unless option masking is enabled.
  std::vector<std::string> masked_options;
  std::vector<MaskEntry> mask_map;
  // Every agent reply, including a rejected first attempt.
  std::vector<std::string> replies;
};

struct BalancingResult {
  std::string balanced_context;
  std::vector<AdjectiveEntry> adjectives;
  // Every agent reply, including a rejected first attempt.
  std::vector<std::string> replies;
};

struct ParsedMasking {
  std::string masked;
  std::optional<std::string> question;
  std::optional<std::vector<std::string>> options;
  std::vector<MaskEntry> mask_map;
};

struct ParsedBalancing {
  std::string balanced;
  std::vector<AdjectiveEntry> adjectives;
};

// Throw PipelineError(kUnparseableAgentOutput).
ParsedMasking parse_masking_reply(std::string_view reply);
ParsedBalancing parse_balancing_reply(std::string_view reply);

// Surface forms from `map` that still occur (case-insensitive substring) in
// any of `texts`.
std::vector<std::string> find_mask_leaks(std::span<const std::string> texts,
                                         std::span<const MaskEntry> map);
// Tokens that do not occur in `text`.
std::vector<std::string> missing_tokens(std::string_view text, std::span<const std::string> tokens);

// Checks that `balanced` equals `masked` apart from adjective insertions
// placed immediately before a mask token. Insertions may only consist of the
// given adjectives, "and", and punctuation; an article may change between
// "a" and "an". Returns an empty string on success, else a diagnostic.
std::string token_preserving_diff(std::string_view masked, std::string_view balanced,
                                  std::span<const AdjectiveEntry> adjectives);

// The exact messages the masking agent receives for an item.
std::vector<ChatMessage> masking_messages(const QAItem& item, const MaskSymbolScheme& scheme,
                                          const PromptLibrary& prompts, bool mask_options);
std::vector<ChatMessage> balancing_messages(std::string_view masked_context,
                                            std::span<const MaskEntry> mask_map,
                                            BalancingStyle style, const PromptLibrary& prompts);
// Task prompt: context, question and options in (a)/(b)/(c) layout. Also
// the SP prompt.
std::vector<ChatMessage> task_messages(std::string_view context, std::string_view question,
                                       std::span<const std::string> options,
                                       const PromptLibrary& prompts);

// One logical call (plus at most one corrective retry on a mask leak).
MaskingResult run_masking(const QAItem& item, const MethodContext& ctx, CallRecorder& calls);
// One logical call (plus at most one corrective retry on a dropped token).
BalancingResult run_balancing(std::string_view masked_context, std::span<const MaskEntry> mask_map,
                              BalancingStyle style, const MethodContext& ctx, CallRecorder& calls);
// One logical call. Throws std::logic_error if the task instruction carries
// H-lexicon terms.
std::string run_task(std::string_view context, std::string_view question,
                     std::span<const std::string> options, const MethodContext& ctx,
                     CallRecorder& calls);

// MomaMasking: mask -> task (2 calls). MomaBalancing: mask -> balance ->
// task (3 calls). Stage failures produce an Unanswered record.
AnswerRecord moma_answer(const QAItem& item, const MethodKind& variant, const MethodContext& ctx,
                         CallRecorder& calls);

}  // namespace moma
