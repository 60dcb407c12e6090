#pragma once

// Domain vocabulary shared by every module: benchmark items, methods,
// transformation traces and per-item answer records.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace moma {

using nlohmann::json;

enum class Role { kSystem, kUser, kAssistant };

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

enum class Dataset { kBbq, kStereoSetIntra, kStereoSetInter };

// BBQ tags: kBiasedTarget, kNonTarget, kUnknown.
// StereoSet tags: kStereotype, kAntiStereotype, kUnrelated.
enum class OptionTag {
  kBiasedTarget,
  kNonTarget,
  kUnknown,
  kStereotype,
  kAntiStereotype,
  kUnrelated,
};

struct OptionEntry {
  int index = 0;
  std::string text;
  OptionTag tag = OptionTag::kUnknown;

  bool operator==(const OptionEntry&) const = default;
};

enum class ContextCondition { kAmbiguous, kDisambiguated };
enum class QuestionPolarity { kNegative, kNonnegative };
enum class StereoTask { kIntrasentence, kIntersentence };

// Flat, with optional fields, so that validation can report exactly which
// dataset-specific field is missing.
struct DatasetMeta {
  // BBQ
  std::optional<ContextCondition> context_condition;
  std::optional<QuestionPolarity> question_polarity;
  std::string category;
  // StereoSet
  std::string bias_type;
  std::optional<StereoTask> task;

  bool operator==(const DatasetMeta&) const = default;
};

inline constexpr std::size_t kOptionCount = 3;

struct QAItem {
  std::string id;
  Dataset dataset = Dataset::kBbq;
  std::string context;
  std::string question;
  std::vector<OptionEntry> options;
  // Gold option index; BBQ only.
  std::optional<int> gold;
  DatasetMeta meta;

  bool operator==(const QAItem&) const = default;
};

enum class BalancingStyle { kNeutral, kBalancing, kUnfairPositive, kFairPositive };

inline constexpr BalancingStyle kAllBalancingStyles[] = {
    BalancingStyle::kNeutral, BalancingStyle::kBalancing,
    BalancingStyle::kUnfairPositive, BalancingStyle::kFairPositive};

enum class Aggregation { kMajority, kJudge };

namespace method {
struct Sp {
  bool operator==(const Sp&) const = default;
};
struct Cot {
  bool operator==(const Cot&) const = default;
};
struct Abp {
  int index = 0;
  bool operator==(const Abp&) const = default;
};
struct Som {
  int agents = 3;
  int rounds = 2;
  Aggregation aggregation = Aggregation::kMajority;
  bool operator==(const Som&) const = default;
};
struct Sc {
  int samples = 5;
  bool operator==(const Sc&) const = default;
};
struct MomaMasking {
  bool operator==(const MomaMasking&) const = default;
};
struct MomaBalancing {
  BalancingStyle style = BalancingStyle::kBalancing;
  bool operator==(const MomaBalancing&) const = default;
};
}  // namespace method

using MethodKind =
    std::variant<method::Sp, method::Cot, method::Abp, method::Som,
                 method::Sc, method::MomaMasking, method::MomaBalancing>;

// Stable display/persistence label, e.g. "SP", "ABP-3", "SoM(3,2)",
// "SC(5)", "MOMA-Masking", "MOMA-Balancing(Balancing)".
std::string method_label(const MethodKind& method);
// Inverse of method_label. Also accepts a few shorthands ("SoM", "SC",
// "MOMA-Balancing"). Throws ConfigError on unknown or invalid methods.
MethodKind parse_method(std::string_view text);
// Empty when valid; otherwise a description of the violated constraint.
std::string method_violation(const MethodKind& method);
// Splits "SP,SoM(3,2),SC(5)" at top-level commas.
std::vector<MethodKind> parse_method_list(std::string_view text);

struct MaskEntry {
  std::string surface_form;
  std::string mask_token;
  bool operator==(const MaskEntry&) const = default;
};

struct AdjectiveEntry {
  std::string mask_token;
  std::vector<std::string> adjectives;
  bool operator==(const AdjectiveEntry&) const = default;
};

// Provenance of a MOMA transformation: original -> masked -> balanced.
// `original`, `masked` and `balanced` hold the item context; the question
// (and options, when option masking is enabled) are masked jointly and kept
// alongside.
struct TransformTrace {
  std::string original;
  std::optional<std::string> masked;
  std::optional<std::string> balanced;
  std::optional<std::string> masked_question;
  std::vector<std::string> masked_options;
  std::vector<MaskEntry> mask_map;
  std::vector<AdjectiveEntry> adjectives;
  std::optional<BalancingStyle> style;

  bool operator==(const TransformTrace&) const = default;
};

// One logical model call. Validation retries and transport retries add to
// `attempts`, never to the number of entries.
struct CallEntry {
  std::uint64_t seq = 0;
  std::string method;
  std::string item_id;
  std::string stage;
  int attempts = 1;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t latency_ms = 0;
  // Empty unless the call terminally failed.
  std::string error;

  bool operator==(const CallEntry&) const = default;
};

using CallLog = std::vector<CallEntry>;

enum class AnswerStatus { kAnswered, kUnanswered };
enum class ParseStrategy { kLetterPattern, kExactOption, kNormalizedContainment };

struct AnswerRecord {
  std::string item_id;
  MethodKind method;
  AnswerStatus status = AnswerStatus::kAnswered;
  std::string error;
  std::vector<std::string> raw_responses;
  std::optional<int> parsed_choice;
  std::optional<ParseStrategy> parse_strategy;
  std::optional<TransformTrace> trace;
  CallLog calls;
  std::int64_t wall_time_ms = 0;

  bool operator==(const AnswerRecord&) const = default;
};

struct ValidationResult {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationResult validate_item(const QAItem& item);
// Empty when the trace satisfies its ordering/distinctness invariants.
std::vector<std::string> trace_violations(const TransformTrace& trace);

std::string to_string(Role role);
std::string to_string(Dataset dataset);
std::string to_string(OptionTag tag);
std::string to_string(ContextCondition condition);
std::string to_string(QuestionPolarity polarity);
std::string to_string(StereoTask task);
std::string to_string(BalancingStyle style);
std::string to_string(ParseStrategy strategy);
std::string to_string(AnswerStatus status);

Role parse_role(std::string_view text);
Dataset parse_dataset(std::string_view text);
OptionTag parse_option_tag(std::string_view text);
BalancingStyle parse_balancing_style(std::string_view text);
ParseStrategy parse_strategy(std::string_view text);

// 'a', 'b', 'c' for 0, 1, 2.
inline char option_letter(int index) { return static_cast<char>('a' + index); }

void to_json(json& j, const ChatMessage& m);
void from_json(const json& j, ChatMessage& m);
void to_json(json& j, const OptionEntry& o);
void from_json(const json& j, OptionEntry& o);
void to_json(json& j, const DatasetMeta& m);
void from_json(const json& j, DatasetMeta& m);
void to_json(json& j, const QAItem& item);
void from_json(const json& j, QAItem& item);
void to_json(json& j, const TransformTrace& t);
void from_json(const json& j, TransformTrace& t);
void to_json(json& j, const CallEntry& e);
void from_json(const json& j, CallEntry& e);
void to_json(json& j, const AnswerRecord& r);
void from_json(const json& j, AnswerRecord& r);

}  // namespace moma
