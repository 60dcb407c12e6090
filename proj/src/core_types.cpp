#include "moma/core_types.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "moma/errors.h"
#include "moma/text_util.h"

namespace moma {

// ---------------------------------------------------------------------------
// text utilities

namespace text {

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return true;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

std::size_t ifind(std::string_view haystack, std::string_view needle,
                  std::size_t from) {
  if (needle.empty()) return from <= haystack.size() ? from : std::string_view::npos;
  if (needle.size() > haystack.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    if (iequals(haystack.substr(i, needle.size()), needle)) return i;
  }
  return std::string_view::npos;
}

bool icontains(std::string_view haystack, std::string_view needle) {
  return ifind(haystack, needle) != std::string_view::npos;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> split_lines(std::string_view s) {
  auto lines = split(s, '\n');
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
  }
  return lines;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  if (from.empty()) return s;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++n;
  return n;
}

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

std::string normalize(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (c < 0x80 && std::ispunct(c)) continue;
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace text

// ---------------------------------------------------------------------------
// enum names

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::pair<Enum, const char*> (&table)[N],
                const char* what) {
  for (const auto& [value, name] : table) {
    if (text::iequals(text, name)) return value;
  }
  throw ConfigError(std::string("unknown ") + what + ": '" + std::string(text) + "'");
}

template <typename Enum, std::size_t N>
std::string enum_name(Enum value, const std::pair<Enum, const char*> (&table)[N]) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::pair<Role, const char*> kRoles[] = {
    {Role::kSystem, "system"}, {Role::kUser, "user"}, {Role::kAssistant, "assistant"}};
constexpr std::pair<Dataset, const char*> kDatasets[] = {
    {Dataset::kBbq, "bbq"},
    {Dataset::kStereoSetIntra, "stereoset-intra"},
    {Dataset::kStereoSetInter, "stereoset-inter"}};
constexpr std::pair<OptionTag, const char*> kTags[] = {
    {OptionTag::kBiasedTarget, "biased_target"},
    {OptionTag::kNonTarget, "non_target"},
    {OptionTag::kUnknown, "unknown"},
    {OptionTag::kStereotype, "stereotype"},
    {OptionTag::kAntiStereotype, "anti_stereotype"},
    {OptionTag::kUnrelated, "unrelated"}};
constexpr std::pair<ContextCondition, const char*> kConditions[] = {
    {ContextCondition::kAmbiguous, "ambiguous"},
    {ContextCondition::kDisambiguated, "disambiguated"}};
constexpr std::pair<QuestionPolarity, const char*> kPolarities[] = {
    {QuestionPolarity::kNegative, "negative"},
    {QuestionPolarity::kNonnegative, "nonnegative"}};
constexpr std::pair<StereoTask, const char*> kTasks[] = {
    {StereoTask::kIntrasentence, "intrasentence"},
    {StereoTask::kIntersentence, "intersentence"}};
constexpr std::pair<BalancingStyle, const char*> kStyles[] = {
    {BalancingStyle::kNeutral, "Neutral"},
    {BalancingStyle::kBalancing, "Balancing"},
    {BalancingStyle::kUnfairPositive, "UnfairPositive"},
    {BalancingStyle::kFairPositive, "FairPositive"}};
constexpr std::pair<ParseStrategy, const char*> kStrategies[] = {
    {ParseStrategy::kLetterPattern, "LetterPattern"},
    {ParseStrategy::kExactOption, "ExactOption"},
    {ParseStrategy::kNormalizedContainment, "NormalizedContainment"}};
constexpr std::pair<AnswerStatus, const char*> kStatuses[] = {
    {AnswerStatus::kAnswered, "answered"}, {AnswerStatus::kUnanswered, "unanswered"}};

}  // namespace

std::string to_string(Role v) { return enum_name(v, kRoles); }
std::string to_string(Dataset v) { return enum_name(v, kDatasets); }
std::string to_string(OptionTag v) { return enum_name(v, kTags); }
std::string to_string(ContextCondition v) { return enum_name(v, kConditions); }
std::string to_string(QuestionPolarity v) { return enum_name(v, kPolarities); }
std::string to_string(StereoTask v) { return enum_name(v, kTasks); }
std::string to_string(BalancingStyle v) { return enum_name(v, kStyles); }
std::string to_string(ParseStrategy v) { return enum_name(v, kStrategies); }
std::string to_string(AnswerStatus v) { return enum_name(v, kStatuses); }

Role parse_role(std::string_view t) { return parse_enum(t, kRoles, "role"); }
Dataset parse_dataset(std::string_view t) { return parse_enum(t, kDatasets, "dataset"); }
OptionTag parse_option_tag(std::string_view t) { return parse_enum(t, kTags, "option tag"); }
BalancingStyle parse_balancing_style(std::string_view t) {
  return parse_enum(t, kStyles, "balancing style");
}
ParseStrategy parse_strategy(std::string_view t) {
  return parse_enum(t, kStrategies, "parse strategy");
}

// ---------------------------------------------------------------------------
// methods

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

int parse_int(std::string_view s, std::string_view context) {
  s = text::trim(s);
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw ConfigError("invalid number '" + std::string(s) + "' in method '" +
                      std::string(context) + "'");
  return std::stoi(std::string(s));
}

// "Name(args)" -> {"Name", ["a", "b"]}; "Name" -> {"Name", []}.
std::pair<std::string, std::vector<std::string>> split_call(std::string_view text) {
  auto open = text.find('(');
  if (open == std::string_view::npos) return {std::string(text::trim(text)), {}};
  if (text.back() != ')') throw ConfigError("malformed method '" + std::string(text) + "'");
  std::string name(text::trim(text.substr(0, open)));
  auto inner = text.substr(open + 1, text.size() - open - 2);
  std::vector<std::string> args;
  for (auto& a : text::split(inner, ',')) args.emplace_back(text::trim(a));
  return {name, args};
}

}  // namespace

std::string method_label(const MethodKind& m) {
  return std::visit(
      overloaded{
          [](const method::Sp&) { return std::string("SP"); },
          [](const method::Cot&) { return std::string("CoT"); },
          [](const method::Abp& a) { return "ABP-" + std::to_string(a.index); },
          [](const method::Som& s) {
            std::string out = "SoM(" + std::to_string(s.agents) + "," + std::to_string(s.rounds);
            if (s.aggregation == Aggregation::kJudge) out += ",judge";
            return out + ")";
          },
          [](const method::Sc& s) { return "SC(" + std::to_string(s.samples) + ")"; },
          [](const method::MomaMasking&) { return std::string("MOMA-Masking"); },
          [](const method::MomaBalancing& b) {
            return "MOMA-Balancing(" + to_string(b.style) + ")";
          },
      },
      m);
}

std::string method_violation(const MethodKind& m) {
  return std::visit(
      overloaded{
          [](const method::Abp& a) -> std::string {
            return a.index < 0 || a.index > 4 ? "ABP index must be in 0..4" : "";
          },
          [](const method::Som& s) -> std::string {
            if (s.agents < 2) return "SoM needs at least 2 agents";
            if (s.rounds < 1) return "SoM needs at least 1 round";
            return "";
          },
          [](const method::Sc& s) -> std::string {
            return s.samples < 3 || s.samples % 2 == 0 ? "SC samples must be odd and >= 3" : "";
          },
          [](const auto&) -> std::string { return ""; },
      },
      m);
}

MethodKind parse_method(std::string_view raw) {
  std::string_view t = text::trim(raw);
  auto [name, args] = split_call(t);
  MethodKind out;
  auto expect_args = [&](std::size_t lo, std::size_t hi) {
    if (args.size() < lo || args.size() > hi)
      throw ConfigError("wrong number of arguments in method '" + std::string(t) + "'");
  };
  if (text::iequals(name, "SP") || text::iequals(name, "Baseline")) {
    expect_args(0, 0);
    out = method::Sp{};
  } else if (text::iequals(name, "CoT")) {
    expect_args(0, 0);
    out = method::Cot{};
  } else if (text::starts_with_ci(name, "ABP-") || text::iequals(name, "ABP")) {
    if (text::iequals(name, "ABP")) {
      expect_args(1, 1);
      out = method::Abp{parse_int(args[0], t)};
    } else {
      expect_args(0, 0);
      out = method::Abp{parse_int(std::string_view(name).substr(4), t)};
    }
  } else if (text::iequals(name, "SoM")) {
    expect_args(0, 3);
    method::Som som;
    if (args.size() >= 1) som.agents = parse_int(args[0], t);
    if (args.size() >= 2) som.rounds = parse_int(args[1], t);
    if (args.size() == 3) {
      if (text::iequals(args[2], "judge"))
        som.aggregation = Aggregation::kJudge;
      else if (text::iequals(args[2], "majority"))
        som.aggregation = Aggregation::kMajority;
      else
        throw ConfigError("unknown SoM aggregation '" + args[2] + "'");
    }
    out = som;
  } else if (text::iequals(name, "SC")) {
    expect_args(0, 1);
    method::Sc sc;
    if (!args.empty()) sc.samples = parse_int(args[0], t);
    out = sc;
  } else if (text::iequals(name, "MOMA-Masking") || text::iequals(name, "Masking")) {
    expect_args(0, 0);
    out = method::MomaMasking{};
  } else if (text::iequals(name, "MOMA-Balancing") || text::iequals(name, "Balancing")) {
    expect_args(0, 1);
    method::MomaBalancing b;
    if (!args.empty()) b.style = parse_balancing_style(args[0]);
    out = b;
  } else {
    throw ConfigError("unknown method '" + std::string(t) + "'");
  }
  if (auto v = method_violation(out); !v.empty())
    throw ConfigError("invalid method '" + std::string(t) + "': " + v);
  return out;
}

std::vector<MethodKind> parse_method_list(std::string_view text) {
  std::vector<MethodKind> out;
  int depth = 0;
  std::string current;
  auto flush = [&] {
    auto piece = text::trim(current);
    if (!piece.empty()) out.push_back(parse_method(piece));
    current.clear();
  };
  for (char c : text) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      flush();
      continue;
    }
    current.push_back(c);
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// validation

ValidationResult validate_item(const QAItem& item) {
  ValidationResult r;
  auto blank = [](const std::string& s) { return text::trim(s).empty(); };
  if (blank(item.id)) r.violations.push_back("empty text: id");
  if (blank(item.context)) r.violations.push_back("empty text: context");
  if (blank(item.question)) r.violations.push_back("empty text: question");
  if (item.options.size() != kOptionCount) {
    r.violations.push_back("option count " + std::to_string(item.options.size()) +
                           " != 3");
  }
  std::set<OptionTag> tags;
  bool is_bbq = item.dataset == Dataset::kBbq;
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    const auto& o = item.options[i];
    if (o.index != static_cast<int>(i))
      r.violations.push_back("option index mismatch at position " + std::to_string(i));
    if (blank(o.text)) r.violations.push_back("empty text: option " + std::to_string(i));
    bool bbq_tag = o.tag == OptionTag::kBiasedTarget || o.tag == OptionTag::kNonTarget ||
                   o.tag == OptionTag::kUnknown;
    if (bbq_tag != is_bbq)
      r.violations.push_back("tag " + to_string(o.tag) + " not valid for dataset " +
                             to_string(item.dataset));
    if (!tags.insert(o.tag).second) r.violations.push_back("duplicate tag " + to_string(o.tag));
  }
  if (item.gold && (*item.gold < 0 || *item.gold >= static_cast<int>(item.options.size())))
    r.violations.push_back("gold index out of range");
  if (is_bbq) {
    if (!item.meta.context_condition) r.violations.push_back("missing meta field: context_condition");
    if (!item.meta.question_polarity) r.violations.push_back("missing meta field: question_polarity");
    if (blank(item.meta.category)) r.violations.push_back("missing meta field: category");
    if (!item.gold) r.violations.push_back("missing meta field: gold");
  } else {
    if (blank(item.meta.bias_type)) r.violations.push_back("missing meta field: bias_type");
    if (!item.meta.task) {
      r.violations.push_back("missing meta field: task");
    } else {
      auto expected = item.dataset == Dataset::kStereoSetIntra ? StereoTask::kIntrasentence
                                                               : StereoTask::kIntersentence;
      if (*item.meta.task != expected) r.violations.push_back("meta task does not match dataset");
    }
  }
  return r;
}

std::vector<std::string> trace_violations(const TransformTrace& t) {
  std::vector<std::string> v;
  if (t.masked && t.mask_map.empty()) v.push_back("masked present with empty mask_map");
  if (t.balanced && !t.masked) v.push_back("balanced present without masked");
  std::set<std::string> tokens;
  for (const auto& e : t.mask_map) {
    if (!tokens.insert(e.mask_token).second)
      v.push_back("duplicate mask token " + e.mask_token);
  }
  return v;
}

// ---------------------------------------------------------------------------
// json

namespace {

template <typename T, typename F>
void put_optional(json& j, const char* key, const std::optional<T>& v, F&& f) {
  if (v) j[key] = f(*v);
}

}  // namespace

void to_json(json& j, const ChatMessage& m) {
  j = json{{"role", to_string(m.role)}, {"content", m.content}};
}
void from_json(const json& j, ChatMessage& m) {
  m.role = parse_role(j.at("role").get<std::string>());
  m.content = j.at("content").get<std::string>();
}

void to_json(json& j, const OptionEntry& o) {
  j = json{{"index", o.index}, {"text", o.text}, {"tag", to_string(o.tag)}};
}
void from_json(const json& j, OptionEntry& o) {
  o.index = j.at("index").get<int>();
  o.text = j.at("text").get<std::string>();
  o.tag = parse_option_tag(j.at("tag").get<std::string>());
}

void to_json(json& j, const DatasetMeta& m) {
  j = json::object();
  put_optional(j, "context_condition", m.context_condition,
               [](auto v) { return to_string(v); });
  put_optional(j, "question_polarity", m.question_polarity,
               [](auto v) { return to_string(v); });
  if (!m.category.empty()) j["category"] = m.category;
  if (!m.bias_type.empty()) j["bias_type"] = m.bias_type;
  put_optional(j, "task", m.task, [](auto v) { return to_string(v); });
}
void from_json(const json& j, DatasetMeta& m) {
  m = DatasetMeta{};
  if (j.contains("context_condition")) {
    m.context_condition = parse_enum(j["context_condition"].get<std::string>(), kConditions,
                                     "context condition");
  }
  if (j.contains("question_polarity")) {
    m.question_polarity = parse_enum(j["question_polarity"].get<std::string>(), kPolarities,
                                     "question polarity");
  }
  m.category = j.value("category", "");
  m.bias_type = j.value("bias_type", "");
  if (j.contains("task")) m.task = parse_enum(j["task"].get<std::string>(), kTasks, "task");
}

void to_json(json& j, const QAItem& item) {
  j = json{{"id", item.id},
           {"dataset", to_string(item.dataset)},
           {"context", item.context},
           {"question", item.question},
           {"options", item.options},
           {"meta", item.meta}};
  if (item.gold) j["gold"] = *item.gold;
}
void from_json(const json& j, QAItem& item) {
  item.id = j.at("id").get<std::string>();
  item.dataset = parse_dataset(j.at("dataset").get<std::string>());
  item.context = j.at("context").get<std::string>();
  item.question = j.at("question").get<std::string>();
  item.options = j.at("options").get<std::vector<OptionEntry>>();
  item.meta = j.at("meta").get<DatasetMeta>();
  item.gold.reset();
  if (j.contains("gold")) item.gold = j["gold"].get<int>();
}

void to_json(json& j, const TransformTrace& t) {
  j = json{{"original", t.original}};
  if (t.masked) j["masked"] = *t.masked;
  if (t.balanced) j["balanced"] = *t.balanced;
  if (t.masked_question) j["masked_question"] = *t.masked_question;
  if (!t.masked_options.empty()) j["masked_options"] = t.masked_options;
  json map = json::array();
  for (const auto& e : t.mask_map) map.push_back({e.surface_form, e.mask_token});
  j["mask_map"] = map;
  json adj = json::array();
  for (const auto& a : t.adjectives) adj.push_back({{"token", a.mask_token}, {"adjectives", a.adjectives}});
  j["adjectives"] = adj;
  if (t.style) j["style"] = to_string(*t.style);
}
void from_json(const json& j, TransformTrace& t) {
  t = TransformTrace{};
  t.original = j.at("original").get<std::string>();
  if (j.contains("masked")) t.masked = j["masked"].get<std::string>();
  if (j.contains("balanced")) t.balanced = j["balanced"].get<std::string>();
  if (j.contains("masked_question")) t.masked_question = j["masked_question"].get<std::string>();
  if (j.contains("masked_options")) t.masked_options = j["masked_options"].get<std::vector<std::string>>();
  for (const auto& e : j.value("mask_map", json::array()))
    t.mask_map.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>()});
  for (const auto& a : j.value("adjectives", json::array()))
    t.adjectives.push_back({a.at("token").get<std::string>(),
                            a.at("adjectives").get<std::vector<std::string>>()});
  if (j.contains("style")) t.style = parse_balancing_style(j["style"].get<std::string>());
}

void to_json(json& j, const CallEntry& e) {
  j = json{{"seq", e.seq},
           {"method", e.method},
           {"item_id", e.item_id},
           {"stage", e.stage},
           {"attempts", e.attempts},
           {"prompt_tokens", e.prompt_tokens},
           {"completion_tokens", e.completion_tokens},
           {"latency_ms", e.latency_ms}};
  if (!e.error.empty()) j["error"] = e.error;
}
void from_json(const json& j, CallEntry& e) {
  e.seq = j.at("seq").get<std::uint64_t>();
  e.method = j.at("method").get<std::string>();
  e.item_id = j.at("item_id").get<std::string>();
  e.stage = j.at("stage").get<std::string>();
  e.attempts = j.at("attempts").get<int>();
  e.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  e.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  e.latency_ms = j.at("latency_ms").get<std::int64_t>();
  e.error = j.value("error", "");
}

void to_json(json& j, const AnswerRecord& r) {
  j = json{{"item_id", r.item_id},
           {"method", method_label(r.method)},
           {"status", to_string(r.status)},
           {"raw_responses", r.raw_responses},
           {"calls", r.calls},
           {"wall_time_ms", r.wall_time_ms}};
  if (!r.error.empty()) j["error"] = r.error;
  j["parsed_choice"] = r.parsed_choice ? json(*r.parsed_choice) : json(nullptr);
  if (r.parse_strategy) j["parse_strategy"] = to_string(*r.parse_strategy);
  if (r.trace) j["trace"] = *r.trace;
}
void from_json(const json& j, AnswerRecord& r) {
  r = AnswerRecord{};
  r.item_id = j.at("item_id").get<std::string>();
  r.method = parse_method(j.at("method").get<std::string>());
  r.status = parse_enum(j.at("status").get<std::string>(), kStatuses, "status");
  r.error = j.value("error", "");
  r.raw_responses = j.at("raw_responses").get<std::vector<std::string>>();
  if (j.contains("parsed_choice") && !j["parsed_choice"].is_null())
    r.parsed_choice = j["parsed_choice"].get<int>();
  if (j.contains("parse_strategy")) r.parse_strategy = parse_strategy(j["parse_strategy"].get<std::string>());
  if (j.contains("trace")) r.trace = j["trace"].get<TransformTrace>();
  r.calls = j.at("calls").get<CallLog>();
  r.wall_time_ms = j.at("wall_time_ms").get<std::int64_t>();
}

}  // namespace moma
