#include "sim_agent.h"

#include <algorithm>

#include "moma/text_util.h"

namespace moma::testing {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string last_input_block(const std::string& user) {
  auto pos = user.rfind("INPUT:\n");
  return pos == std::string::npos ? user : user.substr(pos + 7);
}

// Value after `key` up to the earliest of `ends` (or end of text).
std::string value_of(const std::string& block, const std::string& key,
                     std::initializer_list<std::string_view> ends) {
  auto pos = block.find(key);
  if (pos == std::string::npos) return "";
  pos += key.size();
  std::size_t end = block.size();
  for (auto e : ends) end = std::min(end, block.find(e, pos) == std::string::npos ? end : block.find(e, pos));
  return block.substr(pos, end - pos);
}

std::string replace_ci(std::string s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = text::ifind(s, from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::vector<std::string> split_list(const std::string& s, std::string_view sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    auto piece = text::trim(std::string_view(s).substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (!piece.empty()) out.emplace_back(piece);
    if (pos == std::string::npos) break;
    start = pos + sep.size();
  }
  return out;
}

TaskView parse_task_prompt(const std::string& user) {
  TaskView v;
  v.context = value_of(user, "Context: ", {"\nQuestion: "});
  v.question = value_of(user, "Question: ", {"\nOptions:\n"});
  auto pos = user.find("Options:\n");
  if (pos != std::string::npos) {
    auto lines = text::split_lines(user.substr(pos + 9));
    for (std::size_t i = 0; i < lines.size() && v.options.size() < 3; ++i) {
      std::string prefix = std::string("(") + option_letter(static_cast<int>(v.options.size())) + ") ";
      if (lines[i].rfind(prefix, 0) == 0) v.options.push_back(lines[i].substr(prefix.size()));
    }
  }
  return v;
}

}  // namespace

std::vector<std::string> sim_adjectives(BalancingStyle style, std::size_t n) {
  static const std::vector<std::vector<std::string>> kBalancing = {
      {"knowledgeable", "hardworking"}, {"friendly", "honest"}, {"smart", "patient"}, {"caring", "diligent"}};
  static const std::vector<std::vector<std::string>> kNeutral = {
      {"local", "adult"}, {"nearby", "ordinary"}, {"regular", "present"}, {"usual", "typical"}};
  static const std::vector<std::vector<std::string>> kUnfair = {
      {"brilliant", "wealthy"}, {"talented", "successful"}, {"gifted", "admired"}, {"charming", "popular"}};
  static const std::vector<std::vector<std::string>> kFair = {{"kind", "capable"}};
  const auto* table = &kBalancing;
  switch (style) {
    case BalancingStyle::kNeutral:
      table = &kNeutral;
      break;
    case BalancingStyle::kUnfairPositive:
      table = &kUnfair;
      break;
    case BalancingStyle::kFairPositive:
      table = &kFair;
      break;
    case BalancingStyle::kBalancing:
      break;
  }
  return (*table)[n % table->size()];
}

SimAgent::SimAgent(const PromptLibrary& prompts, SimOptions options)
    : prompts_(prompts), options_(std::move(options)) {}

FunctionBackend::Responder SimAgent::responder() const {
  return [this](std::span<const ChatMessage> m, const GenParams& p) { return respond(m, p); };
}

std::string SimAgent::respond(std::span<const ChatMessage> messages, const GenParams& params) const {
  if (messages.empty()) return "";
  const auto& system = messages.front().content;
  if (system == prompts_.masking.system_instruction) return mask(messages);
  for (const auto& [style, agent] : prompts_.balancing) {
    if (system == agent.system_instruction) return balance(messages, style);
  }
  return answer(messages, params);
}

std::string SimAgent::mask(std::span<const ChatMessage> messages) const {
  const std::string block = last_input_block(messages[1].content);
  std::string context = value_of(block, "CONTEXT: ", {"\nQUESTION: "});
  std::string question = value_of(block, "QUESTION: ", {"\nOPTIONS: ", "\nOUTPUT:"});
  std::string options_raw = value_of(block, "OPTIONS: ", {"\nOUTPUT:"});
  bool with_options = block.find("\nOPTIONS: ") != std::string::npos;
  auto tokens = split_list(value_of(messages[1].content, "Available tokens: ", {"\n"}), ", ");

  std::string all = context + "\n" + question + "\n" + options_raw;
  std::vector<std::pair<std::size_t, std::string>> found;
  for (const auto& id : options_.identifiers) {
    auto pos = text::ifind(all, id);
    if (pos != std::string::npos) found.emplace_back(pos, id);
  }
  std::sort(found.begin(), found.end());
  bool first_attempt = messages.size() <= 2;
  bool leak = options_.leak_always || (options_.leak_once && first_attempt);

  std::vector<std::string> map;
  std::vector<std::pair<std::string, std::string>> replacements;
  for (std::size_t i = 0; i < found.size() && i < tokens.size(); ++i) {
    map.push_back(found[i].second + "=" + tokens[i]);
    replacements.emplace_back(found[i].second, tokens[i]);
  }
  // Longest surface forms first so that overlapping forms stay intact.
  std::sort(replacements.begin(), replacements.end(),
            [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  auto apply = [&](std::string s, bool allow_leak) {
    for (const auto& [from, to] : replacements) {
      if (allow_leak && leak && !found.empty() && from == found.front().second) continue;
      s = replace_ci(s, from, to);
    }
    return s;
  };
  std::string out = "MASKED: " + apply(context, true) + "\nQUESTION: " + apply(question, false);
  if (with_options) {
    std::vector<std::string> opts;
    for (const auto& o : split_list(options_raw, "||")) opts.push_back(apply(o, false));
    out += "\nOPTIONS: " + text::join(opts, " || ");
  }
  out += "\nMAP: " + text::join(map, "; ");
  return out;
}

std::string SimAgent::balance(std::span<const ChatMessage> messages, BalancingStyle style) const {
  const std::string block = last_input_block(messages[1].content);
  std::string context = value_of(block, "CONTEXT: ", {"\nTOKENS: "});
  auto tokens = split_list(value_of(block, "TOKENS: ", {"\nOUTPUT:"}), ", ");
  bool first_attempt = messages.size() <= 2;
  bool drop = options_.drop_always || (options_.drop_token_once && first_attempt);

  std::string balanced = context;
  std::vector<std::string> adj_entries;
  std::size_t n = 0;
  for (const auto& t : tokens) {
    if (context.find(t) == std::string::npos) continue;
    auto adjs = sim_adjectives(style, n++);
    adj_entries.push_back(t + "=" + text::join(adjs, ","));
    if (drop && adj_entries.size() == 1) {
      balanced = text::replace_all(balanced, t, "someone");
      continue;
    }
    balanced = text::replace_all(balanced, t, adjs[0] + ", " + adjs[1] + " " + t);
  }
  return "BALANCED: " + balanced + "\nADJ: " + text::join(adj_entries, "; ");
}

std::string SimAgent::answer(std::span<const ChatMessage> messages, const GenParams& params) const {
  TaskView view = messages.size() > 1 ? parse_task_prompt(messages[1].content) : TaskView{};
  if (params.temperature > 0 && params.seed) view.seed = *params.seed;
  const std::string& last = messages.back().content;
  if (messages.back().role == Role::kUser && !prompts_.cot_trigger.empty() &&
      last.size() >= prompts_.cot_trigger.size() &&
      last.compare(last.size() - prompts_.cot_trigger.size(), std::string::npos, prompts_.cot_trigger) == 0) {
    return "The context describes two people and the question asks about one of them. "
           "I will weigh only what the context states.";
  }
  if (view.options.size() != 3) return "I am not sure.";
  int choice = options_.policy
                   ? options_.policy(view)
                   : static_cast<int>(fnv1a(view.context + "|" + view.question + "|" + std::to_string(view.seed)) % 3);
  choice = std::clamp(choice, 0, 2);
  return std::string("(") + option_letter(choice) + ") " + view.options[choice];
}

const PromptLibrary& shipped_prompts() {
  static const PromptLibrary lib = PromptLibrary::load(default_data_dir() / "prompts");
  return lib;
}

const AbpPromptSet& shipped_abp() {
  static const AbpPromptSet set = AbpPromptSet::load(default_data_dir() / "abp.txt");
  return set;
}

}  // namespace moma::testing
