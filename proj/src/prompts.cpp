#include "moma/prompts.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "moma/errors.h"
#include "moma/text_util.h"

namespace moma {

namespace fs = std::filesystem;

PromptTemplate::PromptTemplate(std::string source) : source_(std::move(source)) {}

namespace {

bool is_ident(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

// Calls on_text / on_placeholder in order over the template source.
template <typename OnText, typename OnPlaceholder>
void scan_template(const std::string& src, OnText&& on_text, OnPlaceholder&& on_placeholder) {
  std::size_t i = 0;
  while (i < src.size()) {
    if (src.compare(i, 2, "{{") == 0) {
      on_text("{");
      i += 2;
      continue;
    }
    if (src.compare(i, 2, "}}") == 0) {
      on_text("}");
      i += 2;
      continue;
    }
    if (src[i] == '{') {
      auto close = src.find('}', i + 1);
      if (close != std::string::npos) {
        std::string_view name(src.data() + i + 1, close - i - 1);
        if (is_ident(name)) {
          on_placeholder(name);
          i = close + 1;
          continue;
        }
      }
    }
    on_text(std::string_view(src.data() + i, 1));
    ++i;
  }
}

std::string read_required(const fs::path& path) {
  try {
    return text::read_file(path.string());
  } catch (const std::exception&) {
    throw ConfigError("missing prompt file " + path.string());
  }
}

// Trailing newlines are an editor artifact, not prompt content.
std::string read_prompt(const fs::path& path) {
  std::string s = read_required(path);
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

std::string style_file_stem(BalancingStyle style) {
  switch (style) {
    case BalancingStyle::kNeutral:
      return "neutral";
    case BalancingStyle::kBalancing:
      return "balancing";
    case BalancingStyle::kUnfairPositive:
      return "unfair_positive";
    case BalancingStyle::kFairPositive:
      return "fair_positive";
  }
  return "balancing";
}

}  // namespace

std::string PromptTemplate::render(const std::map<std::string, std::string>& vars) const {
  std::string out;
  scan_template(
      source_, [&](std::string_view t) { out += t; },
      [&](std::string_view name) {
        auto it = vars.find(std::string(name));
        if (it == vars.end())
          throw ConfigError("template placeholder {" + std::string(name) + "} has no value");
        out += it->second;
      });
  return out;
}

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> out;
  scan_template(
      source_, [](std::string_view) {},
      [&](std::string_view name) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.emplace_back(name);
      });
  return out;
}

std::string render_demos(std::span<const FewShotDemo> demos) {
  std::string out;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    out += "Example " + std::to_string(i + 1) + "\nINPUT:\n" + demos[i].input + "\nOUTPUT:\n" +
           demos[i].output + "\n\n";
  }
  return out;
}

std::string render_options(std::span<const std::string> texts) {
  std::string out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i) out += "\n";
    out += "(";
    out += option_letter(static_cast<int>(i));
    out += ") " + texts[i];
  }
  return out;
}

std::vector<std::string> option_texts(std::span<const OptionEntry> options) {
  std::vector<std::string> out;
  out.reserve(options.size());
  for (const auto& o : options) out.push_back(o.text);
  return out;
}

std::vector<FewShotDemo> load_demos(const fs::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw ConfigError("missing demo file " + jsonl.string());
  std::vector<FewShotDemo> demos;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      demos.push_back({j.at("input").get<std::string>(), j.at("output").get<std::string>()});
    } catch (const json::exception& e) {
      throw ConfigError(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return demos;
}

fs::path default_data_dir() {
  if (const char* env = std::getenv("MOMA_DATA_DIR"); env && *env) return env;
  return MOMA_DEFAULT_DATA_DIR;
}

PromptLibrary PromptLibrary::load(const fs::path& dir) {
  PromptLibrary lib;
  lib.masking.system_instruction = read_prompt(dir / "mask_system.txt");
  lib.masking.few_shot = load_demos(dir / "mask_demos.jsonl");
  lib.masking.render = PromptTemplate(read_prompt(dir / "mask_user.txt"));

  PromptTemplate balance_system(read_prompt(dir / "balance_system.txt"));
  PromptTemplate balance_user(read_prompt(dir / "balance_user.txt"));
  for (BalancingStyle style : kAllBalancingStyles) {
    auto stem = style_file_stem(style);
    AgentPrompt p;
    p.system_instruction = balance_system.render(
        {{"style_instruction", read_prompt(dir / ("balance_style_" + stem + ".txt"))}});
    p.few_shot = load_demos(dir / ("balance_demos_" + stem + ".jsonl"));
    p.render = balance_user;
    lib.balancing[style] = std::move(p);
  }

  lib.task.system_instruction = read_prompt(dir / "task_system.txt");
  lib.task.render = PromptTemplate(read_prompt(dir / "task_user.txt"));

  lib.mask_correction = PromptTemplate(read_prompt(dir / "mask_correction.txt"));
  lib.balance_correction = PromptTemplate(read_prompt(dir / "balance_correction.txt"));
  lib.cot_trigger = read_prompt(dir / "cot_trigger.txt");
  lib.cot_extract = PromptTemplate(read_prompt(dir / "cot_extract.txt"));
  lib.som_revision = PromptTemplate(read_prompt(dir / "som_revision.txt"));
  lib.som_judge = PromptTemplate(read_prompt(dir / "som_judge.txt"));

  for (auto& line : text::split_lines(read_required(dir / "h_lexicon.txt"))) {
    auto t = text::trim(line);
    if (!t.empty() && t.front() != '#') lib.h_lexicon.emplace_back(t);
  }

  if (auto v = lib.violations(); !v.empty())
    throw ConfigError("prompt library " + dir.string() + ": " + text::join(v, "; "));
  return lib;
}

std::vector<std::string> PromptLibrary::violations() const {
  std::vector<std::string> v;
  if (masking.few_shot.empty()) v.push_back("masking agent has no few-shot demos");
  for (const auto& [style, p] : balancing) {
    if (p.few_shot.empty()) v.push_back("balancing agent (" + to_string(style) + ") has no few-shot demos");
  }
  if (!task.few_shot.empty()) v.push_back("task agent must not carry few-shot demos");
  if (auto hits = lint_h_lexicon(task.system_instruction, h_lexicon); !hits.empty())
    v.push_back("task agent instruction contains H-lexicon terms: " + text::join(hits, ", "));
  return v;
}

// ---------------------------------------------------------------------------

AbpPromptSet AbpPromptSet::parse(std::string_view content) {
  AbpPromptSet set;
  std::array<bool, 5> seen{};
  int current = -1;
  std::array<std::vector<std::string>, 5> bodies;
  for (const auto& raw : text::split_lines(content)) {
    auto line = text::trim(raw);
    if (line.starts_with("---") && line.ends_with("---") && line.size() > 6) {
      auto inner = text::trim(line.substr(3, line.size() - 6));
      if (!text::starts_with_ci(inner, "ABP-"))
        throw ConfigError("bad ABP separator: " + std::string(line));
      auto idx = inner.substr(4);
      if (idx.size() != 1 || idx[0] < '0' || idx[0] > '4')
        throw ConfigError("ABP index must be 0..4: " + std::string(line));
      current = idx[0] - '0';
      if (seen[current]) throw ConfigError("duplicate ABP-" + std::string(idx));
      seen[current] = true;
      continue;
    }
    if (current < 0) {
      if (!line.empty() && line.front() != '#')
        throw ConfigError("text before first ABP separator");
      continue;
    }
    if (text::starts_with_ci(line, "provenance:")) {
      set.provenance[current] = std::string(text::trim(line.substr(11)));
      continue;
    }
    bodies[current].emplace_back(raw);
  }
  for (int i = 0; i < 5; ++i) {
    if (!seen[i]) throw ConfigError("ABP file is missing ABP-" + std::to_string(i));
    set.prompts[i] = std::string(text::trim(text::join(bodies[i], "\n")));
    if (set.prompts[i].empty()) throw ConfigError("ABP-" + std::to_string(i) + " is empty");
  }
  return set;
}

AbpPromptSet AbpPromptSet::load(const fs::path& path) {
  try {
    return parse(text::read_file(path.string()));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const std::exception& e) {
    throw ConfigError("cannot read ABP file " + path.string());
  }
}

// ---------------------------------------------------------------------------

std::string to_string(MaskSymbolKind kind) {
  switch (kind) {
    case MaskSymbolKind::kLetterPair:
      return "letter";
    case MaskSymbolKind::kMathSymbol:
      return "math";
    case MaskSymbolKind::kEmoji:
      return "emoji";
  }
  return "letter";
}

MaskSymbolScheme MaskSymbolScheme::letter_pair() {
  MaskSymbolScheme s;
  s.kind = MaskSymbolKind::kLetterPair;
  for (char c = 'A'; c < 'Z'; c += 2) s.tokens.push_back(std::string{c, '_', static_cast<char>(c + 1)});
  return s;
}

MaskSymbolScheme MaskSymbolScheme::from_file(MaskSymbolKind kind, const fs::path& path) {
  MaskSymbolScheme s;
  s.kind = kind;
  std::string content;
  try {
    content = text::read_file(path.string());
  } catch (const std::exception&) {
    throw ConfigError("cannot read symbol list " + path.string());
  }
  for (const auto& line : text::split_lines(content)) {
    auto t = text::trim(line);
    if (!t.empty() && t.front() != '#') s.tokens.emplace_back(t);
  }
  if (auto v = s.violations(); !v.empty())
    throw ConfigError("symbol list " + path.string() + ": " + text::join(v, "; "));
  return s;
}

MaskSymbolScheme MaskSymbolScheme::by_name(std::string_view name, const fs::path& data_dir) {
  if (text::iequals(name, "letter") || text::iequals(name, "letterpair")) return letter_pair();
  if (text::iequals(name, "math"))
    return from_file(MaskSymbolKind::kMathSymbol, data_dir / "symbols" / "math.txt");
  if (text::iequals(name, "emoji"))
    return from_file(MaskSymbolKind::kEmoji, data_dir / "symbols" / "emoji.txt");
  throw ConfigError("unknown mask scheme '" + std::string(name) + "'");
}

std::vector<std::string> MaskSymbolScheme::violations() const {
  std::vector<std::string> v;
  if (tokens.empty()) v.push_back("token list is empty");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) v.push_back("empty token at " + std::to_string(i));
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      if (i == j || tokens[i].empty() || tokens[j].empty()) continue;
      if (tokens[i] == tokens[j] && i < j) v.push_back("duplicate token " + tokens[i]);
      else if (tokens[i] != tokens[j] && tokens[j].find(tokens[i]) != std::string::npos)
        v.push_back("token " + tokens[i] + " occurs inside " + tokens[j]);
    }
  }
  return v;
}

// ---------------------------------------------------------------------------

std::vector<std::string> default_h_lexicon() {
  return {"bias", "biased", "stereotype", "fairness", "fair", "discrimination"};
}

std::vector<std::string> lint_h_lexicon(std::string_view content, std::span<const std::string> lexicon) {
  static const std::string_view kSuffixes[] = {"", "s", "es", "ed", "ly"};
  std::vector<std::pair<std::size_t, std::string>> hits;
  for (const auto& term : lexicon) {
    if (term.empty()) continue;
    std::size_t first = std::string::npos;
    for (std::size_t pos = text::ifind(content, term); pos != std::string::npos;
         pos = text::ifind(content, term, pos + 1)) {
      if (pos > 0 && text::is_word_byte(static_cast<unsigned char>(content[pos - 1]))) continue;
      std::size_t end = pos + term.size();
      bool matched = false;
      for (auto suffix : kSuffixes) {
        if (end + suffix.size() > content.size()) continue;
        if (!text::iequals(content.substr(end, suffix.size()), suffix)) continue;
        std::size_t after = end + suffix.size();
        if (after == content.size() || !text::is_word_byte(static_cast<unsigned char>(content[after]))) {
          matched = true;
          break;
        }
      }
      if (matched) {
        first = pos;
        break;
      }
    }
    if (first != std::string::npos) hits.emplace_back(first, term);
  }
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  for (auto& h : hits) out.push_back(std::move(h.second));
  return out;
}

std::vector<std::string> lint_task_messages(std::span<const ChatMessage> messages,
                                            std::span<const std::string> lexicon) {
  std::vector<std::string> out;
  for (const auto& m : messages) {
    if (m.role != Role::kSystem) continue;
    for (auto& hit : lint_h_lexicon(m.content, lexicon)) {
      if (std::find(out.begin(), out.end(), hit) == out.end()) out.push_back(std::move(hit));
    }
  }
  return out;
}

}  // namespace moma
