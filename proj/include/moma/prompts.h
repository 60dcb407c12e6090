#pragma once

// Prompt templates, few-shot demos, ABP prompt sets, mask symbol schemes and
// the H-lexicon lint. Everything here is loaded from editable data files.

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "moma/core_types.h"

namespace moma {

// Plain text with `{name}` placeholders. Rendering fails on any placeholder
// without a binding; `{{` and `}}` produce literal braces.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::string source);

  std::string render(const std::map<std::string, std::string>& vars) const;
  std::vector<std::string> placeholders() const;
  const std::string& source() const { return source_; }

 private:
  std::string source_;
};

struct FewShotDemo {
  std::string input;
  std::string output;
};

struct AgentPrompt {
  // Carries H for assistant agents; H-free for the task agent.
  std::string system_instruction;
  std::vector<FewShotDemo> few_shot;
  PromptTemplate render;
};

std::string render_demos(std::span<const FewShotDemo> demos);
// "(a) first\n(b) second\n(c) third"
std::string render_options(std::span<const std::string> option_texts);
std::vector<std::string> option_texts(std::span<const OptionEntry> options);

struct PromptLibrary {
  AgentPrompt masking;
  std::map<BalancingStyle, AgentPrompt> balancing;
  AgentPrompt task;
  // {leaked}
  PromptTemplate mask_correction;
  // {missing}
  PromptTemplate balance_correction;
  std::string cot_trigger;
  // {prompt} {trigger} {reasoning}
  PromptTemplate cot_extract;
  // {other_answers}
  PromptTemplate som_revision;
  // {prompt} {answers}
  PromptTemplate som_judge;
  std::vector<std::string> h_lexicon;

  // Reads the layout under data/prompts (see README). Throws ConfigError on
  // missing files or malformed demos.
  static PromptLibrary load(const std::filesystem::path& dir);
  // Violations of the agent-prompt invariants (assistant agents have >= 1
  // demo, the task agent has none).
  std::vector<std::string> violations() const;
};

std::filesystem::path default_data_dir();

std::vector<FewShotDemo> load_demos(const std::filesystem::path& jsonl);

struct AbpPromptSet {
  std::array<std::string, 5> prompts;
  std::array<std::string, 5> provenance;

  // Sections introduced by "--- ABP-k ---" lines, k in 0..4. Lines starting
  // with "provenance:" inside a section set that prompt's provenance note.
  static AbpPromptSet parse(std::string_view text);
  static AbpPromptSet load(const std::filesystem::path& path);
};

enum class MaskSymbolKind { kLetterPair, kMathSymbol, kEmoji };

struct MaskSymbolScheme {
  MaskSymbolKind kind = MaskSymbolKind::kLetterPair;
  std::vector<std::string> tokens;

  // "A_B", "C_D", ..., "Y_Z".
  static MaskSymbolScheme letter_pair();
  // One token per non-blank line.
  static MaskSymbolScheme from_file(MaskSymbolKind kind, const std::filesystem::path& path);
  // "letter", "math" or "emoji"; math/emoji read data/symbols/<name>.txt.
  static MaskSymbolScheme by_name(std::string_view name, const std::filesystem::path& data_dir);

  // Tokens must be non-empty, pairwise distinct and no token may occur
  // inside another.
  std::vector<std::string> violations() const;
};

std::string to_string(MaskSymbolKind kind);

// Whole-word, case-insensitive occurrences of lexicon terms (a trailing
// "s", "es", "ed" or "ly" is tolerated). Returns the matched terms in
// order of first occurrence, each once.
std::vector<std::string> lint_h_lexicon(std::string_view text, std::span<const std::string> lexicon);
// Lints the instruction part of a task prompt: system messages only, since
// item content is data rather than instruction.
std::vector<std::string> lint_task_messages(std::span<const ChatMessage> messages,
                                            std::span<const std::string> lexicon);

std::vector<std::string> default_h_lexicon();

}  // namespace moma
