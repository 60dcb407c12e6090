#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moma/core_types.h"

namespace moma {

struct ParseOutcome {
  std::optional<int> choice;
  std::optional<ParseStrategy> strategy;
  std::string note;

  bool operator==(const ParseOutcome&) const = default;
};

// Extracts a multiple-choice selection from free-form model text. Stages, in
// order, each falling through when it finds nothing or more than one
// distinct option:
//   LetterPattern          "(a)", "a)", "a." or "answer is a" tokens. If two
//                          or more distinct letters occur in the first two
//                          sentences, only an explicit final answer in the
//                          last sentence can resolve it.
//   ExactOption            the full option text as a word-bounded,
//                          case-insensitive substring.
//   NormalizedContainment  the normalized option text contained in the
//                          normalized response.
ParseOutcome parse_choice(std::string_view raw, std::span<const std::string> options);
ParseOutcome parse_choice(std::string_view raw, std::span<const OptionEntry> options);

// Letters (0-based option indices) found by the LetterPattern scanner, in
// order of appearance. Exposed for tests and diagnostics.
std::vector<int> letter_tokens(std::string_view text, int option_count = 3);

// Sentence split used by the scan window: breaks after . ! ? followed by
// whitespace, and at newlines.
std::vector<std::string> split_sentences(std::string_view text);

}  // namespace moma
