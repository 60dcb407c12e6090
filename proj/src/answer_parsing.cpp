#include "moma/answer_parsing.h"

#include <algorithm>
#include <cctype>
#include <set>

#include "moma/text_util.h"

namespace moma {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

int letter_index(char c, int option_count) {
  int idx = std::tolower(static_cast<unsigned char>(c)) - 'a';
  return idx >= 0 && idx < option_count ? idx : -1;
}

// Characters that may directly follow a bare "answer is x" letter.
bool is_answer_terminator(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == ')' || c == '\n' ||
         c == '"' || c == '\'' || c == '*';
}

std::vector<int> distinct(const std::vector<int>& xs) {
  std::vector<int> out;
  for (int x : xs) {
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  }
  return out;
}

// Letters introduced by an "answer is"/"answer:" cue: "answer is b." etc.
void answer_phrase_letters(std::string_view t, int option_count,
                           std::vector<std::pair<std::size_t, int>>& found) {
  static const std::string_view kCues[] = {"answer is", "answer:", "answer would be",
                                           "answer should be"};
  for (auto cue : kCues) {
    for (std::size_t pos = text::ifind(t, cue); pos != std::string_view::npos;
         pos = text::ifind(t, cue, pos + 1)) {
      std::size_t i = pos + cue.size();
      while (i < t.size() && (is_space(t[i]) || t[i] == '*' || t[i] == '"')) ++i;
      if (text::starts_with_ci(t.substr(i), "option ")) i += 7;
      if (i >= t.size()) continue;
      int idx = letter_index(t[i], option_count);
      if (idx < 0) continue;
      std::size_t after = i + 1;
      if (after == t.size() || is_answer_terminator(t[after])) found.emplace_back(i, idx);
    }
  }
}

std::vector<int> letters_in(std::string_view t, int option_count) {
  std::vector<std::pair<std::size_t, int>> found;
  for (std::size_t i = 0; i < t.size(); ++i) {
    int idx = letter_index(t[i], option_count);
    if (idx < 0) continue;
    bool prev_word = i > 0 && text::is_word_byte(static_cast<unsigned char>(t[i - 1]));
    char prev = i > 0 ? t[i - 1] : '\0';
    char next = i + 1 < t.size() ? t[i + 1] : '\0';
    if (prev_word) continue;
    if (next == ')') {
      // "(a)" or standalone "a)"
      found.emplace_back(i, idx);
      continue;
    }
    if (next == '.' && (i == 0 || is_space(prev)) &&
        (i + 2 >= t.size() || is_space(t[i + 2]))) {
      found.emplace_back(i, idx);
    }
  }
  answer_phrase_letters(t, option_count, found);
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  std::vector<int> out;
  for (auto& f : found) out.push_back(f.second);
  return out;
}

// Explicit final answer in the last sentence ("so the answer is (b)",
// "Therefore, (a).").
std::optional<int> final_answer(const std::vector<std::string>& sentences, int option_count) {
  if (sentences.empty()) return std::nullopt;
  const std::string& last = sentences.back();
  static const std::string_view kCues[] = {"answer", "therefore", "thus", "so ", "choose",
                                           "select", "pick", "go with"};
  std::size_t cue_pos = std::string::npos;
  for (auto cue : kCues) {
    auto p = text::ifind(last, cue);
    if (p != std::string::npos) cue_pos = std::min(cue_pos, p);
  }
  if (cue_pos == std::string::npos) return std::nullopt;
  auto letters = distinct(letters_in(std::string_view(last).substr(cue_pos), option_count));
  if (letters.size() == 1) return letters.front();
  return std::nullopt;
}

bool word_bounded_occurrence(std::string_view hay, std::string_view needle) {
  for (std::size_t pos = text::ifind(hay, needle); pos != std::string_view::npos;
       pos = text::ifind(hay, needle, pos + 1)) {
    bool left_ok = pos == 0 || !text::is_word_byte(static_cast<unsigned char>(hay[pos - 1])) ||
                   !text::is_word_byte(static_cast<unsigned char>(needle.front()));
    std::size_t end = pos + needle.size();
    bool right_ok = end == hay.size() ||
                    !text::is_word_byte(static_cast<unsigned char>(hay[end])) ||
                    !text::is_word_byte(static_cast<unsigned char>(needle.back()));
    if (left_ok && right_ok) return true;
  }
  return false;
}

}  // namespace

std::vector<std::string> split_sentences(std::string_view t) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    auto s = text::trim(current);
    if (!s.empty()) out.emplace_back(s);
    current.clear();
  };
  for (std::size_t i = 0; i < t.size(); ++i) {
    char c = t[i];
    if (c == '\n') {
      flush();
      continue;
    }
    current.push_back(c);
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == t.size() || is_space(t[i + 1]))) flush();
  }
  flush();
  return out;
}

std::vector<int> letter_tokens(std::string_view t, int option_count) {
  return letters_in(t, option_count);
}

ParseOutcome parse_choice(std::string_view raw, std::span<const std::string> options) {
  ParseOutcome out;
  const int n = static_cast<int>(options.size());

  // LetterPattern
  auto sentences = split_sentences(raw);
  std::string window;
  for (std::size_t i = 0; i < sentences.size() && i < 2; ++i) window += sentences[i] + " ";
  auto window_letters = distinct(letters_in(window, n));
  std::string letter_note;
  if (window_letters.size() == 1) {
    out.choice = window_letters.front();
    out.strategy = ParseStrategy::kLetterPattern;
    out.note = "single letter in scan window";
    return out;
  }
  if (window_letters.size() >= 2) {
    if (auto f = final_answer(sentences, n)) {
      out.choice = *f;
      out.strategy = ParseStrategy::kLetterPattern;
      out.note = "final-answer cue in last sentence";
      return out;
    }
    letter_note = "letters ambiguous in scan window; ";
  } else {
    auto all = distinct(letters_in(raw, n));
    if (all.size() == 1) {
      out.choice = all.front();
      out.strategy = ParseStrategy::kLetterPattern;
      out.note = "single letter outside scan window";
      return out;
    }
    if (all.size() >= 2) {
      if (auto f = final_answer(sentences, n)) {
        out.choice = *f;
        out.strategy = ParseStrategy::kLetterPattern;
        out.note = "final-answer cue in last sentence";
        return out;
      }
      letter_note = "letters ambiguous; ";
    }
  }

  // ExactOption
  std::vector<int> exact;
  for (int i = 0; i < n; ++i) {
    auto opt = text::trim(options[i]);
    if (!opt.empty() && word_bounded_occurrence(raw, opt)) exact.push_back(i);
  }
  if (exact.size() == 1) {
    out.choice = exact.front();
    out.strategy = ParseStrategy::kExactOption;
    out.note = letter_note + "unique exact option text";
    return out;
  }

  // NormalizedContainment
  auto norm_raw = text::normalize(raw);
  std::vector<int> contained;
  for (int i = 0; i < n; ++i) {
    auto norm_opt = text::normalize(options[i]);
    if (!norm_opt.empty() && norm_raw.find(norm_opt) != std::string::npos) contained.push_back(i);
  }
  if (contained.size() == 1) {
    out.choice = contained.front();
    out.strategy = ParseStrategy::kNormalizedContainment;
    out.note = letter_note + "unique normalized containment";
    return out;
  }

  out.note = letter_note + (exact.size() > 1 || contained.size() > 1 ? "multiple options matched"
                                                                     : "no option matched");
  return out;
}

ParseOutcome parse_choice(std::string_view raw, std::span<const OptionEntry> options) {
  std::vector<std::string> texts;
  texts.reserve(options.size());
  for (const auto& o : options) texts.push_back(o.text);
  return parse_choice(raw, std::span<const std::string>(texts));
}

}  // namespace moma
