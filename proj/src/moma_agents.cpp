#include "moma/moma_agents.h"

#include <algorithm>
#include <set>

#include "moma/answer_parsing.h"
#include "moma/errors.h"
#include "moma/text_util.h"

namespace moma {

namespace {

using Kind = PipelineError::Kind;

[[noreturn]] void unparseable(const std::string& what) {
  throw PipelineError(Kind::kUnparseableAgentOutput, what);
}

// Splits a structured reply into KEY -> value. A key line is "<KEY>:" at the
// start of a line (after optional markdown emphasis); continuation lines are
// appended to the current value. Code-fence lines are ignored.
std::map<std::string, std::string> split_fields(std::string_view reply,
                                                std::span<const std::string_view> keys) {
  std::map<std::string, std::string> fields;
  std::string current;
  for (const auto& raw : text::split_lines(reply)) {
    std::string_view line = text::trim(raw);
    if (line.starts_with("```")) continue;
    std::string_view stripped = line;
    while (!stripped.empty() && (stripped.front() == '*' || stripped.front() == '#'))
      stripped.remove_prefix(1);
    stripped = text::trim(stripped);
    bool is_key = false;
    for (auto key : keys) {
      if (!text::starts_with_ci(stripped, key)) continue;
      auto rest = text::trim(stripped.substr(key.size()));
      while (!rest.empty() && rest.front() == '*') rest.remove_prefix(1);
      rest = text::trim(rest);
      if (rest.empty() || rest.front() != ':') continue;
      rest.remove_prefix(1);
      while (!rest.empty() && rest.front() == '*') rest.remove_prefix(1);
      current = std::string(key);
      if (fields.count(current)) unparseable("duplicate field " + current);
      fields[current] = std::string(text::trim(rest));
      is_key = true;
      break;
    }
    if (is_key) continue;
    if (current.empty()) {
      if (!line.empty()) unparseable("text before the first field: '" + std::string(line) + "'");
      continue;
    }
    if (!line.empty()) {
      auto& v = fields[current];
      if (!v.empty()) v += "\n";
      v += std::string(line);
    }
  }
  return fields;
}

std::pair<std::string, std::string> split_pair(std::string_view entry) {
  for (std::string_view sep : {"->", "=", "=>"}) {
    auto pos = entry.find(sep);
    if (pos != std::string_view::npos) {
      return {std::string(text::trim(entry.substr(0, pos))),
              std::string(text::trim(entry.substr(pos + sep.size())))};
    }
  }
  unparseable("entry without '=': '" + std::string(entry) + "'");
}

std::vector<std::string> split_entries(std::string_view value) {
  std::vector<std::string> out;
  std::string flat = text::replace_all(std::string(value), "\n", ";");
  for (auto& piece : text::split(flat, ';')) {
    auto t = text::trim(piece);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::vector<std::string> unique_tokens(std::span<const MaskEntry> map) {
  std::vector<std::string> out;
  for (const auto& e : map) {
    if (std::find(out.begin(), out.end(), e.mask_token) == out.end()) out.push_back(e.mask_token);
  }
  return out;
}

// Word split on whitespace; normalization keeps underscores and non-ASCII
// bytes so mask tokens survive it.
std::vector<std::string> words_of(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string norm_word(std::string_view w) {
  std::string out;
  for (unsigned char c : w) {
    if (c < 0x80 && std::ispunct(c) && c != '_') continue;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool is_article(const std::string& w) { return w == "a" || w == "an"; }

std::string options_field(const QAItem& item, bool mask_options) {
  if (!mask_options) return "";
  return "\nOPTIONS: " + text::join(option_texts(item.options), " || ");
}

}  // namespace

// ---------------------------------------------------------------------------

ParsedMasking parse_masking_reply(std::string_view reply) {
  static const std::string_view kKeys[] = {"MASKED", "QUESTION", "OPTIONS", "MAP"};
  auto fields = split_fields(reply, kKeys);
  if (!fields.count("MASKED")) unparseable("missing MASKED field");
  if (!fields.count("MAP")) unparseable("missing MAP field");
  ParsedMasking out;
  out.masked = fields["MASKED"];
  if (fields.count("QUESTION")) out.question = fields["QUESTION"];
  if (fields.count("OPTIONS")) {
    std::vector<std::string> opts;
    std::string flat = text::replace_all(fields["OPTIONS"], "\n", " ");
    std::size_t start = 0;
    while (true) {
      auto pos = flat.find("||", start);
      opts.emplace_back(text::trim(std::string_view(flat).substr(
          start, pos == std::string::npos ? std::string::npos : pos - start)));
      if (pos == std::string::npos) break;
      start = pos + 2;
    }
    out.options = std::move(opts);
  }
  auto map_value = text::trim(fields["MAP"]);
  if (!(map_value.empty() || text::iequals(map_value, "none") || map_value == "-")) {
    for (const auto& entry : split_entries(map_value)) {
      auto [surface, token] = split_pair(entry);
      if (surface.empty() || token.empty()) unparseable("empty MAP entry '" + entry + "'");
      out.mask_map.push_back({surface, token});
    }
  }
  return out;
}

ParsedBalancing parse_balancing_reply(std::string_view reply) {
  static const std::string_view kKeys[] = {"BALANCED", "ADJ"};
  auto fields = split_fields(reply, kKeys);
  if (!fields.count("BALANCED")) unparseable("missing BALANCED field");
  if (!fields.count("ADJ")) unparseable("missing ADJ field");
  ParsedBalancing out;
  out.balanced = fields["BALANCED"];
  for (const auto& entry : split_entries(fields["ADJ"])) {
    auto [token, list] = split_pair(entry);
    AdjectiveEntry adj;
    adj.mask_token = token;
    for (auto& a : text::split(list, ',')) {
      auto t = text::trim(a);
      if (!t.empty()) adj.adjectives.emplace_back(t);
    }
    out.adjectives.push_back(std::move(adj));
  }
  return out;
}

std::vector<std::string> find_mask_leaks(std::span<const std::string> texts,
                                         std::span<const MaskEntry> map) {
  std::vector<std::string> leaks;
  for (const auto& e : map) {
    for (const auto& t : texts) {
      if (text::icontains(t, e.surface_form)) {
        if (std::find(leaks.begin(), leaks.end(), e.surface_form) == leaks.end())
          leaks.push_back(e.surface_form);
        break;
      }
    }
  }
  return leaks;
}

std::vector<std::string> missing_tokens(std::string_view s, std::span<const std::string> tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    if (s.find(t) == std::string_view::npos) out.push_back(t);
  }
  return out;
}

std::string token_preserving_diff(std::string_view masked, std::string_view balanced,
                                  std::span<const AdjectiveEntry> adjectives) {
  std::set<std::string> insertable = {"and", ""};
  std::vector<std::string> tokens;
  for (const auto& a : adjectives) {
    tokens.push_back(norm_word(a.mask_token));
    for (const auto& adj : a.adjectives) {
      for (const auto& w : words_of(adj)) insertable.insert(norm_word(w));
    }
  }
  auto is_token_word = [&](const std::string& w) {
    auto n = norm_word(w);
    return std::any_of(tokens.begin(), tokens.end(),
                       [&](const std::string& t) { return !t.empty() && n.find(t) != std::string::npos; });
  };

  auto m = words_of(masked);
  auto b = words_of(balanced);
  std::size_t i = 0;
  bool pending = false;
  for (std::size_t j = 0; j < b.size(); ++j) {
    auto nb = norm_word(b[j]);
    bool match = false;
    if (i < m.size()) {
      auto nm = norm_word(m[i]);
      match = nb == nm || (is_article(nb) && is_article(nm));
    }
    if (match) {
      if (pending && !is_token_word(m[i]))
        return "inserted words before '" + m[i] + "', which is not a mask token";
      pending = false;
      ++i;
      continue;
    }
    if (insertable.count(nb)) {
      pending = true;
      continue;
    }
    return "unexpected word '" + b[j] + "'" +
           (i < m.size() ? " where '" + m[i] + "' was expected" : std::string(" at end"));
  }
  if (i < m.size()) return "word '" + m[i] + "' was removed";
  if (pending) return "trailing inserted words";
  return "";
}

// ---------------------------------------------------------------------------

std::vector<ChatMessage> masking_messages(const QAItem& item, const MaskSymbolScheme& scheme,
                                          const PromptLibrary& prompts, bool mask_options) {
  const auto& agent = prompts.masking;
  std::string user = agent.render.render({{"demos", render_demos(agent.few_shot)},
                                          {"tokens", text::join(scheme.tokens, ", ")},
                                          {"context", item.context},
                                          {"question", item.question},
                                          {"options", options_field(item, mask_options)}});
  return {{Role::kSystem, agent.system_instruction}, {Role::kUser, user}};
}

std::vector<ChatMessage> balancing_messages(std::string_view masked_context,
                                            std::span<const MaskEntry> mask_map,
                                            BalancingStyle style, const PromptLibrary& prompts) {
  const auto& agent = prompts.balancing.at(style);
  std::string user = agent.render.render({{"demos", render_demos(agent.few_shot)},
                                          {"tokens", text::join(unique_tokens(mask_map), ", ")},
                                          {"context", std::string(masked_context)}});
  return {{Role::kSystem, agent.system_instruction}, {Role::kUser, user}};
}

std::vector<ChatMessage> task_messages(std::string_view context, std::string_view question,
                                       std::span<const std::string> options,
                                       const PromptLibrary& prompts) {
  std::string user = prompts.task.render.render({{"context", std::string(context)},
                                                 {"question", std::string(question)},
                                                 {"options", render_options(options)},
                                                 {"demos", ""}});
  return {{Role::kSystem, prompts.task.system_instruction}, {Role::kUser, user}};
}

namespace {

struct MaskCheck {
  ParsedMasking parsed;
  std::vector<std::string> leaks;
};

MaskCheck check_masking(const std::string& reply, const QAItem& item, const MethodContext& ctx) {
  MaskCheck c{parse_masking_reply(reply), {}};
  auto& p = c.parsed;
  if (!p.question) unparseable("missing QUESTION field");
  if (ctx.mask_options) {
    if (!p.options) unparseable("missing OPTIONS field");
    if (p.options->size() != item.options.size())
      unparseable("OPTIONS has " + std::to_string(p.options->size()) + " entries");
  }
  std::set<std::string> seen;
  for (const auto& e : p.mask_map) {
    if (std::find(ctx.scheme.tokens.begin(), ctx.scheme.tokens.end(), e.mask_token) ==
        ctx.scheme.tokens.end())
      unparseable("token '" + e.mask_token + "' is not in the mask scheme");
    if (!seen.insert(e.mask_token).second) unparseable("token '" + e.mask_token + "' used twice");
  }
  std::vector<std::string> texts = {p.masked, *p.question};
  if (p.options) texts.insert(texts.end(), p.options->begin(), p.options->end());
  c.leaks = find_mask_leaks(texts, p.mask_map);
  return c;
}

}  // namespace

MaskingResult run_masking(const QAItem& item, const MethodContext& ctx, CallRecorder& calls) {
  if (text::trim(item.context).empty()) throw std::invalid_argument("masking needs a non-empty context");
  auto messages = masking_messages(item, ctx.scheme, *ctx.prompts, ctx.mask_options);
  MaskingResult result;
  std::string reply = calls.call(stage::kMask, messages, ctx.params).text;
  result.replies.push_back(reply);
  auto check = check_masking(reply, item, ctx);
  if (!check.leaks.empty()) {
    messages.push_back({Role::kAssistant, reply});
    messages.push_back({Role::kUser, ctx.prompts->mask_correction.render(
                                         {{"leaked", text::join(check.leaks, ", ")}})});
    reply = calls.retry_last(messages, ctx.params).text;
    result.replies.push_back(reply);
    check = check_masking(reply, item, ctx);
    if (!check.leaks.empty())
      throw PipelineError(Kind::kMaskLeak, "identifiers survived masking: " + text::join(check.leaks, ", "));
  }
  auto& p = check.parsed;
  std::string all = p.masked + "\n" + *p.question;
  if (p.options) all += "\n" + text::join(*p.options, "\n");
  std::vector<std::string> tokens;
  for (const auto& e : p.mask_map) tokens.push_back(e.mask_token);
  if (auto missing = missing_tokens(all, tokens); !missing.empty())
    unparseable("MAP tokens not used in the rewrite: " + text::join(missing, ", "));

  result.masked_context = p.masked;
  result.masked_question = *p.question;
  if (p.options) result.masked_options = *p.options;
  result.mask_map = p.mask_map;
  return result;
}

BalancingResult run_balancing(std::string_view masked_context, std::span<const MaskEntry> mask_map,
                              BalancingStyle style, const MethodContext& ctx, CallRecorder& calls) {
  if (mask_map.empty()) throw std::invalid_argument("balancing needs a non-empty mask map");
  auto tokens = unique_tokens(mask_map);
  // Tokens that only occur in the question have nothing to balance in the
  // context.
  std::vector<std::string> context_tokens;
  for (const auto& t : tokens) {
    if (masked_context.find(t) != std::string_view::npos) context_tokens.push_back(t);
  }
  auto messages = balancing_messages(masked_context, mask_map, style, *ctx.prompts);
  BalancingResult result;
  std::string reply = calls.call(stage::kBalance, messages, ctx.params).text;
  result.replies.push_back(reply);
  auto parsed = parse_balancing_reply(reply);
  if (auto missing = missing_tokens(parsed.balanced, context_tokens); !missing.empty()) {
    messages.push_back({Role::kAssistant, reply});
    messages.push_back({Role::kUser, ctx.prompts->balance_correction.render(
                                         {{"missing", text::join(missing, ", ")}})});
    reply = calls.retry_last(messages, ctx.params).text;
    result.replies.push_back(reply);
    parsed = parse_balancing_reply(reply);
    if (auto still = missing_tokens(parsed.balanced, context_tokens); !still.empty())
      throw PipelineError(Kind::kMaskTokenDropped, "tokens dropped by balancing: " + text::join(still, ", "));
  }

  // Every token in the context needs adjectives; question-only tokens may
  // have them too.
  std::set<std::string> expected(context_tokens.begin(), context_tokens.end());
  std::set<std::string> allowed(tokens.begin(), tokens.end());
  std::set<std::string> got;
  for (const auto& a : parsed.adjectives) {
    if (!allowed.count(a.mask_token))
      throw PipelineError(Kind::kAdjectiveCountMismatch, "adjectives for unexpected token '" + a.mask_token + "'");
    if (!got.insert(a.mask_token).second)
      throw PipelineError(Kind::kAdjectiveCountMismatch, "token '" + a.mask_token + "' listed twice");
    if (a.adjectives.size() != 2)
      throw PipelineError(Kind::kAdjectiveCountMismatch,
                          "token '" + a.mask_token + "' has " + std::to_string(a.adjectives.size()) +
                              " adjectives");
  }
  for (const auto& t : expected) {
    if (!got.count(t)) throw PipelineError(Kind::kAdjectiveCountMismatch, "no adjectives for token '" + t + "'");
  }
  if (auto diag = token_preserving_diff(masked_context, parsed.balanced, parsed.adjectives); !diag.empty())
    unparseable("balanced text is not an adjective-only edit: " + diag);

  // Report adjectives in mask-map token order.
  std::sort(parsed.adjectives.begin(), parsed.adjectives.end(),
            [&](const AdjectiveEntry& a, const AdjectiveEntry& b) {
              return std::find(tokens.begin(), tokens.end(), a.mask_token) <
                     std::find(tokens.begin(), tokens.end(), b.mask_token);
            });
  result.balanced_context = parsed.balanced;
  result.adjectives = parsed.adjectives;
  return result;
}

std::string run_task(std::string_view context, std::string_view question,
                     std::span<const std::string> options, const MethodContext& ctx,
                     CallRecorder& calls) {
  if (options.size() != kOptionCount) throw std::invalid_argument("task prompt needs 3 options");
  auto messages = task_messages(context, question, options, *ctx.prompts);
  if (auto hits = lint_task_messages(messages, ctx.prompts->h_lexicon); !hits.empty())
    throw std::logic_error("task agent instruction carries H-lexicon terms: " + text::join(hits, ", "));
  return calls.call(stage::kTask, messages, ctx.params).text;
}

AnswerRecord moma_answer(const QAItem& item, const MethodKind& variant, const MethodContext& ctx,
                         CallRecorder& calls) {
  AnswerRecord rec;
  rec.item_id = item.id;
  rec.method = variant;
  const auto* balancing = std::get_if<method::MomaBalancing>(&variant);
  if (!balancing && !std::holds_alternative<method::MomaMasking>(variant))
    throw std::invalid_argument("moma_answer needs a MOMA variant");

  TransformTrace trace;
  trace.original = item.context;
  try {
    auto masked = run_masking(item, ctx, calls);
    rec.raw_responses.insert(rec.raw_responses.end(), masked.replies.begin(), masked.replies.end());
    std::string context = masked.masked_context;
    std::vector<std::string> options =
        ctx.mask_options ? masked.masked_options : option_texts(item.options);
    if (!masked.mask_map.empty()) {
      trace.masked = masked.masked_context;
      trace.masked_question = masked.masked_question;
      trace.masked_options = masked.masked_options;
      trace.mask_map = masked.mask_map;
      if (balancing) {
        auto balanced = run_balancing(masked.masked_context, masked.mask_map, balancing->style, ctx, calls);
        rec.raw_responses.insert(rec.raw_responses.end(), balanced.replies.begin(), balanced.replies.end());
        trace.balanced = balanced.balanced_context;
        trace.adjectives = balanced.adjectives;
        trace.style = balancing->style;
        context = balanced.balanced_context;
      }
    }
    std::string answer = run_task(context, masked.masked_question, options, ctx, calls);
    rec.raw_responses.push_back(answer);
    auto parsed = parse_choice(answer, std::span<const std::string>(options));
    rec.parsed_choice = parsed.choice;
    rec.parse_strategy = parsed.strategy;
  } catch (const PipelineError& e) {
    rec.status = AnswerStatus::kUnanswered;
    rec.error = e.what();
  } catch (const BackendError& e) {
    rec.status = AnswerStatus::kUnanswered;
    rec.error = e.what();
  }
  rec.trace = std::move(trace);
  rec.calls = calls.log();
  return rec;
}

}  // namespace moma
