#include "moma/datasets.h"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "moma/errors.h"
#include "moma/text_util.h"

namespace moma {

namespace {

[[noreturn]] void schema(const std::string& what) { throw DataError(DataError::Kind::kSchema, what); }

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) schema(std::string("missing field '") + key + "'");
  return j.at(key);
}

std::string str_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  schema(std::string("field '") + key + "' is not a string");
}

// Lowercase alphanumerics only, with gender spellings folded together.
std::string group_key(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
  }
  static const std::map<std::string, std::string> kAlias = {
      {"f", "f"}, {"female", "f"}, {"woman", "f"}, {"women", "f"}, {"girl", "f"},
      {"m", "m"}, {"male", "m"},   {"man", "m"},   {"men", "m"},   {"boy", "m"}};
  if (auto it = kAlias.find(out); it != kAlias.end()) return it->second;
  return out;
}

// Keys an answer can be identified by: its group label, the part of the
// label after a "F-"/"M-" style prefix, and the answer text itself.
std::set<std::string> answer_keys(const json& info) {
  std::set<std::string> keys;
  if (!info.is_array() || info.size() < 2 || !info[0].is_string() || !info[1].is_string())
    schema("answer_info entries must be [text, group] pairs");
  std::string text0 = info[0].get<std::string>();
  std::string label = info[1].get<std::string>();
  keys.insert(group_key(label));
  if (auto dash = label.rfind('-'); dash != std::string::npos) keys.insert(group_key(label.substr(dash + 1)));
  keys.insert(group_key(text0));
  keys.erase("");
  return keys;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Uniform integer in [0, bound) by rejection, independent of the standard
// library's distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                        std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

template <class T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_below(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

std::string stratum_of(const QAItem& item) {
  return item.dataset == Dataset::kBbq ? item.meta.category : item.meta.bias_type;
}

}  // namespace

const std::vector<std::string>& bbq_categories() {
  static const std::vector<std::string> kCats = {
      "Age", "Disability_status", "Gender_identity", "Nationality", "Physical_appearance",
      "Race_ethnicity", "Religion", "SES", "Sexual_orientation"};
  return kCats;
}

QAItem parse_bbq_record(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    schema(std::string("invalid JSON: ") + e.what());
  }
  QAItem item;
  item.dataset = Dataset::kBbq;
  item.meta.category = str_field(j, "category");
  item.id = "bbq:" + item.meta.category + ":" + str_field(j, "example_id");
  item.context = str_field(j, "context");
  item.question = str_field(j, "question");

  auto cond = str_field(j, "context_condition");
  if (cond == "ambig") item.meta.context_condition = ContextCondition::kAmbiguous;
  else if (cond == "disambig") item.meta.context_condition = ContextCondition::kDisambiguated;
  else schema("context_condition must be ambig or disambig, got '" + cond + "'");
  auto pol = str_field(j, "question_polarity");
  if (pol == "neg") item.meta.question_polarity = QuestionPolarity::kNegative;
  else if (pol == "nonneg") item.meta.question_polarity = QuestionPolarity::kNonnegative;
  else schema("question_polarity must be neg or nonneg, got '" + pol + "'");

  const auto& label = field(j, "label");
  if (!label.is_number_integer() || label.get<int>() < 0 || label.get<int>() > 2)
    schema("label must be 0, 1 or 2");
  item.gold = label.get<int>();

  const auto& info = field(j, "answer_info");
  const auto& extra = field(j, "additional_metadata");
  std::set<std::string> stereotyped;
  for (const auto& g : field(extra, "stereotyped_groups")) {
    if (!g.is_string()) schema("stereotyped_groups must hold strings");
    stereotyped.insert(group_key(g.get<std::string>()));
  }

  int unknown = -1;
  std::vector<int> matches;
  std::vector<int> groups;
  std::vector<std::set<std::string>> group_keys;
  for (int k = 0; k < 3; ++k) {
    std::string key = "ans" + std::to_string(k);
    const auto& ai = field(info, key.c_str());
    if (!ai.is_array() || ai.size() < 2 || !ai[1].is_string()) schema("answer_info." + key + " malformed");
    if (ai[1].get<std::string>() == "unknown") {
      if (unknown >= 0) schema("more than one unknown answer");
      unknown = k;
      continue;
    }
    groups.push_back(k);
    group_keys.push_back(answer_keys(ai));
    const auto& keys = group_keys.back();
    if (std::any_of(keys.begin(), keys.end(), [&](const std::string& s) { return stereotyped.count(s) > 0; }))
      matches.push_back(k);
  }
  if (unknown < 0) schema("no unknown answer in answer_info");
  // Group labels and stereotyped_groups are spelled inconsistently in places
  // ("disabled" vs "physically disabled"); fall back to key containment.
  if (matches.empty() && groups.size() == 2) {
    auto contained = [&](const std::set<std::string>& keys) {
      for (const auto& a : keys) {
        for (const auto& s : stereotyped) {
          if (a.size() >= 3 && s.size() >= 3 &&
              (a.find(s) != std::string::npos || s.find(a) != std::string::npos))
            return true;
        }
      }
      return false;
    };
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (contained(group_keys[g])) matches.push_back(groups[g]);
    }
  }
  if (matches.size() != 1)
    schema("cannot identify the stereotyped answer (" + std::to_string(matches.size()) + " matches)");
  int stereo = matches.front();
  int other = groups[0] == stereo ? groups[1] : groups[0];
  int biased = *item.meta.question_polarity == QuestionPolarity::kNegative ? stereo : other;

  for (int k = 0; k < 3; ++k) {
    OptionEntry o;
    o.index = k;
    o.text = str_field(j, ("ans" + std::to_string(k)).c_str());
    o.tag = k == unknown ? OptionTag::kUnknown : k == biased ? OptionTag::kBiasedTarget : OptionTag::kNonTarget;
    item.options.push_back(std::move(o));
  }
  if (auto v = validate_item(item); !v.ok()) schema(text::join(v.violations, "; "));
  return item;
}

LoadResult load_bbq(const std::filesystem::path& dir, const std::vector<std::string>& categories,
                    bool strict) {
  const auto& known = bbq_categories();
  std::vector<std::string> wanted = categories.empty() ? known : categories;
  for (const auto& c : wanted) {
    if (std::find(known.begin(), known.end(), c) == known.end())
      throw DataError(DataError::Kind::kUnknownCategory, "unknown BBQ category '" + c + "'");
  }
  LoadResult result;
  for (const auto& c : wanted) {
    auto path = dir / (c + ".jsonl");
    std::ifstream in(path);
    if (!in) throw DataError(DataError::Kind::kIo, "cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      try {
        auto item = parse_bbq_record(line);
        if (item.meta.category != c) schema("category '" + item.meta.category + "' in file for " + c);
        result.items.push_back(std::move(item));
      } catch (const DataError& e) {
        if (strict) throw DataError(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
        result.rejects.push_back({path.string(), lineno, e.what()});
      }
    }
  }
  return result;
}

QaTemplates QaTemplates::load(const std::filesystem::path& path) {
  QaTemplates t;
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::kSchema, path.string() + ": " + e.what());
  }
  t.intrasentence_question = j.value("intrasentence_question", t.intrasentence_question);
  t.intersentence_question = j.value("intersentence_question", t.intersentence_question);
  t.blank_marker = j.value("blank_marker", t.blank_marker);
  return t;
}

LoadResult load_stereoset(const std::filesystem::path& dev_json, Dataset task,
                          const QaTemplates& templates, bool strict) {
  if (task == Dataset::kBbq) throw std::invalid_argument("load_stereoset needs a StereoSet task");
  std::ifstream in(dev_json);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot open " + dev_json.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::kSchema, dev_json.string() + ": " + e.what());
  }
  const bool intra = task == Dataset::kStereoSetIntra;
  const char* key = intra ? "intrasentence" : "intersentence";
  if (!root.contains("data") || !root["data"].contains(key) || !root["data"][key].is_array())
    throw DataError(DataError::Kind::kSchema, dev_json.string() + ": missing data." + key);

  LoadResult result;
  std::size_t index = 0;
  for (const auto& rec : root["data"][key]) {
    ++index;
    try {
      QAItem item;
      item.dataset = task;
      item.id = to_string(task) + ":" + str_field(rec, "id");
      item.context = str_field(rec, "context");
      item.meta.bias_type = str_field(rec, "bias_type");
      item.meta.task = intra ? StereoTask::kIntrasentence : StereoTask::kIntersentence;
      item.question = intra ? templates.intrasentence_question : templates.intersentence_question;
      if (intra && item.context.find(templates.blank_marker) == std::string::npos)
        schema("intrasentence context has no " + templates.blank_marker);
      const auto& sentences = field(rec, "sentences");
      if (!sentences.is_array() || sentences.size() != 3) schema("expected 3 sentences");
      std::set<OptionTag> seen;
      for (const auto& s : sentences) {
        OptionEntry o;
        o.index = static_cast<int>(item.options.size());
        o.text = str_field(s, "sentence");
        auto gl = str_field(s, "gold_label");
        if (gl == "stereotype") o.tag = OptionTag::kStereotype;
        else if (gl == "anti-stereotype") o.tag = OptionTag::kAntiStereotype;
        else if (gl == "unrelated") o.tag = OptionTag::kUnrelated;
        else schema("unknown gold_label '" + gl + "'");
        if (!seen.insert(o.tag).second) schema("gold_label '" + gl + "' appears twice");
        item.options.push_back(std::move(o));
      }
      if (auto v = validate_item(item); !v.ok()) schema(text::join(v.violations, "; "));
      result.items.push_back(std::move(item));
    } catch (const DataError& e) {
      if (strict)
        throw DataError(e.kind(), dev_json.string() + ": " + key + "[" + std::to_string(index) + "]: " + e.what(), index);
      result.rejects.push_back({dev_json.string(), index, e.what()});
    }
  }
  return result;
}

std::vector<std::size_t> largest_remainder_quotas(const std::vector<std::size_t>& sizes,
                                                  const std::vector<std::string>& names,
                                                  std::size_t n) {
  std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<std::size_t> quota(sizes.size(), 0);
  if (total == 0) return quota;
  // Exact integer arithmetic: quota_i = floor(n * size_i / total), remainder
  // compared as (n * size_i) mod total.
  std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder, index)
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    unsigned __int128 prod = static_cast<unsigned __int128>(n) * sizes[i];
    quota[i] = static_cast<std::size_t>(prod / total);
    rem.emplace_back(static_cast<std::size_t>(prod % total), i);
    assigned += quota[i];
  }
  std::sort(rem.begin(), rem.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return names[a.second] < names[b.second];
  });
  for (std::size_t k = 0; assigned < n && k < rem.size(); ++k) {
    ++quota[rem[k].second];
    ++assigned;
  }
  return quota;
}

std::vector<QAItem> sample_split(const std::vector<QAItem>& items, std::size_t n, std::uint64_t seed) {
  if (n > items.size())
    throw DataError(DataError::Kind::kNotEnoughItems,
                    "requested " + std::to_string(n) + " items but only " + std::to_string(items.size()) +
                        " are loaded");
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < items.size(); ++i) strata[stratum_of(items[i])].push_back(i);
  std::vector<std::string> names;
  std::vector<std::size_t> sizes;
  for (const auto& [name, idx] : strata) {
    names.push_back(name);
    sizes.push_back(idx.size());
  }
  auto quota = largest_remainder_quotas(sizes, names, n);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  std::size_t s = 0;
  for (auto& [name, idx] : strata) {
    fisher_yates(idx, rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[s]));
    ++s;
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<QAItem> out;
  out.reserve(chosen.size());
  for (auto i : chosen) out.push_back(items[i]);
  return out;
}

std::vector<QAItem> shuffle_options(std::vector<QAItem> items, std::uint64_t seed) {
  for (auto& item : items) {
    std::mt19937_64 rng(fnv1a(item.id) ^ seed);
    std::vector<int> perm(item.options.size());
    std::iota(perm.begin(), perm.end(), 0);
    fisher_yates(perm, rng);
    std::vector<OptionEntry> shuffled;
    std::optional<int> gold;
    for (std::size_t pos = 0; pos < perm.size(); ++pos) {
      OptionEntry o = item.options[perm[pos]];
      o.index = static_cast<int>(pos);
      if (item.gold && *item.gold == perm[pos]) gold = static_cast<int>(pos);
      shuffled.push_back(std::move(o));
    }
    item.options = std::move(shuffled);
    item.gold = gold;
  }
  return items;
}

}  // namespace moma
