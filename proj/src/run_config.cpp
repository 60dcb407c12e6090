#include <charconv>
#include <fstream>

#include "moma/errors.h"
#include "moma/prompts.h"
#include "moma/runner.h"
#include "moma/text_util.h"

namespace moma {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError("config key '" + key + "' = '" + value + "': " + why);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "not a number");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) bad(key, v, "not a number");
    return d;
  } catch (const std::logic_error&) {
    bad(key, v, "not a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, v, "expected true or false");
}

std::string headline_name(HeadlineAggregate h) {
  switch (h) {
    case HeadlineAggregate::kMean:
      return "mean";
    case HeadlineAggregate::kAmbiguous:
      return "ambig";
    case HeadlineAggregate::kDisambiguated:
      return "disambig";
  }
  return "mean";
}

std::string methods_text(const std::vector<MethodKind>& methods) {
  std::vector<std::string> labels;
  for (const auto& m : methods) labels.push_back(method_label(m));
  return text::join(labels, ",");
}

// Splits at top-level commas, keeping the raw token so that a bare
// "MOMA-Balancing" can pick up the configured style.
std::vector<std::string> method_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.emplace_back(text::trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!text::trim(cur).empty()) out.emplace_back(text::trim(cur));
  return out;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.assets_dir = default_data_dir();
  c.abp_file = c.assets_dir / "abp.txt";
  c.methods = {method::Sp{}, method::MomaMasking{}, method::MomaBalancing{}};
  return c;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  std::string v(text::trim(raw));
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  if (key == "dataset") {
    dataset = parse_dataset(v);
  } else if (key == "data_dir") {
    data_dir = v;
  } else if (key == "categories") {
    categories.clear();
    for (auto& c : text::split(v, ',')) {
      auto t = text::trim(c);
      if (!t.empty()) categories.emplace_back(t);
    }
  } else if (key == "methods") {
    methods.clear();
    for (const auto& tok : method_tokens(v)) {
      auto m = parse_method(tok);
      bool bare = tok.find('(') == std::string::npos;
      if (auto* b = std::get_if<method::MomaBalancing>(&m); b && bare) b->style = balancing_style;
      methods.push_back(m);
    }
  } else if (key == "profile") {
    profile = profile_by_name(v).name;
  } else if (key == "backend") {
    if (v == "scripted") backend = BackendChoice::kScripted;
    else if (v == "live") backend = BackendChoice::kLive;
    else bad(key, v, "expected scripted or live");
  } else if (key == "script") {
    script = v;
  } else if (key == "sample_n") {
    sample_n = parse_number<std::size_t>(key, v);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "shuffle_options") {
    if (v.empty() || v == "none") shuffle_options.reset();
    else shuffle_options = parse_number<std::uint64_t>(key, v);
  } else if (key == "mask_scheme") {
    if (v != "letter" && v != "math" && v != "emoji") bad(key, v, "expected letter, math or emoji");
    mask_scheme = v;
  } else if (key == "mask_options") {
    mask_options = parse_bool(key, v);
  } else if (key == "balancing_style") {
    balancing_style = parse_balancing_style(v);
    // Bare MOMA-Balancing entries follow the configured style.
  } else if (key == "sc_temperature") {
    sc_temperature = parse_real(key, v);
  } else if (key == "concurrency") {
    concurrency = parse_number<int>(key, v);
  } else if (key == "output_dir") {
    output_dir = v;
  } else if (key == "assets_dir") {
    assets_dir = v;
    if (!explicit_keys.count("abp_file")) abp_file = assets_dir / "abp.txt";
  } else if (key == "abp_file") {
    abp_file = v;
  } else if (key == "prompt_price") {
    prices.prompt_price = parse_real(key, v);
  } else if (key == "completion_price") {
    prices.completion_price = parse_real(key, v);
  } else if (key == "headline") {
    if (v == "mean") headline = HeadlineAggregate::kMean;
    else if (v == "ambig") headline = HeadlineAggregate::kAmbiguous;
    else if (v == "disambig") headline = HeadlineAggregate::kDisambiguated;
    else bad(key, v, "expected mean, ambig or disambig");
  } else if (key == "retry_max_attempts") {
    retry_max_attempts = parse_number<int>(key, v);
  } else if (key == "retry_base_backoff_ms") {
    retry_base_backoff_ms = parse_number<std::int64_t>(key, v);
  } else if (key == "retry_jitter") {
    retry_jitter = parse_real(key, v);
  } else if (key == "record_script") {
    record_script = v;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
  explicit_keys.insert(key);
}

void RunConfig::apply_text(std::string_view body) {
  std::size_t lineno = 0;
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& raw : text::split_lines(body)) {
    ++lineno;
    auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key(text::trim(line.substr(0, eq)));
    std::string value(text::trim(line.substr(eq + 1)));
    // Trailing comments on unquoted values.
    if (!value.empty() && value.front() != '"') {
      if (auto hash = value.find(" #"); hash != std::string::npos) value = std::string(text::trim(value.substr(0, hash)));
    }
    entries.emplace_back(key, value);
  }
  // A bare MOMA-Balancing entry takes the configured style wherever the
  // style line appears.
  for (const auto& [k, v] : entries) {
    if (k == "balancing_style") set(k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "balancing_style") set(k, v);
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  apply_text(text::read_file(path.string()));
}

void RunConfig::validate() const {
  if (methods.empty()) throw ConfigError("no methods configured");
  for (const auto& m : methods) {
    if (auto v = method_violation(m); !v.empty()) throw ConfigError(method_label(m) + ": " + v);
  }
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = i + 1; j < methods.size(); ++j) {
      if (method_label(methods[i]) == method_label(methods[j]))
        throw ConfigError("method " + method_label(methods[i]) + " listed twice");
    }
  }
  if (data_dir.empty()) throw ConfigError("data_dir is required");
  if (!sample_n) throw ConfigError("sample_n is required");
  if (*sample_n == 0) throw ConfigError("sample_n must be positive");
  if (output_dir.empty()) throw ConfigError("output_dir is required");
  if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (retry_max_attempts < 1) throw ConfigError("retry_max_attempts must be >= 1");
  if (retry_base_backoff_ms < 0) throw ConfigError("retry_base_backoff_ms must be >= 0");
  if (retry_jitter < 0) throw ConfigError("retry_jitter must be >= 0");
  if (prices.prompt_price < 0 || prices.completion_price < 0) throw ConfigError("prices must be >= 0");
  if (!(sc_temperature >= 0)) throw ConfigError("sc_temperature must be >= 0");
  if (dataset != Dataset::kBbq && !categories.empty())
    throw ConfigError("categories only apply to the bbq dataset");
  if (backend == BackendChoice::kScripted) {
    if (script.empty()) throw ConfigError("the scripted backend needs a script file");
    for (const char* live_only : {"retry_jitter", "retry_base_backoff_ms", "record_script"}) {
      if (explicit_keys.count(live_only))
        throw ConfigError(std::string(live_only) + " only applies to the live backend");
    }
  } else if (!script.empty()) {
    throw ConfigError("script only applies to the scripted backend");
  }
}

json RunConfig::identity() const {
  json j = to_json();
  j.erase("concurrency");
  j.erase("output_dir");
  return j;
}

json RunConfig::to_json() const {
  json j = {{"dataset", to_string(dataset)},
            {"data_dir", data_dir.string()},
            {"categories", categories},
            {"methods", methods_text(methods)},
            {"profile", profile},
            {"backend", backend == BackendChoice::kScripted ? "scripted" : "live"},
            {"script", script.string()},
            {"sample_n", sample_n ? json(*sample_n) : json(nullptr)},
            {"seed", seed},
            {"shuffle_options", shuffle_options ? json(*shuffle_options) : json(nullptr)},
            {"mask_scheme", mask_scheme},
            {"mask_options", mask_options},
            {"balancing_style", to_string(balancing_style)},
            {"sc_temperature", sc_temperature},
            {"concurrency", concurrency},
            {"output_dir", output_dir.string()},
            {"assets_dir", assets_dir.string()},
            {"abp_file", abp_file.string()},
            {"prompt_price", prices.prompt_price},
            {"completion_price", prices.completion_price},
            {"headline", headline_name(headline)},
            {"retry_max_attempts", retry_max_attempts},
            {"retry_base_backoff_ms", retry_base_backoff_ms},
            {"retry_jitter", retry_jitter},
            {"record_script", record_script.string()}};
  j["explicit_keys"] = std::vector<std::string>(explicit_keys.begin(), explicit_keys.end());
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c = default_run_config();
  std::set<std::string> keys;
  if (j.contains("explicit_keys")) keys = j["explicit_keys"].get<std::set<std::string>>();
  for (const auto& [key, value] : j.items()) {
    if (key == "explicit_keys") continue;
    std::string v;
    if (value.is_null()) {
      if (key == "shuffle_options") c.shuffle_options.reset();
      continue;
    } else if (value.is_string()) {
      v = value.get<std::string>();
    } else if (value.is_array()) {
      std::vector<std::string> parts = value.get<std::vector<std::string>>();
      v = text::join(parts, ",");
    } else {
      v = value.dump();
    }
    c.set(key, v);
  }
  c.explicit_keys = keys;
  return c;
}

std::string RunConfig::defaults_text() {
  RunConfig d = default_run_config();
  std::string out = "# moma run configuration (key = value). Defaults shown; uncomment to change.\n";
  auto j = d.to_json();
  j.erase("explicit_keys");
  for (const auto& [key, value] : j.items()) {
    std::string v;
    if (value.is_null()) v = "";
    else if (value.is_string()) v = value.get<std::string>();
    else if (value.is_array()) v = text::join(value.get<std::vector<std::string>>(), ",");
    else v = value.dump();
    // Commented out so the output loads as a no-op config file.
    out += "# " + key + " = " + v + "\n";
  }
  out +=
      "# Required for `moma run`: data_dir, sample_n, output_dir, and script when\n"
      "# backend = scripted. The live backend reads MOMA_API_BASE and MOMA_API_KEY.\n";
  return out;
}

}  // namespace moma
