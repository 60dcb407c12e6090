#include "moma/runner.h"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "moma/baseline_methods.h"
#include "moma/datasets.h"
#include "moma/errors.h"
#include "moma/method_context.h"
#include "moma/prompts.h"
#include "moma/text_util.h"

#ifndef MOMA_VERSION
#define MOMA_VERSION "unknown"
#endif

namespace moma {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kRecords = "records.jsonl";
constexpr const char* kScores = "scores.json";
constexpr const char* kCosts = "costs.json";

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Write-to-temp then rename, so readers never see a half-written file.
void write_atomically(const fs::path& path, const std::string& body) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataError::Kind::kIo, "cannot write " + tmp.string());
    out << body;
    out.flush();
    if (!out) throw DataError(DataError::Kind::kIo, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_atomically(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::kSchema, path.string() + ": " + e.what());
  }
}

std::string identity_digest(const RunConfig& c) { return sha256_hex(c.identity().dump()); }

using PairKey = std::pair<std::string, std::string>;  // (method label, item id)

PairKey key_of(const AnswerRecord& r) { return {method_label(r.method), r.item_id}; }

void sort_records(std::vector<AnswerRecord>& records) {
  std::sort(records.begin(), records.end(),
            [](const AnswerRecord& a, const AnswerRecord& b) { return key_of(a) < key_of(b); });
}

// Reads a records file written by a possibly interrupted run. Only the last
// line may be damaged; it is dropped and the file rewritten without it.
std::vector<AnswerRecord> recover_records(const fs::path& path) {
  std::vector<AnswerRecord> out;
  if (!fs::exists(path)) return out;
  std::string body = text::read_file(path.string());
  auto lines = text::split_lines(body);
  bool complete_last = !body.empty() && body.back() == '\n';
  std::size_t good_bytes = 0;
  bool truncated = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    bool is_last = i + 1 == lines.size();
    if (text::trim(line).empty()) {
      good_bytes += line.size() + 1;
      continue;
    }
    try {
      if (is_last && !complete_last) throw std::runtime_error("unterminated line");
      out.push_back(json::parse(line).get<AnswerRecord>());
      good_bytes += line.size() + 1;
    } catch (const std::exception& e) {
      if (!is_last)
        throw DataError(DataError::Kind::kSchema,
                        path.string() + ":" + std::to_string(i + 1) + ": damaged record: " + e.what(), i + 1);
      truncated = true;
    }
  }
  if (truncated) write_atomically(path, body.substr(0, std::min(good_bytes, body.size())));
  return out;
}

MethodContext build_context(const RunConfig& config, PromptLibrary& prompts, AbpPromptSet& abp) {
  prompts = PromptLibrary::load(config.assets_dir / "prompts");
  if (auto v = prompts.violations(); !v.empty()) throw ConfigError("prompt library: " + text::join(v, "; "));
  bool needs_abp = std::any_of(config.methods.begin(), config.methods.end(), [](const MethodKind& m) {
    return std::holds_alternative<method::Abp>(m);
  });
  MethodContext ctx;
  ctx.prompts = &prompts;
  if (needs_abp) {
    abp = AbpPromptSet::load(config.abp_file);
    ctx.abp = &abp;
  }
  ctx.scheme = MaskSymbolScheme::by_name(config.mask_scheme, config.assets_dir);
  if (auto v = ctx.scheme.violations(); !v.empty()) throw ConfigError("mask scheme: " + text::join(v, "; "));
  ctx.params = profile_by_name(config.profile).defaults;
  ctx.params.seed = static_cast<std::int64_t>(config.seed);
  ctx.sc_temperature = config.sc_temperature;
  ctx.mask_options = config.mask_options;
  return ctx;
}

RetryPolicy build_policy(const RunConfig& config) {
  RetryPolicy p;
  p.max_attempts = config.retry_max_attempts;
  if (config.backend == BackendChoice::kScripted) {
    // Replays never wait.
    p.base_backoff_ms = 0;
    p.jitter = 0;
    p.sleep = [](std::chrono::milliseconds) {};
  } else {
    p.base_backoff_ms = config.retry_base_backoff_ms;
    p.jitter = config.retry_jitter;
  }
  return p;
}

json manifest_json(const RunConfig& config, const std::string& started, const json& finished,
                   const std::string& status, const std::vector<AnswerRecord>& records,
                   std::size_t pairs_total) {
  json items = json::array();
  std::size_t unanswered = 0;
  for (const auto& r : records) {
    items.push_back({{"method", method_label(r.method)}, {"item_id", r.item_id}, {"status", to_string(r.status)}});
    unanswered += r.status == AnswerStatus::kUnanswered;
  }
  return {{"tool", "moma"},
          {"version", MOMA_VERSION},
          {"config", config.to_json()},
          {"config_identity", identity_digest(config)},
          {"started_at", started},
          {"finished_at", finished},
          {"status", status},
          {"pairs_total", pairs_total},
          {"pairs_completed", records.size()},
          {"unanswered", unanswered},
          {"items", items}};
}

json scores_json(const RunConfig& config, const std::vector<AnswerRecord>& records,
                 const std::vector<QAItem>& items) {
  json methods = json::object();
  json order = json::array();
  for (const auto& m : config.methods) {
    auto label = method_label(m);
    order.push_back(label);
    std::vector<AnswerRecord> mine;
    for (const auto& r : records) {
      if (method_label(r.method) == label) mine.push_back(r);
    }
    if (config.dataset == Dataset::kBbq) methods[label] = to_json(score_bbq(mine, items, config.headline));
    else methods[label] = to_json(score_stereoset(mine, items));
  }
  const char* headline = config.headline == HeadlineAggregate::kMean        ? "mean"
                         : config.headline == HeadlineAggregate::kAmbiguous ? "ambig"
                                                                            : "disambig";
  return {{"dataset", to_string(config.dataset)},
          {"headline", headline},
          {"method_order", order},
          {"methods", methods}};
}

void write_outputs(const RunConfig& config, const std::vector<AnswerRecord>& records,
                   const std::vector<QAItem>& items) {
  const fs::path dir = config.output_dir;
  std::string body;
  for (const auto& r : records) body += json(r).dump() + "\n";
  write_atomically(dir / kRecords, body);
  write_json(dir / kScores, scores_json(config, records, items));

  CallLog all;
  for (const auto& r : records) all.insert(all.end(), r.calls.begin(), r.calls.end());
  bool has_cot = std::any_of(config.methods.begin(), config.methods.end(),
                             [](const MethodKind& m) { return std::holds_alternative<method::Cot>(m); });
  std::optional<std::string> reference;
  if (has_cot) reference = "CoT";
  write_json(dir / kCosts, cost_report_to_json(aggregate_costs(all, config.prices, reference), config.prices));
}

}  // namespace

std::vector<AnswerRecord> read_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot read " + path.string());
  std::vector<AnswerRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line).get<AnswerRecord>());
    } catch (const std::exception& e) {
      throw DataError(DataError::Kind::kSchema, path.string() + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  return out;
}

std::vector<QAItem> load_run_items(const RunConfig& config, std::vector<std::string>* reject_notes) {
  LoadResult loaded;
  if (config.dataset == Dataset::kBbq) {
    loaded = load_bbq(config.data_dir, config.categories);
  } else {
    fs::path dev = config.data_dir;
    if (fs::is_directory(dev)) dev /= "dev.json";
    auto templates_path = config.assets_dir / "qa_templates.json";
    QaTemplates templates = fs::exists(templates_path) ? QaTemplates::load(templates_path) : QaTemplates{};
    loaded = load_stereoset(dev, config.dataset, templates);
  }
  if (reject_notes) {
    for (const auto& r : loaded.rejects)
      reject_notes->push_back(r.file + ":" + std::to_string(r.line) + ": " + r.reason);
  }
  auto items = sample_split(loaded.items, config.sample_n.value_or(loaded.items.size()), config.seed);
  if (config.shuffle_options) items = shuffle_options(std::move(items), *config.shuffle_options);
  return items;
}

RunSummary run_experiment(const RunConfig& config, Backend* backend) {
  config.validate();
  const fs::path dir = config.output_dir;

  // Fatal configuration and data problems surface before any call.
  PromptLibrary prompts;
  AbpPromptSet abp;
  MethodContext ctx = build_context(config, prompts, abp);
  std::vector<std::string> rejects;
  auto items = load_run_items(config, &rejects);

  std::unique_ptr<Backend> owned;
  std::unique_ptr<Backend> recorder;
  if (!backend) {
    if (config.backend == BackendChoice::kScripted) {
      owned = std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(config.script));
    } else {
      owned = std::make_unique<HttpBackend>(http_config_from_env());
    }
    backend = owned.get();
  }
  if (!config.record_script.empty()) {
    recorder = std::make_unique<RecordingBackend>(*backend, config.record_script);
    backend = recorder.get();
  }

  std::vector<AnswerRecord> done;
  std::string started = utc_now();
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!fs::exists(dir / kManifest))
      throw ConfigError("output directory " + dir.string() + " is not empty and holds no run manifest");
    json manifest = read_json(dir / kManifest);
    if (manifest.value("config_identity", "") != identity_digest(config))
      throw ConfigError("output directory " + dir.string() + " holds a run with a different configuration");
    started = manifest.value("started_at", started);
    done = recover_records(dir / kRecords);
  } else {
    fs::create_directories(dir);
  }

  std::set<PairKey> persisted;
  for (const auto& r : done) persisted.insert(key_of(r));
  std::vector<std::pair<std::size_t, std::size_t>> pending;  // (method, item)
  for (std::size_t m = 0; m < config.methods.size(); ++m) {
    auto label = method_label(config.methods[m]);
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!persisted.count({label, items[i].id})) pending.emplace_back(m, i);
    }
  }
  const std::size_t pairs_total = config.methods.size() * items.size();
  {
    json manifest = manifest_json(config, started, nullptr, "running", done, pairs_total);
    if (!rejects.empty()) manifest["rejected_records"] = rejects;
    write_json(dir / kManifest, manifest);
  }

  RetryPolicy policy = build_policy(config);
  CallSink sink;
  std::mutex out_mu;
  std::ofstream out(dir / kRecords, std::ios::app | std::ios::binary);
  if (!out) throw DataError(DataError::Kind::kIo, "cannot append to " + (dir / kRecords).string());
  std::vector<AnswerRecord> fresh;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;

  auto worker = [&] {
    while (!stop.load()) {
      std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      auto [m, i] = pending[k];
      try {
        AnswerRecord rec = answer_item(items[i], config.methods[m], ctx, *backend, policy);
        sink.append(rec.calls);
        std::lock_guard lock(out_mu);
        out << json(rec).dump() << "\n";
        out.flush();
        fresh.push_back(std::move(rec));
      } catch (...) {
        std::lock_guard lock(out_mu);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    }
  };
  {
    std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), std::max<std::size_t>(pending.size(), 1));
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  out.close();
  if (failure) std::rethrow_exception(failure);

  RunSummary summary;
  summary.pairs_total = pairs_total;
  summary.executed = fresh.size();
  summary.skipped = done.size();
  summary.calls = sink.size();

  std::vector<AnswerRecord> all = std::move(done);
  all.insert(all.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
  sort_records(all);
  for (const auto& r : all) summary.unanswered += r.status == AnswerStatus::kUnanswered;

  write_outputs(config, all, items);
  json manifest = manifest_json(config, started, utc_now(), summary.unanswered ? "partial" : "complete", all,
                                pairs_total);
  if (!rejects.empty()) manifest["rejected_records"] = rejects;
  write_json(dir / kManifest, manifest);
  render_report(dir);
  return summary;
}

void score_run(const fs::path& run_dir) {
  json manifest = read_json(run_dir / kManifest);
  RunConfig config = RunConfig::from_json(manifest.at("config"));
  auto items = load_run_items(config);
  auto records = read_records(run_dir / kRecords);
  sort_records(records);
  write_json(run_dir / kScores, scores_json(config, records, items));
}

}  // namespace moma
