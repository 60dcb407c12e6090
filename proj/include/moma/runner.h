#pragma once

// Experiment orchestration: configuration, bounded-parallel execution with
// resume, and the run directory's output files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "moma/accounting.h"
#include "moma/core_types.h"
#include "moma/llm_backend.h"
#include "moma/metrics.h"

namespace moma {

enum class BackendChoice { kScripted, kLive };

struct RunConfig {
  Dataset dataset = Dataset::kBbq;
  // BBQ: directory of <Category>.jsonl. StereoSet: dev.json or its directory.
  std::filesystem::path data_dir;
  std::vector<std::string> categories;
  std::vector<MethodKind> methods;
  std::string profile = "gpt-3.5-turbo-0125";
  BackendChoice backend = BackendChoice::kScripted;
  std::filesystem::path script;
  std::optional<std::size_t> sample_n;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> shuffle_options;
  std::string mask_scheme = "letter";
  bool mask_options = false;
  BalancingStyle balancing_style = BalancingStyle::kBalancing;
  double sc_temperature = 0.7;
  int concurrency = 4;
  std::filesystem::path output_dir;
  // Prompts, ABP file, symbol lists and QA templates.
  std::filesystem::path assets_dir;
  std::filesystem::path abp_file;
  PriceTable prices;
  HeadlineAggregate headline = HeadlineAggregate::kMean;
  int retry_max_attempts = 3;
  std::int64_t retry_base_backoff_ms = 500;
  double retry_jitter = 0.2;
  std::filesystem::path record_script;

  // Keys given explicitly (file or CLI), for live-only option checks.
  std::set<std::string> explicit_keys;

  // Sets one key from its textual value. Throws ConfigError on unknown keys
  // or bad values.
  void set(const std::string& key, const std::string& value);
  // key = value lines; '#' starts a comment; values may be double-quoted.
  void apply_text(std::string_view text);
  void apply_file(const std::filesystem::path& path);

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  // Everything that affects outputs (excludes concurrency and output dir).
  json identity() const;
  json to_json() const;
  static RunConfig from_json(const json& j);

  // The documented defaults, in config-file syntax.
  static std::string defaults_text();
};

RunConfig default_run_config();

// Loads and samples the configured items (sampling, then option shuffling).
std::vector<QAItem> load_run_items(const RunConfig& config, std::vector<std::string>* reject_notes = nullptr);

struct RunSummary {
  std::size_t pairs_total = 0;
  std::size_t executed = 0;
  std::size_t skipped = 0;
  std::size_t unanswered = 0;
  // Logical calls issued by this invocation.
  std::size_t calls = 0;
};

// Executes every (method, item) pair not already persisted in the output
// directory. When `backend` is null, one is built from the config.
RunSummary run_experiment(const RunConfig& config, Backend* backend = nullptr);

// Recomputes scores.json from records.jsonl.
void score_run(const std::filesystem::path& run_dir);
// Writes report.md and pareto.csv from scores.json (and costs.json when
// present). Throws MetricError(kMissingScores) if scores.json is absent.
// An empty reference means SP.
void render_report(const std::filesystem::path& run_dir, const std::string& reference = "");

std::vector<AnswerRecord> read_records(const std::filesystem::path& path);

}  // namespace moma
