// moma: command-line entry point.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "moma/answer_parsing.h"
#include "moma/datasets.h"
#include "moma/errors.h"
#include "moma/prompts.h"
#include "moma/runner.h"
#include "moma/text_util.h"

namespace fs = std::filesystem;
using namespace moma;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kPartial = 4 };

int parse_corpus(const fs::path& path, bool verbose) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kIo, "cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0, total = 0, passed = 0, absent = 0, expected_absent = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json j = json::parse(line);
    auto options = j.at("options").get<std::vector<std::string>>();
    auto got = parse_choice(j.at("raw").get<std::string>(), std::span<const std::string>(options));
    std::optional<int> want;
    if (!j.at("expected").is_null()) want = j["expected"].get<int>();
    ++total;
    absent += !got.choice;
    expected_absent += !want;
    bool ok = got.choice == want;
    if (ok && j.contains("strategy") && got.strategy) ok = to_string(*got.strategy) == j["strategy"].get<std::string>();
    passed += ok;
    if (!ok || verbose) {
      fmt::print("{} line {}: expected {} got {} ({})\n", ok ? "ok  " : "FAIL", lineno,
                 want ? std::string(1, option_letter(*want)) : "none",
                 got.choice ? std::string(1, option_letter(*got.choice)) : "none", got.note);
    }
  }
  fmt::print("{}/{} cases passed; unparsed_rate {:.3f} ({} absent, {} expected)\n", passed, total,
             total ? static_cast<double>(absent) / total : 0.0, absent, expected_absent);
  return passed == total ? kOk : kOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent bias-mitigation experiment harness"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run (or resume) an experiment");
  std::string config_file;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> flags;
  run->add_option("-c,--config", config_file, "Config file (key = value)");
  run->add_option("--set", overrides, "Override a config key: key=value");
  for (auto [flag, key] : std::vector<std::pair<std::string, std::string>>{
           {"--dataset", "dataset"},          {"--data-dir", "data_dir"},
           {"--sample-n", "sample_n"},        {"--seed", "seed"},
           {"--shuffle-options", "shuffle_options"}, {"--methods", "methods"},
           {"--profile", "profile"},          {"--backend", "backend"},
           {"--script", "script"},            {"--concurrency", "concurrency"},
           {"--out", "output_dir"},           {"--abp-file", "abp_file"},
           {"--mask-scheme", "mask_scheme"},  {"--balancing-style", "balancing_style"},
           {"--record-script", "record_script"}, {"--assets-dir", "assets_dir"}}) {
    run->add_option(flag, flags[key], "Sets " + key);
  }

  auto* score = app.add_subcommand("score", "Recompute scores.json from records.jsonl");
  std::string run_dir;
  score->add_option("run_dir", run_dir)->required();

  auto* report = app.add_subcommand("report", "Render report.md and pareto.csv");
  std::string reference;
  report->add_option("run_dir", run_dir)->required();
  report->add_option("--reference", reference, "Reference method for deltas (default SP)");

  auto* costs = app.add_subcommand("costs", "Print the cost table of a run");
  costs->add_option("run_dir", run_dir)->required();

  auto* validate = app.add_subcommand("validate-data", "Load a dataset and report rejected records");
  std::string dataset = "bbq", data_dir;
  validate->add_option("--dataset", dataset);
  validate->add_option("--data-dir", data_dir)->required();

  auto* corpus = app.add_subcommand("parse-corpus", "Run the answer-parser regression corpus");
  std::string corpus_file;
  bool verbose = false;
  corpus->add_option("corpus", corpus_file)->required();
  corpus->add_flag("-v,--verbose", verbose);

  auto* config = app.add_subcommand("config", "Configuration helpers");
  bool print_defaults = false;
  config->add_flag("--print-defaults", print_defaults)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) {
      RunConfig cfg = default_run_config();
      if (!config_file.empty()) cfg.apply_file(config_file);
      // Keys that must be applied before methods are parsed.
      for (const char* early : {"balancing_style", "assets_dir"}) {
        if (!flags[early].empty()) cfg.set(early, flags[early]);
      }
      for (const auto& [key, value] : flags) {
        if (!value.empty() && key != "balancing_style" && key != "assets_dir") cfg.set(key, value);
      }
      for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(std::string(text::trim(kv.substr(0, eq))), kv.substr(eq + 1));
      }
      auto summary = run_experiment(cfg);
      fmt::print("{} pairs: {} executed, {} resumed, {} unanswered, {} logical calls\n", summary.pairs_total,
                 summary.executed, summary.skipped, summary.unanswered, summary.calls);
      fmt::print("outputs in {}\n", cfg.output_dir.string());
      return summary.unanswered ? kPartial : kOk;
    }
    if (*score) {
      score_run(run_dir);
      render_report(run_dir);
      return kOk;
    }
    if (*report) {
      render_report(run_dir, reference);
      std::cout << text::read_file((fs::path(run_dir) / "report.md").string());
      return kOk;
    }
    if (*costs) {
      std::ifstream in(fs::path(run_dir) / "costs.json");
      if (!in) throw DataError(DataError::Kind::kIo, "no costs.json in " + run_dir);
      std::cout << render_cost_table(cost_report_from_json(json::parse(in)));
      return kOk;
    }
    if (*validate) {
      Dataset ds = parse_dataset(dataset);
      LoadResult r;
      if (ds == Dataset::kBbq) {
        r = load_bbq(data_dir);
      } else {
        fs::path dev = data_dir;
        if (fs::is_directory(dev)) dev /= "dev.json";
        r = load_stereoset(dev, ds, QaTemplates::load(default_data_dir() / "qa_templates.json"));
      }
      std::map<std::string, std::size_t> per;
      for (const auto& it : r.items) per[ds == Dataset::kBbq ? it.meta.category : it.meta.bias_type]++;
      for (const auto& [k, n] : per) fmt::print("{}: {}\n", k, n);
      for (const auto& rej : r.rejects) fmt::print(stderr, "rejected {}:{}: {}\n", rej.file, rej.line, rej.reason);
      fmt::print("{} items accepted, {} rejected\n", r.items.size(), r.rejects.size());
      return r.rejects.empty() ? kOk : kData;
    }
    if (*corpus) return parse_corpus(corpus_file, verbose);
    if (*config) {
      std::cout << RunConfig::defaults_text();
      return kOk;
    }
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kOther;
  }
  return kOther;
}
