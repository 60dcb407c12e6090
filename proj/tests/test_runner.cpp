#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "moma/errors.h"
#include "moma/runner.h"
#include "moma/text_util.h"
#include "sim_agent.h"
#include "synthetic.h"

using namespace moma;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path root;
  fs::path data;
};

Workspace make_workspace(const std::string& tag, std::size_t n_records = 36) {
  Workspace w;
  w.root = moma::testing::fresh_temp_dir(tag);
  w.data = w.root / "bbq";
  moma::testing::write_bbq_dir(w.data, moma::testing::synthetic_bbq_records(n_records));
  return w;
}

RunConfig base_config(const Workspace& w, const std::string& methods, std::size_t n, const std::string& out) {
  RunConfig c = default_run_config();
  c.set("data_dir", w.data.string());
  c.set("methods", methods);
  c.set("sample_n", std::to_string(n));
  c.set("output_dir", (w.root / out).string());
  // An explicit backend is passed in; the path only has to be present.
  c.set("script", (w.root / "unused.jsonl").string());
  return c;
}

moma::testing::SimAgent make_sim() {
  return moma::testing::SimAgent(moma::testing::shipped_prompts(),
                                 {moma::testing::synthetic_identifiers(), false, false, false, false, {}});
}

std::size_t line_count(const fs::path& p) {
  auto body = text::read_file(p.string());
  return static_cast<std::size_t>(std::count(body.begin(), body.end(), '\n'));
}

std::vector<std::string> non_empty_lines(const fs::path& p) {
  std::vector<std::string> out;
  for (auto& l : text::split_lines(text::read_file(p.string())))
    if (!l.empty()) out.push_back(l);
  return out;
}

std::string digest(const fs::path& p) { return sha256_hex(text::read_file(p.string())); }

// Records a simulated run to a script file.
fs::path record_script(const Workspace& w, const std::string& methods, std::size_t n) {
  auto sim = make_sim();
  FunctionBackend inner(sim.responder());
  fs::path script = w.root / "script.jsonl";
  {
    RecordingBackend rec(inner, script);
    auto c = base_config(w, methods, n, "recording");
    c.concurrency = 1;
    run_experiment(c, &rec);
  }
  return script;
}

int run_cli(const std::string& args, const fs::path& log) {
  std::string cmd = std::string(MOMA_CLI) + " " + args + " > " + log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Runner, WritesOneRecordPerPairWithClosedFormCalls) {
  auto w = make_workspace("basic");
  auto sim = make_sim();
  FunctionBackend b(sim.responder());
  auto c = base_config(w, "SP, MOMA-Balancing", 4, "out");
  auto s = run_experiment(c, &b);
  EXPECT_EQ(s.pairs_total, 8u);
  EXPECT_EQ(s.executed, 8u);
  EXPECT_EQ(s.skipped, 0u);
  EXPECT_EQ(s.calls, 4u * 1 + 4u * 3);
  EXPECT_EQ(s.unanswered, 0u);
  EXPECT_EQ(line_count(c.output_dir / "records.jsonl"), 8u);
  for (const char* f : {"manifest.json", "scores.json", "costs.json", "report.md", "pareto.csv"})
    EXPECT_TRUE(fs::exists(c.output_dir / f)) << f;

  auto manifest = json::parse(text::read_file((c.output_dir / "manifest.json").string()));
  EXPECT_EQ(manifest["status"], "complete");
  EXPECT_EQ(manifest["pairs_completed"], 8);
  auto scores = json::parse(text::read_file((c.output_dir / "scores.json").string()));
  EXPECT_EQ(scores["method_order"], json::array({"SP", "MOMA-Balancing(Balancing)"}));
  EXPECT_EQ(scores["dataset"], "bbq");

  // Records come back sorted by (method label, item id).
  auto records = read_records(c.output_dir / "records.jsonl");
  for (std::size_t i = 1; i < records.size(); ++i) {
    auto a = std::make_pair(method_label(records[i - 1].method), records[i - 1].item_id);
    auto z = std::make_pair(method_label(records[i].method), records[i].item_id);
    EXPECT_LT(a, z);
  }
}

TEST(Runner, ResumeSkipsPersistedPairsAndDropsPartialLine) {
  auto w = make_workspace("resume");
  auto sim = make_sim();
  FunctionBackend b(sim.responder());
  auto full = base_config(w, "SP, CoT, MOMA-Masking", 4, "full");
  run_experiment(full, &b);

  // Interrupted copy: manifest plus the first 5 records and half of the 6th.
  auto part = base_config(w, "SP, CoT, MOMA-Masking", 4, "part");
  fs::create_directories(part.output_dir);
  fs::copy_file(full.output_dir / "manifest.json", part.output_dir / "manifest.json");
  auto lines = non_empty_lines(full.output_dir / "records.jsonl");
  ASSERT_EQ(lines.size(), 12u);
  std::size_t expected_calls = 0;
  {
    std::ofstream out(part.output_dir / "records.jsonl", std::ios::binary);
    for (std::size_t i = 0; i < 5; ++i) out << lines[i] << "\n";
    out << lines[5].substr(0, lines[5].size() / 2);
  }
  // Remaining pairs: closed form per method (SP 1, CoT 2, masking 2).
  for (std::size_t i = 5; i < lines.size(); ++i) {
    auto r = json::parse(lines[i]).get<AnswerRecord>();
    expected_calls += std::holds_alternative<method::Sp>(r.method) ? 1 : 2;
  }

  auto s = run_experiment(part, &b);
  EXPECT_EQ(s.skipped, 5u);
  EXPECT_EQ(s.executed, 7u);
  EXPECT_EQ(s.calls, expected_calls);
  EXPECT_EQ(digest(part.output_dir / "records.jsonl"), digest(full.output_dir / "records.jsonl"));
  EXPECT_EQ(digest(part.output_dir / "scores.json"), digest(full.output_dir / "scores.json"));

  // A second resume is a no-op.
  auto again = run_experiment(part, &b);
  EXPECT_EQ(again.executed, 0u);
  EXPECT_EQ(again.calls, 0u);
}

TEST(Runner, RefusesForeignOutputDirectories) {
  auto w = make_workspace("foreign");
  auto sim = make_sim();
  FunctionBackend b(sim.responder());
  auto c = base_config(w, "SP", 4, "out");
  run_experiment(c, &b);
  auto other = base_config(w, "SP", 5, "out");
  EXPECT_THROW(run_experiment(other, &b), ConfigError);

  auto junk = base_config(w, "SP", 4, "junk");
  fs::create_directories(junk.output_dir);
  std::ofstream(junk.output_dir / "notes.txt") << "x";
  EXPECT_THROW(run_experiment(junk, &b), ConfigError);
}

TEST(Runner, ScriptedReplayIsIdenticalAcrossConcurrency) {
  auto w = make_workspace("concurrency", 72);
  const std::string methods = "SP, CoT, SC(3), SoM(3,2), MOMA-Masking, MOMA-Balancing";
  auto script = record_script(w, methods, 12);
  std::string records, scores;
  for (int conc : {1, 4, 16}) {
    auto c = base_config(w, methods, 12, "c" + std::to_string(conc));
    c.set("script", script.string());
    c.concurrency = conc;
    auto s = run_experiment(c);
    EXPECT_EQ(s.unanswered, 0u);
    auto r = digest(c.output_dir / "records.jsonl");
    auto sc = digest(c.output_dir / "scores.json");
    if (records.empty()) {
      records = r;
      scores = sc;
    }
    EXPECT_EQ(r, records) << "concurrency " << conc;
    EXPECT_EQ(sc, scores) << "concurrency " << conc;
  }
}

TEST(Runner, ConfigErrorsSurfaceBeforeAnyCall) {
  auto w = make_workspace("config");
  RunConfig c = default_run_config();
  EXPECT_THROW(c.set("no_such_key", "1"), ConfigError);
  EXPECT_THROW(c.set("methods", "SC(4)"), ConfigError);
  EXPECT_THROW(c.set("concurrency", "many"), ConfigError);

  auto missing_n = base_config(w, "SP", 4, "o1");
  missing_n.sample_n.reset();
  EXPECT_THROW(missing_n.validate(), ConfigError);

  auto no_script = base_config(w, "SP", 4, "o2");
  no_script.script.clear();
  EXPECT_THROW(no_script.validate(), ConfigError);

  auto live_only = base_config(w, "SP", 4, "o3");
  live_only.set("retry_jitter", "0.5");
  EXPECT_THROW(live_only.validate(), ConfigError);

  auto dup = base_config(w, "SP, Baseline", 4, "o4");
  EXPECT_THROW(dup.validate(), ConfigError);

  int calls = 0;
  FunctionBackend counting([&](std::span<const ChatMessage>, const GenParams&) {
    ++calls;
    return std::string("(a)");
  });
  auto too_many = base_config(w, "SP", 1000, "o5");
  EXPECT_THROW(run_experiment(too_many, &counting), DataError);
  EXPECT_EQ(calls, 0);
}

TEST(Runner, ConfigTextRoundTrip) {
  RunConfig c = default_run_config();
  c.apply_text("# comment\nmethods = \"SP, SoM(3,2)\"\nsample_n = 7\nseed = 11\nconcurrency = 2\n");
  EXPECT_EQ(c.methods.size(), 2u);
  EXPECT_EQ(c.sample_n, 7u);
  EXPECT_EQ(c.seed, 11u);
  auto back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.identity(), c.identity());
  auto other = c;
  other.concurrency = 9;
  EXPECT_EQ(other.identity(), c.identity());
  other.seed = 12;
  EXPECT_NE(other.identity(), c.identity());

  RunConfig d = default_run_config();
  EXPECT_NO_THROW(d.apply_text(RunConfig::defaults_text()));
}

TEST(Runner, ScoreRunReproducesScores) {
  auto w = make_workspace("score");
  auto sim = make_sim();
  FunctionBackend b(sim.responder());
  auto c = base_config(w, "SP, ABP-1", 9, "out");
  run_experiment(c, &b);
  auto before = digest(c.output_dir / "scores.json");
  fs::remove(c.output_dir / "scores.json");
  score_run(c.output_dir);
  EXPECT_EQ(digest(c.output_dir / "scores.json"), before);
}

TEST(Runner, ReportHasHeadlineTableAndParetoFile) {
  auto w = make_workspace("report");
  auto sim = make_sim();
  FunctionBackend b(sim.responder());
  auto c = base_config(w, "SP, CoT, MOMA-Balancing", 9, "out");
  run_experiment(c, &b);
  auto md = text::read_file((c.output_dir / "report.md").string());
  EXPECT_NE(md.find("| Method | Bias Score | Δ (%) | Acc | Δ (%) |"), std::string::npos);
  EXPECT_NE(md.find("| SP |"), std::string::npos);
  auto csv = non_empty_lines(c.output_dir / "pareto.csv");
  ASSERT_EQ(csv.size(), 4u);
  EXPECT_EQ(csv[0], "method,acc,bias,frontier");

  fs::remove(c.output_dir / "scores.json");
  try {
    render_report(c.output_dir);
    ADD_FAILURE() << "expected MetricError";
  } catch (const MetricError&) {
  }
}

TEST(Runner, UnansweredPairsMarkRunPartial) {
  auto w = make_workspace("partial");
  FunctionBackend failing([](std::span<const ChatMessage>, const GenParams&) -> std::string {
    throw BackendError(BackendError::Kind::kHttpError, "HTTP 400", 400);
  });
  auto c = base_config(w, "SP", 3, "out");
  auto s = run_experiment(c, &failing);
  EXPECT_EQ(s.unanswered, 3u);
  auto manifest = json::parse(text::read_file((c.output_dir / "manifest.json").string()));
  EXPECT_EQ(manifest["status"], "partial");
}

TEST(Cli, ExitCodesAndSubcommands) {
  auto w = make_workspace("cli");
  auto log = w.root / "log.txt";
  auto script = record_script(w, "SP, MOMA-Masking", 4);
  std::string common = "--data-dir " + w.data.string() + " --methods 'SP, MOMA-Masking' --script " + script.string();

  EXPECT_EQ(run_cli("run " + common + " --sample-n 4 --out " + (w.root / "ok").string(), log), 0) << text::read_file(log.string());
  EXPECT_NE(text::read_file(log.string()).find("8 pairs: 8 executed"), std::string::npos);
  EXPECT_EQ(run_cli("score " + (w.root / "ok").string(), log), 0);
  EXPECT_EQ(run_cli("report " + (w.root / "ok").string(), log), 0);
  EXPECT_EQ(run_cli("costs " + (w.root / "ok").string(), log), 0);

  EXPECT_EQ(run_cli("run " + common + " --sample-n 4 --set bogus=1 --out " + (w.root / "bad").string(), log), 2);
  EXPECT_EQ(run_cli("run --data-dir " + w.data.string() + " --methods SP --out " + (w.root / "bad2").string(), log), 2);
  EXPECT_EQ(run_cli("run " + common + " --sample-n 4000 --out " + (w.root / "bad3").string(), log), 3);

  // A script with every entry removed gives unanswered pairs.
  auto empty = w.root / "empty.jsonl";
  std::ofstream(empty) << "{\"seq\": 0, \"error\": \"http_error\", \"status\": 400, \"response\": \"\", \"note\": \"x\"}\n";
  EXPECT_EQ(run_cli("run --data-dir " + w.data.string() + " --sample-n 2 --methods SP --script " + empty.string() +
                        " --out " + (w.root / "partial").string(),
                    log),
            4)
      << text::read_file(log.string());

  EXPECT_EQ(run_cli("config --print-defaults", log), 0);
  EXPECT_NE(text::read_file(log.string()).find("concurrency"), std::string::npos);
  EXPECT_EQ(run_cli("validate-data --data-dir " + w.data.string(), log), 0);
  EXPECT_EQ(run_cli("validate-data --data-dir " + std::string(MOMA_TEST_DATA) + "/bbq", log), 3);
  EXPECT_EQ(run_cli("parse-corpus " + std::string(MOMA_TEST_DATA) + "/parse_corpus.jsonl", log), 0)
      << text::read_file(log.string());
  EXPECT_NE(text::read_file(log.string()).find("50/50 cases passed"), std::string::npos);
}
