#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "moma/errors.h"
#include "moma/runner.h"
#include "moma/text_util.h"

namespace moma {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int decimals) {
  if (std::isnan(v)) return "n/a";
  double r = round_half_away(v, decimals);
  if (r == 0) r = 0;  // no "-0.000"
  return fmt::format("{:.{}f}", r, decimals);
}

std::string delta(double value, double reference) {
  if (std::isnan(value) || std::isnan(reference)) return "n/a";
  double d;
  try {
    d = delta_percent(value, reference);
  } catch (const MetricError&) {
    return "n/a";
  }
  double r = round_half_away(d, 1);
  if (r == 0) r = 0;
  return fmt::format("{:+.1f}", r);
}

double value_or_nan(const json& j, const char* key) {
  return j.contains(key) && !j[key].is_null() ? j[key].get<double>() : not_a_value();
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write " + path.string());
  out << body;
}

std::string bbq_report(const json& scores, const std::vector<std::string>& order, const std::string& ref,
                       std::string& csv) {
  const auto& methods = scores["methods"];
  bool has_ref = methods.contains(ref);
  double ref_bias = has_ref ? value_or_nan(methods[ref], "bias_headline") : not_a_value();
  double ref_acc = has_ref ? value_or_nan(methods[ref], "acc_disambig") : not_a_value();

  std::string md = "## BBQ\n\n";
  md += fmt::format("Bias score aggregate: {}. Deltas are relative to {}.\n\n", scores.value("headline", "mean"),
                    has_ref ? ref : ref + " (not in this run)");
  md += "| Method | Bias Score | Δ (%) | Acc | Δ (%) |\n|---|---|---|---|---|\n";
  std::vector<std::pair<std::string, ObjectiveVector>> points;
  std::vector<std::string> undefined;
  for (const auto& m : order) {
    const auto& s = methods[m];
    double bias = value_or_nan(s, "bias_headline");
    double acc = value_or_nan(s, "acc_disambig");
    std::string db = has_ref ? delta(bias, ref_bias) : "";
    std::string da = has_ref ? delta(acc, ref_acc) : "";
    md += fmt::format("| {} | {} | {} | {} | {} |\n", m, fixed(bias, 3), db, fixed(acc, 3), da);
    if (std::isnan(bias) || std::isnan(acc)) undefined.push_back(m);
    else points.emplace_back(m, bbq_objectives(acc, bias));
  }
  auto frontier = pareto_frontier(points);
  csv = "method,acc,bias,frontier\n";
  for (const auto& m : order) {
    const auto& s = methods[m];
    bool on = std::find(frontier.begin(), frontier.end(), m) != frontier.end();
    csv += fmt::format("{},{},{},{}\n", m, fixed(value_or_nan(s, "acc_disambig"), 6),
                       fixed(value_or_nan(s, "bias_headline"), 6), on ? 1 : 0);
  }

  md += "\n### Parse coverage\n\n| Method | Records | Unparsed rate |\n|---|---|---|\n";
  for (const auto& m : order) {
    const auto& s = methods[m];
    md += fmt::format("| {} | {} | {} |\n", m, s["counts"].value("records", 0), fixed(value_or_nan(s, "unparsed_rate"), 3));
  }
  md += "\n### Per-category breakdown\n\n";
  md += "| Method | Category | Bias (disambig) | Bias (ambig) | Acc (disambig) | Records |\n|---|---|---|---|---|---|\n";
  for (const auto& m : order) {
    for (const auto& [cat, c] : methods[m]["per_category"].items()) {
      md += fmt::format("| {} | {} | {} | {} | {} | {} |\n", m, cat, fixed(value_or_nan(c, "bias_disambig"), 3),
                        fixed(value_or_nan(c, "bias_ambig"), 3), fixed(value_or_nan(c, "acc_disambig"), 3),
                        c["counts"].value("records", 0));
    }
  }
  md += "\nPareto frontier (acc up, |bias| down): " + (frontier.empty() ? std::string("none") : text::join(frontier, ", ")) + "\n";
  if (!undefined.empty()) md += "Excluded from the frontier (undefined scores): " + text::join(undefined, ", ") + "\n";
  return md;
}

std::string stereo_report(const json& scores, const std::vector<std::string>& order, const std::string& ref,
                          std::string& csv) {
  const auto& methods = scores["methods"];
  bool has_ref = methods.contains(ref);
  double ref_icat = has_ref ? value_or_nan(methods[ref], "icat") : not_a_value();
  std::string md = "## StereoSet (" + scores.value("dataset", std::string("stereoset")) + ")\n\n";
  md += fmt::format("Deltas are relative to {}.\n\n", has_ref ? ref : ref + " (not in this run)");
  md += "| Method | ss | lms | icat | Δicat (%) |\n|---|---|---|---|---|\n";
  std::vector<std::pair<std::string, ObjectiveVector>> points;
  std::vector<std::string> undefined;
  for (const auto& m : order) {
    const auto& s = methods[m];
    double ss = value_or_nan(s, "ss");
    double lms = value_or_nan(s, "lms");
    double ic = value_or_nan(s, "icat");
    md += fmt::format("| {} | {} | {} | {} | {} |\n", m, fixed(ss, 2), fixed(lms, 2), fixed(ic, 2),
                      has_ref ? delta(ic, ref_icat) : "");
    if (std::isnan(ss) || std::isnan(lms)) undefined.push_back(m);
    else points.emplace_back(m, stereoset_objectives(lms, ss));
  }
  auto frontier = pareto_frontier(points);
  csv = "method,lms,ss,frontier\n";
  for (const auto& m : order) {
    const auto& s = methods[m];
    bool on = std::find(frontier.begin(), frontier.end(), m) != frontier.end();
    csv += fmt::format("{},{},{},{}\n", m, fixed(value_or_nan(s, "lms"), 6), fixed(value_or_nan(s, "ss"), 6), on ? 1 : 0);
  }
  md += "\n### Parse coverage\n\n| Method | Records | Unparsed rate |\n|---|---|---|\n";
  for (const auto& m : order) {
    const auto& s = methods[m];
    md += fmt::format("| {} | {} | {} |\n", m, s["counts"].value("records", 0), fixed(value_or_nan(s, "unparsed_rate"), 3));
  }
  md += "\n### Per-bias-type breakdown\n\n| Method | Bias type | ss | lms | icat | Records |\n|---|---|---|---|---|---|\n";
  for (const auto& m : order) {
    for (const auto& [type, c] : methods[m]["per_bias_type"].items()) {
      md += fmt::format("| {} | {} | {} | {} | {} | {} |\n", m, type, fixed(value_or_nan(c, "ss"), 2),
                        fixed(value_or_nan(c, "lms"), 2), fixed(value_or_nan(c, "icat"), 2),
                        c["counts"].value("records", 0));
    }
  }
  md += "\nPareto frontier (lms up, |ss - 50| down): " + (frontier.empty() ? std::string("none") : text::join(frontier, ", ")) + "\n";
  if (!undefined.empty()) md += "Excluded from the frontier (undefined scores): " + text::join(undefined, ", ") + "\n";
  return md;
}

}  // namespace

void render_report(const fs::path& run_dir, const std::string& reference) {
  fs::path scores_path = run_dir / "scores.json";
  if (!fs::exists(scores_path))
    throw MetricError(MetricError::Kind::kMissingScores, "no scores.json in " + run_dir.string());
  json scores;
  {
    std::ifstream in(scores_path);
    scores = json::parse(in);
  }
  std::string ref = reference.empty() ? "SP" : method_label(parse_method(reference));
  std::vector<std::string> order = scores.value("method_order", std::vector<std::string>{});
  if (order.empty()) {
    for (const auto& [m, _] : scores["methods"].items()) order.push_back(m);
  }
  std::string csv;
  std::string md = "# Run report\n\n";
  if (scores.value("dataset", std::string("bbq")) == "bbq") md += bbq_report(scores, order, ref, csv);
  else md += stereo_report(scores, order, ref, csv);

  fs::path costs_path = run_dir / "costs.json";
  if (fs::exists(costs_path)) {
    std::ifstream in(costs_path);
    md += "\n## Costs\n\n" + render_cost_table(cost_report_from_json(json::parse(in)));
  }
  write_text(run_dir / "report.md", md);
  write_text(run_dir / "pareto.csv", csv);
}

}  // namespace moma
