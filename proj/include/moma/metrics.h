#pragma once

// BBQ bias score and accuracy, StereoSet ss/lms/icat, percentage deltas and
// Pareto dominance.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moma/core_types.h"

namespace moma {

// Not-a-value sentinel for undefined scores (serialized as null).
double not_a_value();

struct BbqCounts {
  std::int64_t records = 0;
  std::int64_t unparsed = 0;
  std::int64_t disambig_parsed = 0;
  std::int64_t disambig_correct = 0;
  std::int64_t disambig_biased = 0;
  std::int64_t disambig_non_unknown = 0;
  std::int64_t ambig_parsed = 0;
  std::int64_t ambig_correct = 0;
  std::int64_t ambig_biased = 0;
  std::int64_t ambig_non_unknown = 0;

  bool operator==(const BbqCounts&) const = default;
};

enum class HeadlineAggregate { kMean, kAmbiguous, kDisambiguated };

struct BbqScores {
  double acc_disambig = 0;
  double acc_ambig = 0;
  double bias_disambig = 0;
  double bias_ambig = 0;
  double bias_headline = 0;
  double unparsed_rate = 0;
  BbqCounts counts;
  // "EmptyDenominator: ..." entries for every score set to not-a-value.
  std::vector<std::string> notes;
  std::map<std::string, BbqCounts> per_category;
};

// Derives scores from counts alone.
BbqScores bbq_scores_from_counts(const BbqCounts& counts,
                                 HeadlineAggregate headline = HeadlineAggregate::kMean);

// `records` must all reference items in `items` (std::invalid_argument
// otherwise). Unparsed records count towards unparsed_rate only.
BbqScores score_bbq(std::span<const AnswerRecord> records, std::span<const QAItem> items,
                    HeadlineAggregate headline = HeadlineAggregate::kMean);

struct StereoCounts {
  std::int64_t records = 0;
  std::int64_t unparsed = 0;
  std::int64_t stereotype = 0;
  std::int64_t anti_stereotype = 0;
  std::int64_t unrelated = 0;

  bool operator==(const StereoCounts&) const = default;
};

struct StereoScores {
  double ss = 0;
  double lms = 0;
  double icat = 0;
  double unparsed_rate = 0;
  StereoCounts counts;
  std::vector<std::string> notes;
  std::map<std::string, StereoCounts> per_bias_type;
};

double icat(double ss, double lms);
StereoScores stereo_scores_from_counts(const StereoCounts& counts);
StereoScores score_stereoset(std::span<const AnswerRecord> records, std::span<const QAItem> items);

// 100 * (value / reference - 1). Throws MetricError(kZeroReference).
double delta_percent(double value, double reference);
// Half away from zero at `decimals` places.
double round_half_away(double value, int decimals);

enum class Orientation { kMaximize, kMinimize, kTarget };

struct Objective {
  std::string name;
  double value = 0;
  Orientation orientation = Orientation::kMaximize;
  // Used by kTarget: smaller distance to the target is better.
  double target = 0;
};

struct ObjectiveVector {
  std::vector<Objective> objectives;
};

// Orientation-normalized value: larger is always better.
double utility(const Objective& o);

// Weakly better everywhere and strictly better somewhere. Throws
// MetricError(kObjectiveMismatch) when names or orientations differ.
bool pareto_dominates(const ObjectiveVector& a, const ObjectiveVector& b);

// Non-dominated labels in input order.
std::vector<std::string> pareto_frontier(
    std::span<const std::pair<std::string, ObjectiveVector>> points);

// (acc up, |bias| down) and (lms up, |ss - 50| down).
ObjectiveVector bbq_objectives(double acc, double bias);
ObjectiveVector stereoset_objectives(double lms, double ss);

json to_json(const BbqScores& s);
json to_json(const StereoScores& s);
BbqScores bbq_scores_from_json(const json& j);
StereoScores stereo_scores_from_json(const json& j);

}  // namespace moma
