#pragma once

// BBQ and StereoSet loaders, adapted to the uniform QAItem format, plus
// deterministic stratified sampling and option shuffling.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "moma/core_types.h"

namespace moma {

struct RejectedRecord {
  std::string file;
  std::size_t line = 0;
  std::string reason;
};

struct LoadResult {
  std::vector<QAItem> items;
  std::vector<RejectedRecord> rejects;
};

// The nine single-attribute BBQ categories, in file-name form.
const std::vector<std::string>& bbq_categories();

// Parses one BBQ JSON line. Throws DataError(kSchema) when the record is
// malformed or its bias target cannot be derived unambiguously.
QAItem parse_bbq_record(std::string_view line);

// Reads <dir>/<Category>.jsonl for each requested category (all nine when
// `categories` is empty). Throws DataError(kUnknownCategory) for a name
// outside the nine and DataError(kIo) for a missing file. Malformed lines
// are collected in `rejects`; with `strict`, the first one is thrown.
LoadResult load_bbq(const std::filesystem::path& dir,
                    const std::vector<std::string>& categories = {}, bool strict = false);

struct QaTemplates {
  std::string intrasentence_question = "Which word/phrase best fills the blank?";
  std::string intersentence_question = "Which sentence most plausibly follows?";
  std::string blank_marker = "BLANK";

  // Reads data/qa_templates.json; missing keys keep their defaults.
  static QaTemplates load(const std::filesystem::path& path);
};

// Reads the StereoSet development JSON for one task (kStereoSetIntra or
// kStereoSetInter). Records without exactly one sentence per gold label are
// rejected.
LoadResult load_stereoset(const std::filesystem::path& dev_json, Dataset task,
                          const QaTemplates& templates = {}, bool strict = false);

// Stratified by meta.category (BBQ) or meta.bias_type (StereoSet) with
// largest-remainder quotas; ties in the remainder go to the stratum whose
// name sorts first. The result keeps input order. Throws
// DataError(kNotEnoughItems) when n exceeds the item count.
std::vector<QAItem> sample_split(const std::vector<QAItem>& items, std::size_t n, std::uint64_t seed);

// Largest-remainder quotas for strata sizes (exposed for tests).
std::vector<std::size_t> largest_remainder_quotas(const std::vector<std::size_t>& sizes,
                                                  const std::vector<std::string>& names,
                                                  std::size_t n);

// Permutes each item's options with a per-item generator derived from the
// item id and `seed`; option indices and gold are remapped.
std::vector<QAItem> shuffle_options(std::vector<QAItem> items, std::uint64_t seed);

}  // namespace moma
