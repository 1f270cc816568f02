#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/dataio/manifest.hpp"

namespace stforge::cleaning {

inline constexpr const char* kReasonUnaligned = "unaligned-words";
inline constexpr const char* kReasonEmptyText = "empty-text";
inline constexpr const char* kReasonRatio = "ratio-out-of-range";

/// Forced-alignment outcome for one utterance.
struct AlignmentEntry {
  int n_words = 0;
  std::vector<int> unaligned;  // word indices in [0, n_words)
};

using AlignmentReport = std::map<std::string, AlignmentEntry>;

/// TSV: utt_id \t n_words \t comma-separated unaligned indices (may be empty).
AlignmentReport read_alignment_report(const std::filesystem::path& path);
void write_alignment_report(const std::filesystem::path& path, const AlignmentReport& report);

struct Removal {
  std::string utt_id;
  std::string reason;
};

struct CleaningReport {
  std::string filter;
  std::size_t input = 0;
  std::size_t removed = 0;
  std::size_t output = 0;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  std::vector<Removal> removals;

  /// {input, removed, output, params, removed_ids, reasons}; reasons[i] is the
  /// code for removed_ids[i].
  nlohmann::ordered_json to_json() const;
};

struct FilterResult {
  std::vector<CorpusInstance> kept;
  std::vector<CorpusInstance> removed;
  CleaningReport report;
};

/// Histogram over bins [k·w, (k+1)·w). The kept bins are [keep_lo_bin, keep_hi_bin].
struct RatioHistogram {
  double bin_width = 0.5;
  std::map<std::int64_t, std::size_t> counts;
  std::int64_t keep_lo_bin = 0;
  std::int64_t keep_hi_bin = 0;

  double keep_lo() const { return static_cast<double>(keep_lo_bin) * bin_width; }
  double keep_hi() const { return static_cast<double>(keep_hi_bin + 1) * bin_width; }
  std::int64_t bin_of(double ratio) const;
  bool keeps(double ratio) const;
  std::size_t total() const;
  nlohmann::ordered_json to_json() const;
};

struct RatioFilterResult : FilterResult {
  RatioHistogram histogram;
};

/// Frames per transcription character (all codepoints, spaces included).
/// Throws std::invalid_argument for an empty transcription.
double ratio(const CorpusInstance& instance);

/// Keeps an instance iff none of its transcription words is unaligned.
/// Every utterance must appear in the report.
FilterResult alignment_filter(std::span<const CorpusInstance> corpus, const AlignmentReport& report);

/// Builds the ratio histogram and keeps the contiguous run of bins around the
/// modal bin whose counts reach `min_bin_count`. Empty bins do not break the
/// run; the first occupied bin below the threshold on either side ends it.
RatioFilterResult ratio_filter(std::span<const CorpusInstance> corpus, double bin_width = 0.5,
                               std::size_t min_bin_count = 5000);

struct DevSplit {
  std::vector<CorpusInstance> train;
  std::vector<CorpusInstance> dev;
};

/// Uniformly samples `n_dev` instances for dev; both halves keep corpus order.
DevSplit split_dev(std::span<const CorpusInstance> corpus, std::size_t n_dev, std::uint64_t seed);

struct CascadeParams {
  double bin_width = 0.5;
  std::size_t min_bin_count = 5000;
  bool skip_alignment = false;
};

struct Lineage {
  std::vector<CorpusInstance> parallel;
  std::vector<CorpusInstance> clean1;
  std::vector<CorpusInstance> clean2;
  CleaningReport alignment_report;
  CleaningReport ratio_report;
  RatioHistogram histogram;
};

/// Parallel → alignment filter → Clean 1 → ratio filter → Clean 2. With
/// `out_dir`, writes manifests/{parallel,clean1,clean2}.tsv and
/// reports/{clean_align,clean_ratio}.json beneath it.
Lineage cascade(std::span<const CorpusInstance> corpus, const AlignmentReport* report, const CascadeParams& params,
                const std::filesystem::path* out_dir = nullptr);

}  // namespace stforge::cleaning
