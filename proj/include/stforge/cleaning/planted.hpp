#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stforge/cleaning/cleaning.hpp"

namespace stforge::cleaning {

/// 60 instances with 20-character transcriptions (4 words, spaces counted):
///   p00-p09  one unaligned word, ratio in the normal band
///   p10-p13  fully aligned, ratio ~1.0-1.3 (a sparse low bin)
///   p14-p17  fully aligned, ratio ~12.0-12.3 (a sparse high bin)
///   p18-p59  fully aligned, ratio 4.0-5.95 spread over four dense bins
/// With bin width 0.5 and min_bin_count 5 the low and high bins hold 4 items each.
struct PlantedCorpus {
  std::vector<CorpusInstance> corpus;
  AlignmentReport report;
  std::set<std::string> alignment_failures;
  std::set<std::string> ratio_outliers;
};

PlantedCorpus make_planted_corpus(std::uint64_t seed = 7);

/// All-aligned report for a corpus; word counts from whitespace splitting.
AlignmentReport aligned_report(std::span<const CorpusInstance> corpus);

}  // namespace stforge::cleaning
