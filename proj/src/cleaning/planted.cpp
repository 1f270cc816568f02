#include "stforge/cleaning/planted.hpp"

#include <cstdio>
#include <sstream>

#include "stforge/tensor/rng.hpp"

namespace stforge::cleaning {

PlantedCorpus make_planted_corpus(std::uint64_t seed) {
  PlantedCorpus planted;
  RngStream rng(seed, 0x706c616eULL);
  const std::string transcription = "abcd efgh ijkl mnopq";
  for (int i = 0; i < 60; ++i) {
    char id[8];
    std::snprintf(id, sizeof(id), "p%02d", i);
    double ratio = 4.0 + 0.05 * (i % 40);
    if (i >= 10 && i < 14) ratio = 1.0 + 0.1 * (i - 10);
    if (i >= 14 && i < 18) ratio = 12.0 + 0.1 * (i - 14);
    const int frames = static_cast<int>(ratio * 20.0 + 0.5);
    CorpusInstance inst;
    inst.utt_id = id;
    inst.features.utt_id = id;
    inst.features.frames.resize(frames, kFeatureDim);
    for (Eigen::Index k = 0; k < inst.features.frames.size(); ++k) {
      inst.features.frames.data()[k] = rng.uniform_float();
    }
    inst.transcription = transcription;
    inst.translation = "ziel " + std::to_string(i);
    AlignmentEntry entry;
    entry.n_words = 4;
    if (i < 10) {
      entry.unaligned = {i % 4};
      planted.alignment_failures.insert(id);
    } else if (i < 18) {
      planted.ratio_outliers.insert(id);
    }
    planted.report[id] = entry;
    planted.corpus.push_back(std::move(inst));
  }
  return planted;
}


AlignmentReport aligned_report(std::span<const CorpusInstance> corpus) {
  AlignmentReport report;
  for (const auto& inst : corpus) {
    std::istringstream words(inst.transcription);
    int n = 0;
    for (std::string w; words >> w;) ++n;
    report[inst.utt_id] = AlignmentEntry{n, {}};
  }
  return report;
}

}  // namespace stforge::cleaning
