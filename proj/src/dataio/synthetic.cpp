#include "stforge/dataio/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "stforge/tensor/rng.hpp"

namespace stforge {

std::vector<CorpusInstance> make_toy_corpus(const ToyCorpusSpec& spec) {
  if (spec.count < 1 || spec.min_frames < 1 || spec.max_frames < spec.min_frames || spec.min_chars < 1 ||
      spec.max_chars < spec.min_chars || spec.min_words < 1 || spec.max_words < spec.min_words ||
      spec.alphabet.empty() || spec.alphabet.find(' ') != std::string::npos) {
    throw std::invalid_argument("make_toy_corpus: inconsistent spec");
  }
  RngStream rng(spec.seed, 0x746f79ULL);
  std::vector<CorpusInstance> corpus;
  for (int i = 0; i < spec.count; ++i) {
    CorpusInstance inst;
    char id[64];
    std::snprintf(id, sizeof(id), "%s%04d", spec.id_prefix.c_str(), i);
    inst.utt_id = id;
    const int frames =
        spec.min_frames + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.max_frames - spec.min_frames + 1)));
    inst.features.utt_id = inst.utt_id;
    inst.features.frames.resize(frames, kFeatureDim);
    for (Eigen::Index k = 0; k < inst.features.frames.size(); ++k) {
      inst.features.frames.data()[k] = 2.0f * rng.uniform_float() - 1.0f;
    }
    const int words = spec.min_words == spec.max_words
                          ? spec.min_words
                          : spec.min_words + static_cast<int>(rng.uniform_index(
                                                 static_cast<std::uint64_t>(spec.max_words - spec.min_words + 1)));
    for (int w = 0; w < words; ++w) {
      if (w > 0) inst.translation.push_back(' ');
      const int chars = spec.min_chars + static_cast<int>(rng.uniform_index(
                                             static_cast<std::uint64_t>(spec.max_chars - spec.min_chars + 1)));
      for (int c = 0; c < chars; ++c) {
        inst.translation.push_back(spec.alphabet[rng.uniform_index(spec.alphabet.size())]);
      }
    }
    const int source_chars = std::max(1, frames / 5);
    for (int c = 0; c < source_chars; ++c) {
      inst.transcription.push_back(static_cast<char>('a' + rng.uniform_index(26)));
    }
    corpus.push_back(std::move(inst));
  }
  return corpus;
}

}  // namespace stforge
