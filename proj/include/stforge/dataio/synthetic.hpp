#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stforge/dataio/manifest.hpp"

namespace stforge {

/// Random toy corpus: uniform [-1, 1) features, short random targets over a
/// small alphabet, transcriptions sized for a frames/characters ratio near 5.
/// Targets hold min_words..max_words space-separated words of
/// min_chars..max_chars characters each.
struct ToyCorpusSpec {
  int count = 20;
  int min_frames = 12;
  int max_frames = 24;
  int min_chars = 3;
  int max_chars = 6;
  int min_words = 1;
  int max_words = 1;
  std::string alphabet = "abcdefgh";
  std::string id_prefix = "toy";
  std::uint64_t seed = 1;
};

std::vector<CorpusInstance> make_toy_corpus(const ToyCorpusSpec& spec);

}  // namespace stforge
