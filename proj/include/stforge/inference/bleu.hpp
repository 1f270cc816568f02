#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace stforge {

using Tokenizer = std::function<std::vector<std::string>(const std::string&)>;

std::vector<std::string> whitespace_tokenize(const std::string& text);

struct BleuScore {
  double bleu = 0.0;                    ///< 0..100
  std::array<double, 4> precisions{};   ///< clipped n-gram precisions, 0..100
  double brevity_penalty = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};

  nlohmann::ordered_json to_json() const;
};

/// Corpus-level BLEU-4 with one reference per hypothesis and an unsmoothed
/// geometric mean.
BleuScore corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                      const Tokenizer& tokenize = whitespace_tokenize);

}  // namespace stforge
