#include "stforge/inference/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace stforge {

std::vector<std::string> whitespace_tokenize(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

nlohmann::ordered_json BleuScore::to_json() const {
  return nlohmann::ordered_json{{"bleu", bleu},
                                {"precisions", precisions},
                                {"brevity_penalty", brevity_penalty},
                                {"hyp_len", hyp_len},
                                {"ref_len", ref_len}};
}

namespace {

using Counts = std::map<std::vector<std::string>, std::size_t>;

Counts ngrams(const std::vector<std::string>& toks, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++c[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                 toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return c;
}

}  // namespace

BleuScore corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                      const Tokenizer& tokenize) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                                std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");
  BleuScore s;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    const auto hyp = tokenize(hypotheses[k]);
    const auto ref = tokenize(references[k]);
    s.hyp_len += hyp.size();
    s.ref_len += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngrams(hyp, n);
      const auto r = ngrams(ref, n);
      for (const auto& [gram, count] : h) {
        const auto it = r.find(gram);
        if (it != r.end()) s.matches[n - 1] += std::min(count, it->second);
        s.totals[n - 1] += count;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = s.totals[n] ? static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]) : 0.0;
    s.precisions[n] = 100.0 * p;
    if (p == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  if (s.hyp_len == 0) {
    s.brevity_penalty = 0.0;
  } else if (s.hyp_len < s.ref_len) {
    s.brevity_penalty = std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
  } else {
    s.brevity_penalty = 1.0;
  }
  s.bleu = zero ? 0.0 : 100.0 * s.brevity_penalty * std::exp(log_sum / 4.0);
  return s;
}

}  // namespace stforge
