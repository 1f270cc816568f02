#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/dataio/features.hpp"
#include "stforge/dataio/manifest.hpp"
#include "stforge/dataio/vocab.hpp"
#include "stforge/model/seq2seq.hpp"
#include "stforge/training/checkpoint.hpp"

namespace stforge {

struct DecodeConfig {
  int beam_size = 1;  ///< 1 is greedy
  double max_len_ratio = 1.5;
  int max_len_offset = 10;
  bool length_norm = false;

  /// floor(max_len_ratio · T′) + max_len_offset output symbols, EOS included.
  Index max_len(Index reduced_frames) const;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static DecodeConfig from_json(const nlohmann::json& j);
};

struct DecodeHypothesis {
  std::vector<int> ids;   ///< generated symbols, BOS excluded, EOS included when finished
  double log_prob = 0.0;  ///< sum of the ensemble's per-step log-probabilities
  double score = 0.0;     ///< log_prob, divided by ids.size() under length normalization
  bool finished = false;  ///< false: cut at the length bound
};

class EnsembleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Same fingerprint, vocabulary size and output width for every member;
/// throws EnsembleError listing the fingerprints otherwise.
void ensemble_compatibility(std::span<const Checkpoint> members);

struct Ensemble {
  std::vector<Seq2Seq<float>> models;
  CharVocab vocab;

  static Ensemble from_checkpoints(std::span<const Checkpoint> members);
  static Ensemble single(Seq2Seq<float> model, CharVocab vocab);
};

/// Per-utterance decoding state over all ensemble members.
class EnsembleStepper {
 public:
  using State = std::vector<DecoderState<float>>;

  EnsembleStepper(const Ensemble& ensemble, const Tensor<float>& frames, Index valid_frames);

  Index reduced_frames() const { return encodings_.front().valid; }
  State initial() const;
  /// Mean over members of log-softmax(logits) after feeding `prev`.
  std::vector<double> log_probs(int prev, const State& state, State& next) const;

 private:
  const Ensemble& ensemble_;
  std::vector<BoundWeights<float>> weights_;
  std::vector<EncoderOutput<float>> encodings_;
};

/// Step-wise argmax. Candidate symbols exclude PAD, BOS and UNK throughout.
DecodeHypothesis greedy_search(const EnsembleStepper& stepper, const DecodeConfig& cfg,
                               std::vector<std::vector<double>>* trace = nullptr);
/// Keeps the best `beam_size` partial hypotheses; a hypothesis leaves the
/// beam when it emits EOS and the beam narrows by one.
DecodeHypothesis beam_search(const EnsembleStepper& stepper, const DecodeConfig& cfg);

/// Greedy for beam_size 1, beam search otherwise. With `trace`, the averaged
/// distribution at every step of the returned hypothesis is recorded (greedy only).
DecodeHypothesis decode(const Ensemble& ensemble, const Tensor<float>& frames, Index valid_frames,
                        const DecodeConfig& cfg, std::vector<std::vector<double>>* trace = nullptr);

DecodeHypothesis decode(const Ensemble& ensemble, const FeatureMatrix& frames, const DecodeConfig& cfg);

/// One UTF-8 translation per instance, in input order.
std::vector<std::string> translate(const Ensemble& ensemble, std::span<const CorpusInstance> corpus,
                                   const DecodeConfig& cfg);

}  // namespace stforge
