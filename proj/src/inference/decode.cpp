#include "stforge/inference/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stforge/util/json_fields.hpp"

namespace stforge {

using json = nlohmann::ordered_json;
using util::ConfigError;

Index DecodeConfig::max_len(Index reduced_frames) const {
  return static_cast<Index>(std::floor(max_len_ratio * static_cast<double>(reduced_frames))) + max_len_offset;
}

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigError("decode: beam_size must be >= 1");
  if (!(max_len_ratio >= 0.0) || max_len_offset < 1) {
    throw ConfigError("decode: need max_len_ratio >= 0 and max_len_offset >= 1");
  }
}

json DecodeConfig::to_json() const {
  return json{{"beam_size", beam_size},
              {"max_len_ratio", max_len_ratio},
              {"max_len_offset", max_len_offset},
              {"length_norm", length_norm}};
}

DecodeConfig DecodeConfig::from_json(const nlohmann::json& j) {
  util::require_known_keys(j, {"beam_size", "max_len_ratio", "max_len_offset", "length_norm"}, "decode");
  DecodeConfig c;
  util::read_field(j, "beam_size", c.beam_size, "decode");
  util::read_field(j, "max_len_ratio", c.max_len_ratio, "decode");
  util::read_field(j, "max_len_offset", c.max_len_offset, "decode");
  util::read_field(j, "length_norm", c.length_norm, "decode");
  c.validate();
  return c;
}

namespace {

Index output_width(const Checkpoint& c) {
  const auto it = c.params.find("dec.out_embed");
  return it == c.params.end() ? -1 : it->second.dim(0);
}

}  // namespace

void ensemble_compatibility(std::span<const Checkpoint> members) {
  if (members.empty()) throw EnsembleError("ensemble: no members");
  const auto& first = members.front();
  for (std::size_t k = 1; k < members.size(); ++k) {
    const auto& m = members[k];
    const bool same = m.vocab.fingerprint() == first.vocab.fingerprint() && m.vocab.size() == first.vocab.size() &&
                      output_width(m) == output_width(first) && output_width(m) == m.vocab.size();
    if (!same) {
      std::string list;
      for (std::size_t i = 0; i < members.size(); ++i) {
        list += (i ? ", " : "") + std::to_string(i) + ":" + members[i].vocab.fingerprint();
      }
      throw EnsembleError("ensemble: member " + std::to_string(k) + " has a different vocabulary (fingerprints " +
                          list + ")");
    }
  }
}

Ensemble Ensemble::from_checkpoints(std::span<const Checkpoint> members) {
  ensemble_compatibility(members);
  Ensemble e;
  e.vocab = members.front().vocab;
  for (const auto& m : members) e.models.push_back(m.model());
  return e;
}

Ensemble Ensemble::single(Seq2Seq<float> model, CharVocab vocab) {
  if (model.vocab_size() != vocab.size()) {
    throw EnsembleError("ensemble: model output size differs from the vocabulary size");
  }
  Ensemble e;
  e.models.push_back(std::move(model));
  e.vocab = std::move(vocab);
  return e;
}

EnsembleStepper::EnsembleStepper(const Ensemble& ensemble, const Tensor<float>& frames, Index valid_frames)
    : ensemble_(ensemble) {
  if (ensemble.models.empty()) throw EnsembleError("decode: empty ensemble");
  NoGradGuard no_grad;
  for (const auto& model : ensemble.models) {
    weights_.push_back(model.bind());
    encodings_.push_back(model.encode(weights_.back(), frames, valid_frames, false, nullptr));
  }
}

EnsembleStepper::State EnsembleStepper::initial() const {
  NoGradGuard no_grad;
  State s;
  for (std::size_t m = 0; m < encodings_.size(); ++m) {
    s.push_back(ensemble_.models[m].init_decoder(weights_[m], encodings_[m]));
  }
  return s;
}

std::vector<double> EnsembleStepper::log_probs(int prev, const State& state, State& next) const {
  NoGradGuard no_grad;
  const auto v = static_cast<std::size_t>(ensemble_.vocab.size());
  std::vector<double> mean(v, 0.0);
  next.clear();
  for (std::size_t m = 0; m < encodings_.size(); ++m) {
    auto step = ensemble_.models[m].decoder_step(weights_[m], prev, state[m], encodings_[m], false, nullptr);
    const auto lp = log_softmax(step.logits, 1);
    for (std::size_t i = 0; i < v; ++i) mean[i] += static_cast<double>(lp[static_cast<Index>(i)]);
    next.push_back(std::move(step.state));
  }
  const double n = static_cast<double>(encodings_.size());
  for (auto& x : mean) x /= n;
  return mean;
}

namespace {

bool selectable(int id) { return id != CharVocab::kPad && id != CharVocab::kBos && id != CharVocab::kUnk; }

struct Partial {
  std::vector<int> ids;
  double log_prob = 0.0;
  EnsembleStepper::State state;
};

double final_score(double log_prob, std::size_t length, bool norm) {
  return norm && length > 0 ? log_prob / static_cast<double>(length) : log_prob;
}

}  // namespace

DecodeHypothesis greedy_search(const EnsembleStepper& stepper, const DecodeConfig& cfg,
                               std::vector<std::vector<double>>* trace) {
  cfg.validate();
  const Index max_len = cfg.max_len(stepper.reduced_frames());
  const bool norm = cfg.length_norm;
  DecodeHypothesis h;
  auto state = stepper.initial();
  EnsembleStepper::State next;
  int prev = CharVocab::kBos;
  while (static_cast<Index>(h.ids.size()) < max_len) {
    const auto lp = stepper.log_probs(prev, state, next);
    if (trace) trace->push_back(lp);
    int best = -1;
    for (int i = 0; i < static_cast<int>(lp.size()); ++i) {
      if (selectable(i) && (best < 0 || lp[static_cast<std::size_t>(i)] > lp[static_cast<std::size_t>(best)])) best = i;
    }
    h.ids.push_back(best);
    h.log_prob += lp[static_cast<std::size_t>(best)];
    state.swap(next);
    prev = best;
    if (best == CharVocab::kEos) {
      h.finished = true;
      break;
    }
  }
  h.score = final_score(h.log_prob, h.ids.size(), norm);
  return h;
}

DecodeHypothesis beam_search(const EnsembleStepper& stepper, const DecodeConfig& cfg) {
  cfg.validate();
  const Index max_len = cfg.max_len(stepper.reduced_frames());
  const int beam_size = cfg.beam_size;
  const bool norm = cfg.length_norm;
  struct Candidate {
    std::size_t parent;
    int id;
    double log_prob;
  };
  std::vector<Partial> live(1);
  live[0].state = stepper.initial();
  std::vector<DecodeHypothesis> done;
  std::vector<EnsembleStepper::State> next_states;

  for (Index len = 0; len < max_len && !live.empty() && static_cast<int>(done.size()) < beam_size; ++len) {
    std::vector<Candidate> cands;
    next_states.assign(live.size(), {});
    for (std::size_t p = 0; p < live.size(); ++p) {
      const int prev = live[p].ids.empty() ? CharVocab::kBos : live[p].ids.back();
      const auto lp = stepper.log_probs(prev, live[p].state, next_states[p]);
      for (int i = 0; i < static_cast<int>(lp.size()); ++i) {
        if (selectable(i)) cands.push_back({p, i, live[p].log_prob + lp[static_cast<std::size_t>(i)]});
      }
    }
    const auto keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(beam_size) - done.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.id < b.id;
                      });
    std::vector<Partial> grown;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = cands[k];
      auto ids = live[c.parent].ids;
      ids.push_back(c.id);
      if (c.id == CharVocab::kEos) {
        DecodeHypothesis h{std::move(ids), c.log_prob, 0.0, true};
        h.score = final_score(h.log_prob, h.ids.size(), norm);
        done.push_back(std::move(h));
      } else {
        grown.push_back({std::move(ids), c.log_prob, next_states[c.parent]});
      }
    }
    live = std::move(grown);
  }
  for (auto& p : live) {
    DecodeHypothesis h{std::move(p.ids), p.log_prob, 0.0, false};
    h.score = final_score(h.log_prob, h.ids.size(), norm);
    done.push_back(std::move(h));
  }
  // finished hypotheses win ties against truncated ones; earlier entries win otherwise
  std::stable_sort(done.begin(), done.end(), [](const DecodeHypothesis& a, const DecodeHypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.finished && !b.finished;
  });
  return done.front();
}

DecodeHypothesis decode(const Ensemble& ensemble, const Tensor<float>& frames, Index valid_frames,
                        const DecodeConfig& cfg, std::vector<std::vector<double>>* trace) {
  cfg.validate();
  const EnsembleStepper stepper(ensemble, frames, valid_frames);
  if (cfg.beam_size == 1) return greedy_search(stepper, cfg, trace);
  if (trace) throw std::invalid_argument("decode: step traces are only recorded for greedy search");
  return beam_search(stepper, cfg);
}

DecodeHypothesis decode(const Ensemble& ensemble, const FeatureMatrix& frames, const DecodeConfig& cfg) {
  return decode(ensemble, Tensor<float>::matrix(frames), frames.rows(), cfg);
}

std::vector<std::string> translate(const Ensemble& ensemble, std::span<const CorpusInstance> corpus,
                                   const DecodeConfig& cfg) {
  std::vector<std::string> out;
  out.reserve(corpus.size());
  for (const auto& inst : corpus) {
    const auto h = decode(ensemble, inst.features.frames, cfg);
    out.push_back(ensemble.vocab.decode(h.ids));
  }
  return out;
}

}  // namespace stforge
