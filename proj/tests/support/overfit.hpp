#pragma once

#include <cstdint>
#include <vector>

#include "stforge/dataio/synthetic.hpp"
#include "stforge/dataio/vocab.hpp"
#include "stforge/model/seq2seq.hpp"
#include "stforge/training/trainer.hpp"

namespace stforge::test {

struct OverfitSizes {
  Index dense1 = 32, dense2 = 16, enc_hidden = 32, dec_hidden = 64;
  int epochs = 120;
};

struct Overfit {
  std::vector<CorpusInstance> corpus;
  CharVocab vocab;
  Seq2Seq<float> model;
  TrainResult result;
};

/// Trains a small model on a 20-pair toy corpus of four-word targets used as its own dev set with
/// the default optimizer, clipping and smoothed loss, dropout off.
inline Overfit overfit_toy(const OverfitSizes& sizes = {}, std::uint64_t seed = 5) {
  ToyCorpusSpec spec;
  spec.count = 20;
  spec.seed = seed;
  spec.min_chars = 1;
  spec.max_chars = 2;
  spec.min_words = 4;
  spec.max_words = 4;
  auto corpus = make_toy_corpus(spec);
  auto vocab = build_vocab(corpus);
  ModelConfig m;
  m.dense1 = sizes.dense1;
  m.dense2 = sizes.dense2;
  m.conv_channels = 4;
  m.enc_hidden = sizes.enc_hidden;
  m.enc_layers = 1;
  m.char_emb_dim = 16;
  m.dec_hidden = sizes.dec_hidden;
  m.deep_output_dim = sizes.dec_hidden;
  m.dropout = 0.0;
  Seq2Seq<float> model(m, vocab.size(), 1);
  TrainConfig cfg;
  cfg.max_epochs = sizes.epochs;
  cfg.batch_size = 4;
  cfg.patience = sizes.epochs;
  auto result = train(model, vocab, corpus, corpus, OptimizerConfig{}, LossConfig{}, cfg);
  return {std::move(corpus), std::move(vocab), std::move(model), std::move(result)};
}

}  // namespace stforge::test
