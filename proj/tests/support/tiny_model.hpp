#pragma once

#include "stforge/model/config.hpp"
#include "stforge/model/seq2seq.hpp"
#include "stforge/tensor/rng.hpp"

namespace stforge::test {

inline ModelConfig tiny_config(bool weight_norm = true, AttentionMode mode = AttentionMode::kSoftmax) {
  ModelConfig c;
  c.dense1 = 6;
  c.dense2 = 5;
  c.conv_channels = 2;
  c.enc_hidden = 3;
  c.enc_layers = 2;
  c.char_emb_dim = 4;
  c.dec_hidden = 4;
  c.deep_output_dim = 5;
  c.attention_mode = mode;
  c.weight_norm = weight_norm;
  c.dropout = 0.0;
  return c;
}

template <typename Scalar>
Tensor<Scalar> random_frames(Index n, RngStream& rng, Index dim = 40) {
  std::vector<Scalar> v(static_cast<std::size_t>(n * dim));
  for (auto& x : v) x = static_cast<Scalar>(2.0 * rng.uniform_double() - 1.0);
  return Tensor<Scalar>::from({n, dim}, std::move(v));
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>>> named_params(Seq2Seq<Scalar>& model) {
  std::vector<std::pair<std::string, Tensor<Scalar>>> out;
  for (auto& [name, t] : model.params()) out.emplace_back(name, t);
  return out;
}

}  // namespace stforge::test
