#pragma once

#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stforge/model/config.hpp"
#include "stforge/tensor/ops.hpp"
#include "stforge/tensor/rng.hpp"
#include "stforge/tensor/tensor.hpp"
#include "stforge/tensor/weight_norm.hpp"

namespace stforge {

template <typename Scalar>
using ParamMap = std::map<std::string, Tensor<Scalar>>;

/// Encoder states padded to `states.dim(0)` rows; `mask` flags the valid ones.
/// `keys_t` caches the attention projection (dec_hidden × T′).
template <typename Scalar>
struct EncoderOutput {
  Tensor<Scalar> states;
  Mask mask;
  Index valid = 0;
  Tensor<Scalar> keys_t;

  Index length() const { return states.dim(0); }
};

template <typename Scalar>
struct DecoderState {
  Tensor<Scalar> h_a, c_a;
  Tensor<Scalar> h_b, c_b;
  Tensor<Scalar> context;
};

template <typename Scalar>
struct AttentionResult {
  Tensor<Scalar> context;  // (1, d_enc)
  Tensor<Scalar> weights;  // (1, T′)
};

template <typename Scalar>
struct StepOutput {
  Tensor<Scalar> logits;  // (1, V)
  DecoderState<Scalar> state;
  Tensor<Scalar> attention;
};

/// One LSTM step. `x_proj` is the input projection plus bias, (1, 4h), with
/// gates laid out as [input, forget, candidate, output].
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> lstm_cell(const Tensor<Scalar>& x_proj, const Tensor<Scalar>& h,
                                                    const Tensor<Scalar>& c, const Tensor<Scalar>& w_hh_t) {
  const Index hidden = h.dim(1);
  const auto gates = add(x_proj, matmul(h, w_hh_t));
  const auto i = sigmoid(slice(gates, 1, 0, hidden));
  const auto f = sigmoid(slice(gates, 1, hidden, hidden));
  const auto g = tanh(slice(gates, 1, 2 * hidden, hidden));
  const auto o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  auto c_next = add(mul(f, c), mul(i, g));
  auto h_next = mul(o, tanh(c_next));
  return {std::move(h_next), std::move(c_next)};
}

/// Materialized weights for one graph: weight-normalized matrices are built
/// once and their transposes cached.
template <typename Scalar>
class BoundWeights {
 public:
  const Tensor<Scalar>& w(const std::string& name) const { return lookup(w_, name); }
  const Tensor<Scalar>& t(const std::string& name) const { return lookup(t_, name); }

  void put(const std::string& name, Tensor<Scalar> value, bool with_transpose) {
    if (with_transpose) t_[name] = transpose(value);
    w_[name] = std::move(value);
  }

 private:
  static const Tensor<Scalar>& lookup(const std::map<std::string, Tensor<Scalar>>& m, const std::string& name) {
    const auto it = m.find(name);
    if (it == m.end()) {
      throw std::out_of_range("model weight '" + name + "' is not bound");
    }
    return it->second;
  }

  std::map<std::string, Tensor<Scalar>> w_;
  std::map<std::string, Tensor<Scalar>> t_;
};

/// Stored parameter description.
struct ParamSpec {
  std::string name;
  Shape shape;
};

/// Logical weight before the weight-norm split.
struct WeightSpec {
  enum class Kind { kMatrix, kConv, kBias, kForgetBias, kEmbedding, kInitialState };
  std::string name;
  Shape shape;
  Kind kind;
  bool normalized = false;  ///< eligible for weight normalization
};

inline std::vector<WeightSpec> weight_layout(const ModelConfig& cfg, Index vocab) {
  using K = WeightSpec::Kind;
  std::vector<WeightSpec> out;
  auto matrix = [&](const std::string& name, Index rows, Index cols) {
    out.push_back({name + ".weight", {rows, cols}, K::kMatrix, true});
  };
  auto bias = [&](const std::string& name, Index n) { out.push_back({name + ".bias", {n}, K::kBias}); };
  const Index c = cfg.conv_channels, he = cfg.enc_hidden, hd = cfg.dec_hidden, denc = cfg.enc_state_dim();

  matrix("enc.dense1", cfg.dense1, cfg.feat_dim);
  bias("enc.dense1", cfg.dense1);
  matrix("enc.dense2", cfg.dense2, cfg.dense1);
  bias("enc.dense2", cfg.dense2);
  out.push_back({"enc.conv1.kernel", {c, 1, 3, 3}, K::kConv});
  bias("enc.conv1", c);
  out.push_back({"enc.conv2.kernel", {c, c, 3, 3}, K::kConv});
  bias("enc.conv2", c);
  for (Index l = 0; l < cfg.enc_layers; ++l) {
    const Index in = l == 0 ? cfg.conv_flat_width() : denc;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = "enc.lstm" + std::to_string(l) + "." + dir;
      out.push_back({p + ".w_ih", {4 * he, in}, K::kMatrix, true});
      out.push_back({p + ".w_hh", {4 * he, he}, K::kMatrix, true});
      out.push_back({p + ".bias", {4 * he}, K::kForgetBias});
      out.push_back({p + ".h0", {he}, K::kInitialState});
      out.push_back({p + ".c0", {he}, K::kInitialState});
    }
  }
  matrix("dec.init_h", hd, denc);
  bias("dec.init_h", hd);
  matrix("dec.init_c", hd, denc);
  bias("dec.init_c", hd);
  out.push_back({"dec.embed", {vocab, cfg.char_emb_dim}, K::kEmbedding});
  out.push_back({"dec.cell_a.w_ih", {4 * hd, cfg.char_emb_dim}, K::kMatrix, true});
  out.push_back({"dec.cell_a.w_hh", {4 * hd, hd}, K::kMatrix, true});
  out.push_back({"dec.cell_a.bias", {4 * hd}, K::kForgetBias});
  matrix("dec.attention", hd, denc);
  out.push_back({"dec.cell_b.w_ih", {4 * hd, denc}, K::kMatrix, true});
  out.push_back({"dec.cell_b.w_hh", {4 * hd, hd}, K::kMatrix, true});
  out.push_back({"dec.cell_b.bias", {4 * hd}, K::kForgetBias});
  matrix("dec.deep_output", cfg.deep_output_dim, hd + denc + cfg.char_emb_dim);
  bias("dec.deep_output", cfg.deep_output_dim);
  out.push_back({"dec.out_embed", {vocab, cfg.deep_output_dim}, K::kEmbedding});
  return out;
}

/// Names and shapes of the stored (trainable) tensors.
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg, Index vocab) {
  std::vector<ParamSpec> out;
  for (const auto& w : weight_layout(cfg, vocab)) {
    if (w.normalized && cfg.weight_norm) {
      out.push_back({w.name + ".v", w.shape});
      out.push_back({w.name + ".g", {w.shape[0]}});
    } else {
      out.push_back({w.name, w.shape});
    }
  }
  return out;
}

/// Convolutional + recurrent encoder with a deep-transition attentional decoder.
template <typename Scalar>
class Seq2Seq {
 public:
  /// Fresh model with seeded initialization.
  Seq2Seq(ModelConfig cfg, Index vocab_size, std::uint64_t seed) : cfg_(std::move(cfg)), vocab_(vocab_size) {
    check_setup();
    RngStream rng(seed, 0x696e6974ULL);
    for (const auto& spec : weight_layout(cfg_, vocab_)) {
      auto value = init_weight(spec, rng.fork(spec.name));
      if (spec.normalized && cfg_.weight_norm) {
        auto wn = WeightNormParam<Scalar>::from_weight(value);
        params_[spec.name + ".v"] = wn.v;
        params_[spec.name + ".g"] = wn.g;
      } else {
        value.set_requires_grad(true);
        params_[spec.name] = value;
      }
    }
  }

  /// Model over existing tensors; names and shapes must match the layout.
  Seq2Seq(ModelConfig cfg, Index vocab_size, ParamMap<Scalar> params)
      : cfg_(std::move(cfg)), vocab_(vocab_size), params_(std::move(params)) {
    check_setup();
    const auto layout = parameter_layout(cfg_, vocab_);
    for (const auto& spec : layout) {
      const auto it = params_.find(spec.name);
      if (it == params_.end()) {
        throw std::invalid_argument("model parameter '" + spec.name + "' missing");
      }
      if (it->second.shape() != spec.shape) {
        throw ShapeError("model parameter '" + spec.name + "' has shape " + shape_str(it->second.shape()) +
                         ", expected " + shape_str(spec.shape));
      }
      it->second.set_requires_grad(true);
    }
    if (params_.size() != layout.size()) {
      for (const auto& [name, t] : params_) {
        bool known = false;
        for (const auto& spec : layout) known = known || spec.name == name;
        if (!known) throw std::invalid_argument("unexpected model parameter '" + name + "'");
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  Index vocab_size() const { return vocab_; }
  ParamMap<Scalar>& params() { return params_; }
  const ParamMap<Scalar>& params() const { return params_; }

  template <typename Other>
  Seq2Seq<Other> cast() const {
    ParamMap<Other> out;
    for (const auto& [name, t] : params_) out[name] = t.template cast<Other>(true);
    return Seq2Seq<Other>(cfg_, vocab_, std::move(out));
  }

  /// Deep copy with independent tensors.
  Seq2Seq clone() const {
    ParamMap<Scalar> out;
    for (const auto& [name, t] : params_) out[name] = t.clone(true);
    return Seq2Seq(cfg_, vocab_, std::move(out));
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  BoundWeights<Scalar> bind() const {
    BoundWeights<Scalar> bound;
    for (const auto& spec : weight_layout(cfg_, vocab_)) {
      Tensor<Scalar> value;
      if (spec.normalized && cfg_.weight_norm) {
        value = weight_norm_materialize(params_.at(spec.name + ".v"), params_.at(spec.name + ".g"));
      } else {
        value = params_.at(spec.name);
      }
      const bool wants_t = spec.kind == WeightSpec::Kind::kMatrix || spec.name == "dec.out_embed";
      bound.put(spec.name, std::move(value), wants_t);
    }
    return bound;
  }

  /// Per-layer trained initial (h0, c0), forward direction first.
  std::vector<std::pair<Tensor<Scalar>, Tensor<Scalar>>> trained_initial_state() const {
    std::vector<std::pair<Tensor<Scalar>, Tensor<Scalar>>> out;
    for (Index l = 0; l < cfg_.enc_layers; ++l) {
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string p = "enc.lstm" + std::to_string(l) + "." + dir;
        out.emplace_back(params_.at(p + ".h0"), params_.at(p + ".c0"));
      }
    }
    return out;
  }

  /// Dense and convolutional front end: (valid_len, feat_dim) → (T′, conv_flat_width).
  Tensor<Scalar> conv_features(const BoundWeights<Scalar>& W, const Tensor<Scalar>& frames, Index valid_len,
                               bool train, RngStream* rng) const {
    if (frames.rank() != 2 || frames.dim(1) != cfg_.feat_dim) {
      throw ShapeError("encode: frames must be (n, " + std::to_string(cfg_.feat_dim) + "), got " +
                       shape_str(frames.shape()));
    }
    if (valid_len > frames.dim(0)) {
      throw std::invalid_argument("encode: valid length exceeds the frame count");
    }
    if (valid_len < 4) {
      throw std::invalid_argument("encode: sequence too short for x4 reduction (" + std::to_string(valid_len) +
                                  " frames)");
    }
    const double p = cfg_.dropout;
    auto x = valid_len == frames.dim(0) ? frames : slice(frames, 0, 0, valid_len);
    x = dropout(x, p, rng, train);
    x = dropout(tanh(linear(x, W.t("enc.dense1.weight"), W.w("enc.dense1.bias"))), p, rng, train);
    x = dropout(tanh(linear(x, W.t("enc.dense2.weight"), W.w("enc.dense2.bias"))), p, rng, train);

    auto grid = reshape(x, {1, valid_len, cfg_.dense2});
    grid = dropout(tanh(conv2d_s2(grid, W.w("enc.conv1.kernel"), W.w("enc.conv1.bias"))), p, rng, train);
    grid = dropout(tanh(conv2d_s2(grid, W.w("enc.conv2.kernel"), W.w("enc.conv2.bias"))), p, rng, train);
    // (C, T′, F′) → (T′, C·F′)
    return reshape(permute(grid, {1, 0, 2}), {grid.dim(1), grid.dim(0) * grid.dim(2)});
  }

  /// frames: (n_pad, feat_dim); only the first `valid_len` rows are read.
  EncoderOutput<Scalar> encode(const BoundWeights<Scalar>& W, const Tensor<Scalar>& frames, Index valid_len,
                               bool train, RngStream* rng) const {
    const double p = cfg_.dropout;
    auto seq = conv_features(W, frames, valid_len, train, rng);
    const Index steps = seq.dim(0);

    for (Index l = 0; l < cfg_.enc_layers; ++l) {
      const std::string layer = "enc.lstm" + std::to_string(l);
      auto fwd = run_direction(W, layer + ".fwd", seq, false);
      auto bwd = run_direction(W, layer + ".bwd", seq, true);
      seq = dropout(concat<Scalar>({fwd, bwd}, 1), p, rng, train);
    }

    EncoderOutput<Scalar> out;
    out.valid = steps;
    const Index padded = reduced_length(frames.dim(0));
    out.mask.assign(static_cast<std::size_t>(padded), 0);
    std::fill_n(out.mask.begin(), steps, 1);
    out.states = padded == steps
                     ? seq
                     : concat<Scalar>({seq, Tensor<Scalar>::zeros({padded - steps, cfg_.enc_state_dim()})}, 0);
    out.keys_t = transpose(matmul(out.states, W.t("dec.attention.weight")));
    return out;
  }

  DecoderState<Scalar> init_decoder(const BoundWeights<Scalar>& W, const EncoderOutput<Scalar>& enc) const {
    const auto m = mean_over_axis(enc.states, 0, &enc.mask);
    DecoderState<Scalar> s;
    s.h_b = tanh(linear(m, W.t("dec.init_h.weight"), W.w("dec.init_h.bias")));
    s.c_b = tanh(linear(m, W.t("dec.init_c.weight"), W.w("dec.init_c.bias")));
    s.h_a = s.h_b;
    s.c_a = s.c_b;
    s.context = Tensor<Scalar>::zeros({1, cfg_.enc_state_dim()});
    return s;
  }

  /// General score queryᵀ·W_a·enc_t over valid positions.
  AttentionResult<Scalar> attention(const Tensor<Scalar>& query, const EncoderOutput<Scalar>& enc) const {
    if (enc.valid == 0) {
      throw std::invalid_argument("attention: encoder output is entirely masked");
    }
    const auto scores = matmul(query, enc.keys_t);
    AttentionResult<Scalar> r;
    if (cfg_.attention_mode == AttentionMode::kSoftmax) {
      r.weights = softmax(scores, 1, &enc.mask);
    } else {
      std::vector<Scalar> m(enc.mask.begin(), enc.mask.end());
      r.weights = mul(sigmoid(scores), Tensor<Scalar>::from({1, enc.length()}, std::move(m)));
    }
    r.context = matmul(r.weights, enc.states);
    return r;
  }

  Tensor<Scalar> deep_output(const BoundWeights<Scalar>& W, const Tensor<Scalar>& h, const Tensor<Scalar>& context,
                             const Tensor<Scalar>& emb, bool train, RngStream* rng) const {
    auto z = tanh(linear(concat<Scalar>({h, context, emb}, 1), W.t("dec.deep_output.weight"),
                         W.w("dec.deep_output.bias")));
    z = dropout(z, cfg_.dropout, rng, train);
    return matmul(z, W.t("dec.out_embed"));
  }

  StepOutput<Scalar> decoder_step(const BoundWeights<Scalar>& W, int prev_id, const DecoderState<Scalar>& state,
                                  const EncoderOutput<Scalar>& enc, bool train, RngStream* rng) const {
    if (prev_id < 0 || prev_id >= vocab_) {
      throw std::out_of_range("decoder_step: symbol id " + std::to_string(prev_id) + " outside vocabulary of " +
                              std::to_string(vocab_));
    }
    const int ids[1] = {prev_id};
    auto emb = dropout(embedding_lookup(W.w("dec.embed"), std::span<const int>(ids)), cfg_.dropout, rng, train);
    return step_embedded(W, emb, state, enc, train, rng);
  }

  /// Logits (L−1, V) predicting ids[1..] from ids[..L−1] under teacher forcing.
  Tensor<Scalar> teacher_forced_logits(const BoundWeights<Scalar>& W, const EncoderOutput<Scalar>& enc,
                                       std::span<const int> ids, bool train, RngStream* rng) const {
    if (ids.size() < 2) {
      throw std::invalid_argument("teacher_forced_logits: need at least two symbols");
    }
    for (int id : ids) {
      if (id < 0 || id >= vocab_) {
        throw std::out_of_range("teacher_forced_logits: symbol id " + std::to_string(id) + " outside vocabulary");
      }
    }
    const auto inputs = ids.first(ids.size() - 1);
    auto embs = dropout(embedding_lookup(W.w("dec.embed"), inputs), cfg_.dropout, rng, train);
    auto state = init_decoder(W, enc);
    std::vector<Tensor<Scalar>> rows;
    rows.reserve(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      auto step = step_embedded(W, slice(embs, 0, static_cast<Index>(t), 1), state, enc, train, rng);
      rows.push_back(std::move(step.logits));
      state = std::move(step.state);
    }
    return concat<Scalar>(rows, 0);
  }

 private:
  void check_setup() const {
    cfg_.validate();
    if (vocab_ < 2) {
      throw std::invalid_argument("model: vocabulary needs at least 2 symbols");
    }
  }

  Tensor<Scalar> init_weight(const WeightSpec& spec, RngStream rng) const {
    using K = WeightSpec::Kind;
    std::vector<Scalar> values(static_cast<std::size_t>(shape_numel(spec.shape)), Scalar(0));
    auto uniform = [&](double bound) {
      for (auto& v : values) v = static_cast<Scalar>((2.0 * rng.uniform_double() - 1.0) * bound);
    };
    switch (spec.kind) {
      case K::kMatrix:
        uniform(std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1])));
        break;
      case K::kConv:
        uniform(std::sqrt(6.0 / static_cast<double>(9 * (spec.shape[0] + spec.shape[1]))));
        break;
      case K::kEmbedding:
        uniform(std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1])));
        break;
      case K::kForgetBias: {
        const auto hidden = static_cast<std::size_t>(spec.shape[0] / 4);
        std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(hidden), hidden, Scalar(1));
        break;
      }
      case K::kBias:
      case K::kInitialState:
        break;
    }
    return Tensor<Scalar>::from(spec.shape, std::move(values));
  }

  Tensor<Scalar> run_direction(const BoundWeights<Scalar>& W, const std::string& prefix, const Tensor<Scalar>& seq,
                               bool reverse) const {
    const Index steps = seq.dim(0);
    const Index hidden = cfg_.enc_hidden;
    const auto proj = linear(seq, W.t(prefix + ".w_ih"), W.w(prefix + ".bias"));
    const auto& w_hh_t = W.t(prefix + ".w_hh");
    auto h = reshape(W.w(prefix + ".h0"), {1, hidden});
    auto c = reshape(W.w(prefix + ".c0"), {1, hidden});
    std::vector<Tensor<Scalar>> outputs(static_cast<std::size_t>(steps));
    for (Index k = 0; k < steps; ++k) {
      const Index t = reverse ? steps - 1 - k : k;
      std::tie(h, c) = lstm_cell(slice(proj, 0, t, 1), h, c, w_hh_t);
      outputs[static_cast<std::size_t>(t)] = h;
    }
    return concat<Scalar>(outputs, 0);
  }

  StepOutput<Scalar> step_embedded(const BoundWeights<Scalar>& W, const Tensor<Scalar>& emb,
                                   const DecoderState<Scalar>& state, const EncoderOutput<Scalar>& enc, bool train,
                                   RngStream* rng) const {
    StepOutput<Scalar> out;
    auto& next = out.state;
    const auto xa = linear(emb, W.t("dec.cell_a.w_ih"), W.w("dec.cell_a.bias"));
    std::tie(next.h_a, next.c_a) = lstm_cell(xa, state.h_b, state.c_b, W.t("dec.cell_a.w_hh"));
    auto att = attention(next.h_a, enc);
    next.context = att.context;
    const auto xb = linear(att.context, W.t("dec.cell_b.w_ih"), W.w("dec.cell_b.bias"));
    std::tie(next.h_b, next.c_b) = lstm_cell(xb, next.h_a, next.c_a, W.t("dec.cell_b.w_hh"));
    out.logits = deep_output(W, next.h_b, att.context, emb, train, rng);
    out.attention = std::move(att.weights);
    return out;
  }

  ModelConfig cfg_;
  Index vocab_;
  ParamMap<Scalar> params_;
};

}  // namespace stforge
