#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/dataio/vocab.hpp"
#include "stforge/model/config.hpp"
#include "stforge/model/seq2seq.hpp"

namespace stforge {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  int epoch = 0;
  std::optional<double> val_loss;
  std::optional<double> val_bleu;
  std::string stage;
  std::vector<std::string> members;  ///< sources of an averaged checkpoint

  nlohmann::ordered_json to_json() const;
  static CheckpointMeta from_json(const nlohmann::json& j);
};

struct Checkpoint {
  ModelConfig config;
  CharVocab vocab;
  CheckpointMeta meta;
  ParamMap<float> params;

  /// Model over copies of the stored tensors.
  Seq2Seq<float> model() const;
};

/// Snapshot of the model's current parameter values.
Checkpoint make_checkpoint(const Seq2Seq<float>& model, const CharVocab& vocab, CheckpointMeta meta);

/// Layout: "STCK", u32 version, u64 header length, JSON header
/// {format, config, vocab{size, fingerprint, symbols}, meta, params[{name, shape, offset}]},
/// then float32 little-endian payloads in directory order (offsets in bytes).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError naming the first mismatch in vocabulary, config, or tensors.
void check_compatible(const Checkpoint& ckpt, const ModelConfig& config, const CharVocab& vocab);
void check_same_layout(const Checkpoint& a, const Checkpoint& b);

}  // namespace stforge
