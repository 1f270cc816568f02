#pragma once

#include <span>

#include "json.hpp"
#include "stforge/dataio/manifest.hpp"
#include "stforge/inference/decode.hpp"
#include "stforge/training/checkpoint.hpp"
#include "stforge/training/loss.hpp"

namespace stforge {

struct CheckpointEval {
  double dev_loss = 0.0;
  double dev_bleu = 0.0;

  nlohmann::ordered_json to_json() const;
};

/// Teacher-forced smoothed dev loss plus BLEU of decoded dev translations.
CheckpointEval evaluate_checkpoint(const Checkpoint& ckpt, std::span<const CorpusInstance> dev_set,
                                   const DecodeConfig& decode_cfg, const LossConfig& loss_cfg = {});

}  // namespace stforge
