#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/dataio/batch.hpp"
#include "stforge/dataio/manifest.hpp"
#include "stforge/dataio/vocab.hpp"
#include "stforge/model/seq2seq.hpp"
#include "stforge/training/checkpoint.hpp"
#include "stforge/training/loss.hpp"
#include "stforge/training/optim.hpp"

namespace stforge {

struct TrainConfig {
  int max_epochs = 100;
  int patience = 10;
  int batch_size = 16;
  std::uint64_t seed = 1;
  bool anneal = false;
  std::string stage = "P";

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;                     ///< 0 is the evaluation before any update
  std::optional<double> train_loss;  ///< token mean of the smoothed loss
  double dev_loss = 0.0;             ///< smoothed, teacher forced
  double dev_nll = 0.0;              ///< plain negative log-likelihood per token
  double lr = 0.0;
  double wall_time = 0.0;            ///< seconds since training began
  bool improved = false;

  nlohmann::ordered_json to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;  ///< epochs[0] is the initial evaluation
  std::vector<std::filesystem::path> checkpoints;
  int best_epoch = 0;
  double best_dev_loss = 0.0;
  std::string stop_reason;
};

struct TrainIO {
  std::filesystem::path checkpoint_dir;  ///< empty: no files
  std::filesystem::path log_path;        ///< empty: no log
  std::function<void(const EpochRecord&)> on_epoch;
};

struct EvalLoss {
  double loss = 0.0;
  double nll = 0.0;
  Index tokens = 0;
};

/// Teacher-forced smoothed loss of one instance, summed over its target tokens.
TokenLoss<float> instance_loss(const Seq2Seq<float>& model, const BoundWeights<float>& W, const Tensor<float>& frames,
                               Index valid_frames, std::span<const int> ids, const LossConfig& loss_cfg, bool train,
                               RngStream* rng);

/// Token-mean smoothed loss and NLL in eval mode.
EvalLoss evaluate_loss(const Seq2Seq<float>& model, const CharVocab& vocab, std::span<const CorpusInstance> corpus,
                       const LossConfig& loss_cfg, int batch_size = 16);

/// Epoch loop: seeded batch shuffle, forward/backward, clip, step, dev
/// evaluation, per-epoch checkpoint; stops once the dev loss has not improved
/// for max(patience, 1) consecutive epochs or at max_epochs.
TrainResult train(Seq2Seq<float>& model, const CharVocab& vocab, std::span<const CorpusInstance> train_set,
                  std::span<const CorpusInstance> dev_set, const OptimizerConfig& opt_cfg, const LossConfig& loss_cfg,
                  const TrainConfig& cfg, const TrainIO& io = {});

enum class FinetuneMode { kSamePolicy, kAdamAnneal, kNagAnneal };

std::string to_string(FinetuneMode mode);
FinetuneMode finetune_mode_from_string(const std::string& name);

struct FinetuneResult {
  Seq2Seq<float> model;
  TrainResult result;
};

/// Restarts training from `ckpt` with fresh optimizer state. `vocab` must
/// carry the checkpoint's fingerprint.
FinetuneResult finetune(const Checkpoint& ckpt, const CharVocab& vocab, std::span<const CorpusInstance> train_set,
                        std::span<const CorpusInstance> dev_set, FinetuneMode mode, OptimizerConfig opt_cfg,
                        const LossConfig& loss_cfg, TrainConfig cfg, const TrainIO& io = {});

}  // namespace stforge
