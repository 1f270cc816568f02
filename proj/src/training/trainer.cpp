#include "stforge/training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace stforge {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

json EpochRecord::to_json() const {
  return json{{"epoch", epoch},
              {"train_loss", train_loss ? json(*train_loss) : json(nullptr)},
              {"dev_loss", dev_loss},
              {"dev_nll", dev_nll},
              {"lr", lr},
              {"wall_time", wall_time}};
}

namespace {

Tensor<float> frames_tensor(const Batch& batch, Index b) {
  const auto rows = batch.frames(b);
  std::vector<float> values(static_cast<std::size_t>(rows.size()));
  Eigen::Map<RowMatrix<float>>(values.data(), rows.rows(), rows.cols()) = rows;
  return Tensor<float>::from({rows.rows(), rows.cols()}, std::move(values));
}

std::optional<int> pad_of(const LossConfig& cfg) {
  return cfg.pad_excluded ? std::optional<int>(CharVocab::kPad) : std::nullopt;
}

}  // namespace

TokenLoss<float> instance_loss(const Seq2Seq<float>& model, const BoundWeights<float>& W, const Tensor<float>& frames,
                               Index valid_frames, std::span<const int> ids, const LossConfig& loss_cfg, bool train,
                               RngStream* rng) {
  const auto enc = model.encode(W, frames, valid_frames, train, rng);
  const auto logits = model.teacher_forced_logits(W, enc, ids, train, rng);
  return label_smoothed_xent_sum(logits, ids.subspan(1), loss_cfg, pad_of(loss_cfg));
}

EvalLoss evaluate_loss(const Seq2Seq<float>& model, const CharVocab& vocab, std::span<const CorpusInstance> corpus,
                       const LossConfig& loss_cfg, int batch_size) {
  NoGradGuard no_grad;
  LossConfig plain = loss_cfg;
  plain.label_smoothing = false;
  const auto W = model.bind();
  double loss = 0.0, nll = 0.0;
  Index tokens = 0;
  for (const auto& batch : make_batches(corpus, vocab, batch_size, 0)) {
    for (Index b = 0; b < batch.size(); ++b) {
      const auto frames = frames_tensor(batch, b);
      const auto ids = batch.target_ids(b);
      const auto enc = model.encode(W, frames, batch.feature_lengths[static_cast<std::size_t>(b)], false, nullptr);
      const auto logits = model.teacher_forced_logits(W, enc, ids, false, nullptr);
      const auto targets = std::span<const int>(ids).subspan(1);
      const auto smoothed = label_smoothed_xent_sum(logits, targets, loss_cfg, pad_of(loss_cfg));
      const auto raw = label_smoothed_xent_sum(logits, targets, plain, pad_of(loss_cfg));
      loss += smoothed.total.item();
      nll += raw.total.item();
      tokens += smoothed.tokens;
    }
  }
  if (tokens == 0) throw std::invalid_argument("evaluate_loss: empty corpus");
  return {loss / static_cast<double>(tokens), nll / static_cast<double>(tokens), tokens};
}

static void require_finite_dev(const EvalLoss& dev, int epoch) {
  if (!std::isfinite(dev.loss) || !std::isfinite(dev.nll)) {
    throw std::runtime_error("train: non-finite dev loss at epoch " + std::to_string(epoch));
  }
}

TrainResult train(Seq2Seq<float>& model, const CharVocab& vocab, std::span<const CorpusInstance> train_set,
                  std::span<const CorpusInstance> dev_set, const OptimizerConfig& opt_cfg, const LossConfig& loss_cfg,
                  const TrainConfig& cfg, const TrainIO& io) {
  cfg.validate();
  opt_cfg.validate();
  loss_cfg.validate();
  if (train_set.empty() || dev_set.empty()) {
    throw std::invalid_argument("train: training and dev sets must be non-empty");
  }
  if (model.vocab_size() != vocab.size()) {
    throw std::invalid_argument("train: model output size differs from the vocabulary size");
  }
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  std::ofstream log;
  if (!io.log_path.empty()) {
    log.open(io.log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open log " + io.log_path.string());
  }
  if (!io.checkpoint_dir.empty()) fs::create_directories(io.checkpoint_dir);

  TrainResult result;
  auto emit = [&](const EpochRecord& rec) {
    result.epochs.push_back(rec);
    if (log.is_open()) log << rec.to_json().dump() << '\n' << std::flush;
    if (io.on_epoch) io.on_epoch(rec);
  };

  AnnealState anneal;
  anneal.lr = opt_cfg.lr;
  const auto before = evaluate_loss(model, vocab, dev_set, loss_cfg, cfg.batch_size);
  require_finite_dev(before, 0);
  EpochRecord initial;
  initial.dev_loss = before.loss;
  initial.dev_nll = before.nll;
  initial.lr = anneal.lr;
  initial.wall_time = elapsed();
  emit(initial);

  auto optimizer = make_optimizer<float>(opt_cfg);
  const RngStream root(cfg.seed, 0x747261696eULL);
  double best = std::numeric_limits<double>::infinity();
  int streak = 0;
  const int allowed = std::max(cfg.patience, 1);
  result.stop_reason = "max_epochs";

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = anneal.lr;
    RngStream order = root.fork("batches").fork(static_cast<std::uint64_t>(epoch));
    RngStream drop = root.fork("dropout").fork(static_cast<std::uint64_t>(epoch));
    const auto batches = make_batches(train_set, vocab, cfg.batch_size, order.next_u64());
    double epoch_loss = 0.0;
    Index epoch_tokens = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      model.zero_grad();
      const auto W = model.bind();
      Tensor<float> total;
      Index tokens = 0;
      try {
        for (Index b = 0; b < batch.size(); ++b) {
          const auto ids = batch.target_ids(b);
          auto part = instance_loss(model, W, frames_tensor(batch, b),
                                    batch.feature_lengths[static_cast<std::size_t>(b)], ids, loss_cfg, true, &drop);
          tokens += part.tokens;
          total = total.defined() ? add(total, part.total) : part.total;
        }
      } catch (const std::domain_error& e) {
        throw std::runtime_error("train: non-finite values at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(bi) + " (" + e.what() + ")");
      }
      auto loss = scale(total, 1.0f / static_cast<float>(tokens));
      if (!std::isfinite(loss.item())) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(bi));
      }
      backward(loss);
      require_finite_grads(model.params());
      clip_grad_norm(model.params(), opt_cfg.clip_norm);
      optimizer->step(model.params(), lr);
      epoch_loss += static_cast<double>(total.item());
      epoch_tokens += tokens;
    }

    const auto dev = evaluate_loss(model, vocab, dev_set, loss_cfg, cfg.batch_size);
    require_finite_dev(dev, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
    rec.dev_loss = dev.loss;
    rec.dev_nll = dev.nll;
    rec.lr = lr;
    rec.improved = dev.loss < best;
    if (rec.improved) {
      best = dev.loss;
      result.best_epoch = epoch;
      streak = 0;
    } else {
      ++streak;
    }
    if (cfg.anneal) anneal_on_plateau(anneal, dev.loss);

    if (!io.checkpoint_dir.empty()) {
      CheckpointMeta meta;
      meta.epoch = epoch;
      meta.val_loss = dev.loss;
      meta.stage = cfg.stage;
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.stck", epoch);
      const auto path = io.checkpoint_dir / name;
      save_checkpoint(path, make_checkpoint(model, vocab, meta));
      result.checkpoints.push_back(path);
    }
    rec.wall_time = elapsed();
    emit(rec);
    if (streak >= allowed) {
      result.stop_reason = "patience";
      break;
    }
  }
  result.best_dev_loss = best;
  return result;
}

std::string to_string(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::kSamePolicy:
      return "same-policy";
    case FinetuneMode::kAdamAnneal:
      return "adam-anneal";
    case FinetuneMode::kNagAnneal:
      return "nag-anneal";
  }
  return "same-policy";
}

FinetuneMode finetune_mode_from_string(const std::string& name) {
  if (name == "same-policy") return FinetuneMode::kSamePolicy;
  if (name == "adam-anneal") return FinetuneMode::kAdamAnneal;
  if (name == "nag-anneal") return FinetuneMode::kNagAnneal;
  throw std::invalid_argument("finetune mode: expected same-policy, adam-anneal or nag-anneal, got '" + name + "'");
}

FinetuneResult finetune(const Checkpoint& ckpt, const CharVocab& vocab, std::span<const CorpusInstance> train_set,
                        std::span<const CorpusInstance> dev_set, FinetuneMode mode, OptimizerConfig opt_cfg,
                        const LossConfig& loss_cfg, TrainConfig cfg, const TrainIO& io) {
  check_compatible(ckpt, ckpt.config, vocab);
  switch (mode) {
    case FinetuneMode::kSamePolicy:
      opt_cfg.kind = OptimizerKind::kAdam;
      cfg.anneal = false;
      break;
    case FinetuneMode::kAdamAnneal:
      opt_cfg.kind = OptimizerKind::kAdam;
      cfg.anneal = true;
      break;
    case FinetuneMode::kNagAnneal:
      opt_cfg.kind = OptimizerKind::kNag;
      cfg.anneal = true;
      break;
  }
  FinetuneResult out{ckpt.model(), {}};
  out.result = train(out.model, vocab, train_set, dev_set, opt_cfg, loss_cfg, cfg, io);
  return out;
}

}  // namespace stforge
