#include "stforge/inference/evaluate.hpp"

#include "stforge/inference/bleu.hpp"
#include "stforge/training/trainer.hpp"

namespace stforge {

nlohmann::ordered_json CheckpointEval::to_json() const {
  return nlohmann::ordered_json{{"dev_loss", dev_loss}, {"dev_bleu", dev_bleu}};
}

CheckpointEval evaluate_checkpoint(const Checkpoint& ckpt, std::span<const CorpusInstance> dev_set,
                                   const DecodeConfig& decode_cfg, const LossConfig& loss_cfg) {
  auto ensemble = Ensemble::single(ckpt.model(), ckpt.vocab);
  CheckpointEval out;
  out.dev_loss = evaluate_loss(ensemble.models.front(), ckpt.vocab, dev_set, loss_cfg).loss;
  const auto hyps = translate(ensemble, dev_set, decode_cfg);
  std::vector<std::string> refs;
  refs.reserve(dev_set.size());
  for (const auto& inst : dev_set) refs.push_back(inst.translation);
  out.dev_bleu = corpus_bleu(hyps, refs).bleu;
  return out;
}

}  // namespace stforge
