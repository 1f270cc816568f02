#include "stforge/dataio/batch.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "stforge/tensor/rng.hpp"

namespace stforge {

std::vector<int> Batch::target_ids(Eigen::Index b) const {
  std::vector<int> ids(static_cast<std::size_t>(target_lengths[static_cast<std::size_t>(b)]));
  for (std::size_t t = 0; t < ids.size(); ++t) ids[t] = targets(b, static_cast<Eigen::Index>(t));
  return ids;
}

Batch collate(std::span<const CorpusInstance* const> members, const CharVocab& vocab) {
  if (members.empty()) {
    throw std::invalid_argument("collate: empty batch");
  }
  const auto count = static_cast<Eigen::Index>(members.size());
  std::vector<std::vector<int>> encoded;
  Eigen::Index max_frames = 0, max_targets = 0;
  for (const auto* inst : members) {
    encoded.push_back(vocab.encode(inst->translation));
    max_frames = std::max(max_frames, inst->features.num_frames());
    max_targets = std::max(max_targets, static_cast<Eigen::Index>(encoded.back().size()));
  }
  Batch batch;
  batch.features = FeatureMatrix::Zero(count * max_frames, kFeatureDim);
  batch.targets = IdMatrix::Constant(count, max_targets, CharVocab::kPad);
  batch.feature_mask = MaskMatrix::Zero(count, max_frames);
  batch.target_mask = MaskMatrix::Zero(count, max_targets);
  for (Eigen::Index b = 0; b < count; ++b) {
    const auto& inst = *members[static_cast<std::size_t>(b)];
    const auto& ids = encoded[static_cast<std::size_t>(b)];
    const Eigen::Index n = inst.features.num_frames();
    batch.utt_ids.push_back(inst.utt_id);
    batch.frames(b).topRows(n) = inst.features.frames;
    batch.feature_lengths.push_back(n);
    batch.feature_mask.row(b).head(n).setOnes();
    for (std::size_t t = 0; t < ids.size(); ++t) batch.targets(b, static_cast<Eigen::Index>(t)) = ids[t];
    batch.target_lengths.push_back(static_cast<Eigen::Index>(ids.size()));
    batch.target_mask.row(b).head(static_cast<Eigen::Index>(ids.size())).setOnes();
  }
  return batch;
}

std::vector<Batch> make_batches(std::span<const CorpusInstance> corpus, const CharVocab& vocab, int max_batch,
                                std::uint64_t shuffle_seed) {
  if (corpus.empty()) {
    throw std::invalid_argument("make_batches: empty corpus");
  }
  if (max_batch < 1) {
    throw std::invalid_argument("make_batches: max_batch must be >= 1");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus[a].features.num_frames() < corpus[b].features.num_frames();
  });
  std::vector<std::vector<const CorpusInstance*>> groups;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(max_batch)) {
    std::vector<const CorpusInstance*> group;
    for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(max_batch)); ++j) {
      group.push_back(&corpus[order[j]]);
    }
    groups.push_back(std::move(group));
  }
  RngStream rng(shuffle_seed, 0x62617463ULL);
  rng.shuffle(groups);
  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) batches.push_back(collate(g, vocab));
  return batches;
}

}  // namespace stforge
