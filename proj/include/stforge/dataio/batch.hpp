#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stforge/dataio/features.hpp"
#include "stforge/dataio/manifest.hpp"
#include "stforge/dataio/vocab.hpp"

namespace stforge {

using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Zero-padded features and PAD-padded target ids for B instances.
struct Batch {
  std::vector<std::string> utt_ids;
  FeatureMatrix features;  // (B · max_frames) × 40; instance b owns rows [b·max_frames, (b+1)·max_frames)
  std::vector<Eigen::Index> feature_lengths;
  IdMatrix targets;  // B × max_targets, BOS ... EOS then PAD
  std::vector<Eigen::Index> target_lengths;
  MaskMatrix feature_mask;  // B × max_frames
  MaskMatrix target_mask;   // B × max_targets

  Eigen::Index size() const { return static_cast<Eigen::Index>(utt_ids.size()); }
  Eigen::Index max_frames() const { return feature_mask.cols(); }
  Eigen::Index max_targets() const { return targets.cols(); }

  auto frames(Eigen::Index b) const { return features.middleRows(b * max_frames(), max_frames()); }
  auto frames(Eigen::Index b) { return features.middleRows(b * max_frames(), max_frames()); }
  std::vector<int> target_ids(Eigen::Index b) const;
};

Batch collate(std::span<const CorpusInstance* const> members, const CharVocab& vocab);

/// Sorts by frame count (stable), cuts consecutive runs of at most
/// `max_batch`, then shuffles the batch order with `shuffle_seed`.
std::vector<Batch> make_batches(std::span<const CorpusInstance> corpus, const CharVocab& vocab, int max_batch,
                                std::uint64_t shuffle_seed);

}  // namespace stforge
