#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace stforge {

inline constexpr int kFeatureDim = 40;

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Audio features of one utterance, frames × 40.
struct FeatureSequence {
  std::string utt_id;
  FeatureMatrix frames;

  Eigen::Index num_frames() const { return frames.rows(); }
};

class FeatureFileError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kBadDim, kEmpty, kTruncated };

  FeatureFileError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// .stfeat: "STFT", u32 version=1, u32 n_frames, u32 feat_dim=40, then
/// n_frames × feat_dim little-endian float32, row-major.
FeatureSequence read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureMatrix& frames);

}  // namespace stforge
