#include "stforge/dataio/features.hpp"

#include <fstream>
#include <span>

#include "stforge/dataio/binary_io.hpp"

namespace stforge {

namespace {
constexpr char kMagic[4] = {'S', 'T', 'F', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

FeatureSequence read_features(const std::filesystem::path& path) {
  using Kind = FeatureFileError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FeatureFileError(Kind::kIo, "cannot open feature file " + path.string());
  }
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw FeatureFileError(Kind::kBadMagic, "bad magic in feature file " + path.string());
  }
  std::uint32_t version = 0, frames = 0, dim = 0;
  if (!io::get_u32(in, version) || !io::get_u32(in, frames) || !io::get_u32(in, dim)) {
    throw FeatureFileError(Kind::kTruncated, "truncated header in " + path.string());
  }
  if (version != kVersion) {
    throw FeatureFileError(Kind::kBadVersion,
                           "unsupported feature file version " + std::to_string(version) + " in " + path.string());
  }
  if (dim != static_cast<std::uint32_t>(kFeatureDim)) {
    throw FeatureFileError(Kind::kBadDim, "feature dimension " + std::to_string(dim) + " in " + path.string() +
                                              ", expected " + std::to_string(kFeatureDim));
  }
  if (frames == 0) {
    throw FeatureFileError(Kind::kEmpty, "feature file " + path.string() + " has zero frames");
  }
  FeatureSequence seq;
  seq.utt_id = path.stem().string();
  seq.frames.resize(frames, kFeatureDim);
  if (!io::get_f32_block(in, std::span<float>(seq.frames.data(), static_cast<std::size_t>(seq.frames.size())))) {
    throw FeatureFileError(Kind::kTruncated, "truncated payload in " + path.string() + ": header promises " +
                                                 std::to_string(frames) + " frames");
  }
  return seq;
}

void write_features(const std::filesystem::path& path, const FeatureMatrix& frames) {
  if (frames.rows() < 1 || frames.cols() != kFeatureDim) {
    throw FeatureFileError(FeatureFileError::Kind::kBadDim,
                           "refusing to write a " + std::to_string(frames.rows()) + "x" +
                               std::to_string(frames.cols()) + " feature matrix");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FeatureFileError(FeatureFileError::Kind::kIo, "cannot write feature file " + path.string());
  }
  out.write(kMagic, 4);
  io::put_u32(out, kVersion);
  io::put_u32(out, static_cast<std::uint32_t>(frames.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(frames.cols()));
  io::put_f32_block(out, std::span<const float>(frames.data(), static_cast<std::size_t>(frames.size())));
  if (!out) {
    throw FeatureFileError(FeatureFileError::Kind::kIo, "write failed for " + path.string());
  }
}

}  // namespace stforge
