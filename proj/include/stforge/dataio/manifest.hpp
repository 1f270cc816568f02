#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stforge/dataio/features.hpp"

namespace stforge {

struct CorpusInstance {
  std::string utt_id;
  FeatureSequence features;
  std::string transcription;  // source language; used only by cleaning
  std::string translation;    // target language, non-empty
  std::filesystem::path feature_path;
};

class ManifestError : public std::runtime_error {
 public:
  ManifestError(const std::filesystem::path& path, int line, const std::string& what)
      : std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// TSV: utt_id \t feature_path \t transcription \t translation, no header.
/// Feature paths resolve relative to the manifest's directory.
std::vector<CorpusInstance> read_manifest(const std::filesystem::path& path);

/// Feature paths are written relative to the manifest's directory.
void write_manifest(const std::filesystem::path& path, std::span<const CorpusInstance> corpus);

/// Writes each instance's features to dir/feats/<utt_id>.stfeat, records the
/// new paths in `corpus`, and writes dir/<name>.
void write_corpus(const std::filesystem::path& dir, const std::string& name, std::vector<CorpusInstance>& corpus);

}  // namespace stforge
