#include "stforge/dataio/manifest.hpp"

#include <fstream>
#include <sstream>

namespace stforge {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

bool has_separator(const std::string& s) { return s.find_first_of("\t\n\r") != std::string::npos; }

}  // namespace

std::vector<CorpusInstance> read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ManifestError(path, 0, "cannot open manifest");
  }
  const fs::path base = path.parent_path();
  std::vector<CorpusInstance> corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw ManifestError(path, line_no, "expected 4 tab-separated columns, found " + std::to_string(fields.size()));
    }
    CorpusInstance inst;
    inst.utt_id = fields[0];
    if (inst.utt_id.empty()) {
      throw ManifestError(path, line_no, "empty utterance id");
    }
    inst.feature_path = fs::path(fields[1]).is_absolute() ? fs::path(fields[1]) : base / fields[1];
    inst.feature_path = inst.feature_path.lexically_normal();
    inst.transcription = fields[2];
    inst.translation = fields[3];
    if (inst.translation.empty()) {
      throw ManifestError(path, line_no, "empty translation for " + inst.utt_id);
    }
    if (!fs::exists(inst.feature_path)) {
      throw ManifestError(path, line_no, "missing feature file " + inst.feature_path.string());
    }
    try {
      inst.features = read_features(inst.feature_path);
    } catch (const FeatureFileError& e) {
      throw ManifestError(path, line_no, e.what());
    }
    inst.features.utt_id = inst.utt_id;
    corpus.push_back(std::move(inst));
  }
  return corpus;
}

void write_manifest(const fs::path& path, std::span<const CorpusInstance> corpus) {
  const fs::path base = fs::absolute(path).parent_path();
  std::ostringstream body;
  for (const auto& inst : corpus) {
    if (inst.feature_path.empty()) {
      throw std::invalid_argument("write_manifest: instance " + inst.utt_id + " has no feature file");
    }
    if (has_separator(inst.utt_id) || has_separator(inst.transcription) || has_separator(inst.translation)) {
      throw std::invalid_argument("write_manifest: instance " + inst.utt_id + " contains a tab or newline");
    }
    const fs::path rel = fs::absolute(inst.feature_path).lexically_relative(base);
    body << inst.utt_id << '\t' << rel.generic_string() << '\t' << inst.transcription << '\t'
         << inst.translation << '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write manifest " + path.string());
  }
  out << body.str();
}

void write_corpus(const fs::path& dir, const std::string& name, std::vector<CorpusInstance>& corpus) {
  fs::create_directories(dir / "feats");
  for (auto& inst : corpus) {
    inst.feature_path = dir / "feats" / (inst.utt_id + ".stfeat");
    write_features(inst.feature_path, inst.features.frames);
  }
  write_manifest(dir / name, corpus);
}

}  // namespace stforge
