#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/cli/run_config.hpp"

namespace stforge::cli {

class CliError : public std::runtime_error {
 public:
  CliError(std::string kind, const std::string& message) : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

/// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
void write_json_atomic(const std::filesystem::path& path, const nlohmann::ordered_json& j);

/// Run directory: config.json, manifests/, checkpoints/, logs/, reports/.
/// Holds an exclusive lock file for its lifetime.
class RunDir {
 public:
  RunDir(const std::filesystem::path& root, bool force);
  ~RunDir();
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path config_path() const { return root_ / "config.json"; }
  std::filesystem::path manifests() const { return root_ / "manifests"; }
  std::filesystem::path checkpoints() const { return root_ / "checkpoints"; }
  std::filesystem::path logs() const { return root_ / "logs"; }
  std::filesystem::path reports() const { return root_ / "reports"; }
  std::filesystem::path manifest(const std::string& name) const { return manifests() / (name + ".tsv"); }
  std::filesystem::path vocab_path() const { return manifests() / "vocab.txt"; }
  std::filesystem::path stage_dir(const std::string& stage) const { return checkpoints() / stage; }

  bool force() const { return force_; }

  /// Uses `config_file` when given, else the stored config.json. A given or
  /// environment-modified config must match the stored one unless forced.
  const RunConfig& bind_config(const std::filesystem::path& config_file);
  const RunConfig& config() const;

  /// Throws unless every path is absent or the directory was opened with force.
  void claim_outputs(const std::vector<std::filesystem::path>& paths) const;
  /// Removes stale outputs matching the claimed set; only called under force.
  void clear_outputs(const std::vector<std::filesystem::path>& paths) const;

  /// Adds content hashes for `files` to manifests/inputs.json.
  void record_inputs(const std::vector<std::filesystem::path>& files) const;

  /// Path relative to the run root when beneath it.
  std::string display(const std::filesystem::path& p) const;

 private:
  std::filesystem::path root_;
  std::filesystem::path lock_;
  bool force_;
  bool have_config_ = false;
  RunConfig config_;
};

}  // namespace stforge::cli
