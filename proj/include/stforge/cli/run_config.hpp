#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/cleaning/cleaning.hpp"
#include "stforge/inference/average.hpp"
#include "stforge/inference/decode.hpp"
#include "stforge/model/config.hpp"
#include "stforge/training/loss.hpp"
#include "stforge/training/optim.hpp"
#include "stforge/training/trainer.hpp"

namespace stforge::cli {

inline constexpr const char* kSeedEnv = "ST_FORGE_SEED";

struct DataConfig {
  std::filesystem::path manifest;                 ///< the Parallel corpus
  std::optional<std::filesystem::path> alignment; ///< required unless cleaning.skip_alignment
  std::optional<std::filesystem::path> dev_manifest;
  std::size_t dev_size = 0;  ///< sampled from the split input when no dev_manifest is given
  std::optional<std::filesystem::path> test_manifest;
};

/// One entry of a training cascade. The first stage trains from scratch;
/// later stages fine-tune the previous stage's averaged checkpoint.
struct StageSpec {
  std::string name;
  std::string data = "clean2";  ///< parallel | clean1 | clean2
  FinetuneMode mode = FinetuneMode::kSamePolicy;
  std::optional<int> max_epochs;
};

struct RunConfig {
  DataConfig data;
  cleaning::CascadeParams cleaning;
  ModelConfig model;
  OptimizerConfig optimizer;
  LossConfig loss;
  TrainConfig training;
  std::vector<StageSpec> stages{StageSpec{"P", "clean2", FinetuneMode::kSamePolicy, std::nullopt}};
  std::vector<std::string> ensemble;  ///< stage names whose averages are decoded jointly
  DecodeConfig decode;
  AverageConfig average;

  void validate() const;
  /// Effective config with every default spelled out.
  nlohmann::ordered_json to_json() const;
  /// Relative data paths resolve against `base`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base);
};

/// Parses a config file and applies the seed override from the environment.
RunConfig load_run_config(const std::filesystem::path& path);
void apply_seed_override(RunConfig& cfg);

}  // namespace stforge::cli
