#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/training/checkpoint.hpp"

namespace stforge {

struct AverageConfig {
  std::size_t window = 10;  ///< the last `window` checkpoints are candidates
  double margin = 0.5;      ///< kept when best - bleu < margin

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static AverageConfig from_json(const nlohmann::json& j);
};

/// Indices into `bleus` of the selected checkpoints, ascending.
std::vector<std::size_t> select_for_average(std::span<const double> bleus, const AverageConfig& cfg = {});

/// Element-wise mean of compatible checkpoints. Values are summed in sorted
/// order so the result does not depend on member order.
Checkpoint mean_checkpoint(std::span<const Checkpoint> members, std::span<const std::string> labels = {});

/// Selects from the series by dev BLEU and averages the selection; the
/// result's metadata lists the members' labels (default "epoch N").
Checkpoint average_checkpoints(std::span<const Checkpoint> series, std::span<const double> bleus,
                               const AverageConfig& cfg = {}, std::span<const std::string> labels = {});

}  // namespace stforge
