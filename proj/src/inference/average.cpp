#include "stforge/inference/average.hpp"

#include <algorithm>
#include <stdexcept>

#include "stforge/util/json_fields.hpp"

namespace stforge {

void AverageConfig::validate() const {
  if (window == 0) throw util::ConfigError("average: window must be >= 1");
  if (!(margin > 0.0)) throw util::ConfigError("average: margin must be > 0");
}

nlohmann::ordered_json AverageConfig::to_json() const {
  return nlohmann::ordered_json{{"window", window}, {"margin", margin}};
}

AverageConfig AverageConfig::from_json(const nlohmann::json& j) {
  util::require_known_keys(j, {"window", "margin"}, "average");
  AverageConfig c;
  util::read_field(j, "window", c.window, "average");
  util::read_field(j, "margin", c.margin, "average");
  c.validate();
  return c;
}

std::vector<std::size_t> select_for_average(std::span<const double> bleus, const AverageConfig& cfg) {
  if (bleus.empty()) throw std::invalid_argument("average: empty checkpoint series");
  cfg.validate();
  const std::size_t start = bleus.size() > cfg.window ? bleus.size() - cfg.window : 0;
  const double best = *std::max_element(bleus.begin() + static_cast<std::ptrdiff_t>(start), bleus.end());
  std::vector<std::size_t> out;
  for (std::size_t i = start; i < bleus.size(); ++i) {
    if (best - bleus[i] < cfg.margin) out.push_back(i);
  }
  return out;
}

Checkpoint mean_checkpoint(std::span<const Checkpoint> members, std::span<const std::string> labels) {
  if (members.empty()) throw std::invalid_argument("average: no members");
  if (!labels.empty() && labels.size() != members.size()) {
    throw std::invalid_argument("average: label count differs from member count");
  }
  for (std::size_t k = 1; k < members.size(); ++k) {
    try {
      check_same_layout(members.front(), members[k]);
    } catch (const CheckpointError& e) {
      throw CheckpointError("average: member " + std::to_string(k) + " is incompatible: " + e.what());
    }
  }
  Checkpoint out;
  out.config = members.front().config;
  out.vocab = members.front().vocab;
  out.meta.stage = members.front().meta.stage;
  out.meta.epoch = members.back().meta.epoch;
  for (std::size_t k = 0; k < members.size(); ++k) {
    out.meta.members.push_back(labels.empty() ? "epoch " + std::to_string(members[k].meta.epoch) : labels[k]);
  }
  const double count = static_cast<double>(members.size());
  std::vector<float> column(members.size());
  for (const auto& [name, first] : members.front().params) {
    std::vector<float> mean(static_cast<std::size_t>(first.numel()));
    for (std::size_t i = 0; i < mean.size(); ++i) {
      for (std::size_t k = 0; k < members.size(); ++k) {
        column[k] = members[k].params.at(name).data()[i];
      }
      std::sort(column.begin(), column.end());
      double total = 0.0;
      for (float v : column) total += static_cast<double>(v);
      mean[i] = static_cast<float>(total / count);
    }
    out.params[name] = Tensor<float>::from(first.shape(), std::move(mean));
  }
  return out;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> series, std::span<const double> bleus,
                               const AverageConfig& cfg, std::span<const std::string> labels) {
  if (series.size() != bleus.size()) {
    throw std::invalid_argument("average: " + std::to_string(series.size()) + " checkpoints but " +
                                std::to_string(bleus.size()) + " BLEU scores");
  }
  if (!labels.empty() && labels.size() != series.size()) {
    throw std::invalid_argument("average: label count differs from checkpoint count");
  }
  std::vector<Checkpoint> chosen;
  std::vector<std::string> chosen_labels;
  for (std::size_t i : select_for_average(bleus, cfg)) {
    chosen.push_back(series[i]);
    chosen_labels.push_back(labels.empty() ? "epoch " + std::to_string(series[i].meta.epoch) : labels[i]);
  }
  return mean_checkpoint(chosen, chosen_labels);
}

}  // namespace stforge
