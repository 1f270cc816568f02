#include <cmath>

#include "stforge/training/loss.hpp"
#include "stforge/training/optim.hpp"
#include "stforge/training/trainer.hpp"
#include "stforge/util/json_fields.hpp"

namespace stforge {

using json = nlohmann::ordered_json;
using util::ConfigError;
using util::read_field;
using util::require_known_keys;

void LossConfig::validate() const {
  if (!(correct_mass > 0.0 && correct_mass <= 1.0) || smooth_mass < 0.0) {
    throw ConfigError("loss: masses must satisfy 0 < correct_mass <= 1 and smooth_mass >= 0");
  }
  if (std::abs(correct_mass + smooth_mass - 1.0) > 1e-12) {
    throw ConfigError("loss: correct_mass + smooth_mass must equal 1");
  }
}

json LossConfig::to_json() const {
  return json{{"label_smoothing", label_smoothing},
              {"correct_mass", correct_mass},
              {"smooth_mass", smooth_mass},
              {"pad_excluded", pad_excluded}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"label_smoothing", "correct_mass", "smooth_mass", "pad_excluded"}, "loss");
  LossConfig c;
  read_field(j, "label_smoothing", c.label_smoothing, "loss");
  read_field(j, "correct_mass", c.correct_mass, "loss");
  read_field(j, "smooth_mass", c.smooth_mass, "loss");
  read_field(j, "pad_excluded", c.pad_excluded, "loss");
  c.validate();
  return c;
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer.momentum must lie in [0, 1)");
  if (!(clip_norm > 0.0)) throw ConfigError("optimizer.clip_norm must be positive");
}

json OptimizerConfig::to_json() const {
  return json{{"kind", kind == OptimizerKind::kAdam ? "adam" : "nag"},
              {"lr", lr},
              {"beta1", beta1},
              {"beta2", beta2},
              {"eps", eps},
              {"momentum", momentum},
              {"clip_norm", clip_norm}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"kind", "lr", "beta1", "beta2", "eps", "momentum", "clip_norm"}, "optimizer");
  OptimizerConfig c;
  std::string kind = "adam";
  read_field(j, "kind", kind, "optimizer");
  if (kind == "adam") {
    c.kind = OptimizerKind::kAdam;
  } else if (kind == "nag") {
    c.kind = OptimizerKind::kNag;
  } else {
    throw ConfigError("optimizer.kind: expected adam or nag, got '" + kind + "'");
  }
  read_field(j, "lr", c.lr, "optimizer");
  read_field(j, "beta1", c.beta1, "optimizer");
  read_field(j, "beta2", c.beta2, "optimizer");
  read_field(j, "eps", c.eps, "optimizer");
  read_field(j, "momentum", c.momentum, "optimizer");
  read_field(j, "clip_norm", c.clip_norm, "optimizer");
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (max_epochs < 0) throw ConfigError("training.max_epochs must be >= 0");
  if (patience < 0) throw ConfigError("training.patience must be >= 0");
  if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
}

json TrainConfig::to_json() const {
  return json{{"max_epochs", max_epochs}, {"patience", patience}, {"batch_size", batch_size},
              {"seed", seed},             {"anneal", anneal},     {"stage", stage}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"max_epochs", "patience", "batch_size", "seed", "anneal", "stage"}, "training");
  TrainConfig c;
  read_field(j, "max_epochs", c.max_epochs, "training");
  read_field(j, "patience", c.patience, "training");
  read_field(j, "batch_size", c.batch_size, "training");
  read_field(j, "seed", c.seed, "training");
  read_field(j, "anneal", c.anneal, "training");
  read_field(j, "stage", c.stage, "training");
  c.validate();
  return c;
}

}  // namespace stforge
