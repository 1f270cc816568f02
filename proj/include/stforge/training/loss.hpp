#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/tensor/ops.hpp"

namespace stforge {

struct LossConfig {
  bool label_smoothing = true;
  double correct_mass = 0.9;
  double smooth_mass = 0.1;
  bool pad_excluded = true;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);
};

/// Sum of token losses and the number of tokens that contributed.
template <typename Scalar>
struct TokenLoss {
  Tensor<Scalar> total;  // (1)
  Index tokens = 0;
};

/// Smoothed target distribution for one row: `correct` on the target and the
/// remaining mass spread uniformly over every other symbol except `pad_id`.
inline std::vector<double> smoothed_target(int target, Index vocab, double correct, std::optional<int> pad_id) {
  std::vector<double> q(static_cast<std::size_t>(vocab), 0.0);
  const Index others = vocab - 1 - (pad_id && *pad_id != target ? 1 : 0);
  const double rest = others > 0 ? (1.0 - correct) / static_cast<double>(others) : 0.0;
  for (Index k = 0; k < vocab; ++k) {
    if (pad_id && k == *pad_id) continue;
    q[static_cast<std::size_t>(k)] = k == target ? correct : rest;
  }
  return q;
}

/// −Σ_k q(k)·log p(k) summed over rows of `logits` (N, V). Rows whose target
/// equals `pad_id` contribute nothing.
template <typename Scalar>
TokenLoss<Scalar> label_smoothed_xent_sum(const Tensor<Scalar>& logits, std::span<const int> targets,
                                          const LossConfig& cfg, std::optional<int> pad_id) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(targets.size())) {
    throw ShapeError("label_smoothed_xent: logits " + shape_str(logits.shape()) + " for " +
                     std::to_string(targets.size()) + " targets");
  }
  const Index rows = logits.dim(0), vocab = logits.dim(1);
  if (vocab < 2) {
    throw std::invalid_argument("label_smoothed_xent: vocabulary size must be at least 2");
  }
  const double correct = cfg.label_smoothing ? cfg.correct_mass : 1.0;
  std::vector<Scalar> weights(static_cast<std::size_t>(rows * vocab), Scalar(0));
  Index tokens = 0;
  for (Index r = 0; r < rows; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= vocab) {
      throw std::out_of_range("label_smoothed_xent: target " + std::to_string(t) + " outside vocabulary");
    }
    if (pad_id && t == *pad_id) continue;
    ++tokens;
    const auto q = smoothed_target(t, vocab, correct, pad_id);
    for (Index k = 0; k < vocab; ++k) {
      weights[static_cast<std::size_t>(r * vocab + k)] = static_cast<Scalar>(-q[static_cast<std::size_t>(k)]);
    }
  }
  const auto logp = log_softmax(logits, 1);
  return {sum(mul(logp, Tensor<Scalar>::from(logits.shape(), std::move(weights)))), tokens};
}

/// Mean over non-pad rows.
template <typename Scalar>
Tensor<Scalar> label_smoothed_xent(const Tensor<Scalar>& logits, std::span<const int> targets, const LossConfig& cfg,
                                   std::optional<int> pad_id = std::nullopt) {
  auto r = label_smoothed_xent_sum(logits, targets, cfg, pad_id);
  if (r.tokens == 0) {
    throw std::invalid_argument("label_smoothed_xent: every target is padding");
  }
  return scale(r.total, Scalar(1) / static_cast<Scalar>(r.tokens));
}

}  // namespace stforge
