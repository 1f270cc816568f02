#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stforge/model/seq2seq.hpp"

namespace stforge {

enum class OptimizerKind { kAdam, kNag };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.99;
  double clip_norm = 5.0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter '" + param + "'"), param_(param) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

template <typename Scalar>
void require_finite_grads(const ParamMap<Scalar>& params) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (Scalar g : t.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient(name);
    }
  }
}

/// Global L2 norm over every gradient; if it exceeds `max_norm` each gradient
/// is scaled by max_norm / norm. Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(ParamMap<Scalar>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (Scalar g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (auto& g : t.grad()) g = static_cast<Scalar>(static_cast<double>(g) * factor);
    }
  }
  return norm;
}

template <typename Scalar>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update with learning rate `lr`; throws NonFiniteGradient first.
  virtual void step(ParamMap<Scalar>& params, double lr) = 0;
};

/// Bias-corrected Adam:
///   m ← β1 m + (1−β1) g,  v ← β2 v + (1−β2) g²
///   θ ← θ − lr · m̂ / (√v̂ + ε),  m̂ = m/(1−β1^t), v̂ = v/(1−β2^t)
template <typename Scalar>
class Adam : public Optimizer<Scalar> {
 public:
  explicit Adam(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void step(ParamMap<Scalar>& params, double lr) override {
    require_finite_grads(params);
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      auto& st = state_[name];
      const auto n = static_cast<std::size_t>(p.numel());
      if (st.m.size() != n) {
        st.m.assign(n, 0.0);
        st.v.assign(n, 0.0);
      }
      auto values = p.data();
      const auto grads = p.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = static_cast<double>(grads[i]);
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double update = lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + cfg_.eps);
        values[i] = static_cast<Scalar>(static_cast<double>(values[i]) - update);
      }
    }
  }

  long steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Nesterov momentum in the lookahead-free form:
///   v ← μ v + g
///   θ ← θ − lr · (g + μ v)
template <typename Scalar>
class Nag : public Optimizer<Scalar> {
 public:
  explicit Nag(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void step(ParamMap<Scalar>& params, double lr) override {
    require_finite_grads(params);
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      auto& vel = velocity_[name];
      const auto n = static_cast<std::size_t>(p.numel());
      if (vel.size() != n) vel.assign(n, 0.0);
      auto values = p.data();
      const auto grads = p.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = static_cast<double>(grads[i]);
        vel[i] = cfg_.momentum * vel[i] + g;
        values[i] = static_cast<Scalar>(static_cast<double>(values[i]) - lr * (g + cfg_.momentum * vel[i]));
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, std::vector<double>> velocity_;
};

template <typename Scalar>
std::unique_ptr<Optimizer<Scalar>> make_optimizer(const OptimizerConfig& cfg) {
  if (cfg.kind == OptimizerKind::kAdam) return std::make_unique<Adam<Scalar>>(cfg);
  return std::make_unique<Nag<Scalar>>(cfg);
}

struct AnnealState {
  double best = std::numeric_limits<double>::infinity();
  double lr = 0.001;
  double factor = 0.5;
  int events = 0;
};

/// Keeps lr on improvement over the best loss so far, multiplies it by
/// `factor` otherwise. Returns the new lr.
inline double anneal_on_plateau(AnnealState& state, double val_loss) {
  if (val_loss < state.best) {
    state.best = val_loss;
  } else {
    state.lr *= state.factor;
    ++state.events;
  }
  return state.lr;
}

}  // namespace stforge
