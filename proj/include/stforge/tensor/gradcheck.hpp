#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stforge/tensor/tensor.hpp"

namespace stforge {

/// Central-difference estimate of d f / d theta, one coordinate at a time:
/// (f(θ + h e_i) - f(θ - h e_i)) / (2h). `f` reads theta's current values;
/// theta is restored exactly after every probe.
template <typename Scalar, typename F>
Tensor<Scalar> finite_diff_grad(F&& f, Tensor<Scalar>& theta, Scalar h) {
  std::vector<Scalar> estimate(static_cast<std::size_t>(theta.numel()));
  auto values = theta.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Scalar saved = values[i];
    values[i] = saved + h;
    const Scalar plus = static_cast<Scalar>(f());
    values[i] = saved - h;
    const Scalar minus = static_cast<Scalar>(f());
    values[i] = saved;
    estimate[i] = (plus - minus) / (Scalar(2) * h);
  }
  return Tensor<Scalar>::from(theta.shape(), std::move(estimate));
}

/// Fourth-order central stencil
/// (-f(θ+2h) + 8 f(θ+h) - 8 f(θ-h) + f(θ-2h)) / (12h).
template <typename Scalar, typename F>
Tensor<Scalar> finite_diff_grad4(F&& f, Tensor<Scalar>& theta, Scalar h) {
  std::vector<Scalar> estimate(static_cast<std::size_t>(theta.numel()));
  auto values = theta.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Scalar saved = values[i];
    auto at = [&](Scalar offset) {
      values[i] = saved + offset;
      return static_cast<double>(f());
    };
    const double d = -at(2 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2 * h);
    values[i] = saved;
    estimate[i] = static_cast<Scalar>(d / (12.0 * static_cast<double>(h)));
  }
  return Tensor<Scalar>::from(theta.shape(), std::move(estimate));
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from dominating with pure rounding noise.
template <typename Scalar>
double relative_error(Scalar a, Scalar b, double floor) {
  const double da = static_cast<double>(a), db = static_cast<double>(b);
  return std::abs(da - db) / std::max({std::abs(da), std::abs(db), floor});
}

template <typename Scalar>
double max_relative_error(std::span<const Scalar> a, std::span<const Scalar> b, double floor) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("max_relative_error: length mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, relative_error(a[i], b[i], floor));
  }
  return worst;
}

/// Step and error floor used for the two arithmetic widths.
template <typename Scalar>
struct GradCheckTolerance;

template <>
struct GradCheckTolerance<float> {
  static constexpr float kStep = 5e-2f;
  static constexpr double kFloor = 1e-2;
  static constexpr double kMaxRelError = 1e-2;
};

template <>
struct GradCheckTolerance<double> {
  static constexpr double kStep = 1e-3;
  static constexpr double kFloor = 1e-6;
  static constexpr double kMaxRelError = 1e-4;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  Index coordinates = 0;
};

/// Compares autodiff against fourth-order central differences for every coordinate of
/// every tensor in `params`. `build_loss` must construct a fresh graph from
/// the current parameter values and return its scalar root.
template <typename Scalar, typename BuildLoss>
GradCheckReport check_gradients(BuildLoss&& build_loss, std::vector<std::pair<std::string, Tensor<Scalar>>> params,
                                Scalar step = GradCheckTolerance<Scalar>::kStep,
                                double floor = GradCheckTolerance<Scalar>::kFloor) {
  for (auto& [name, p] : params) p.zero_grad();
  Tensor<Scalar> loss = build_loss();
  backward(loss);
  GradCheckReport report;
  for (auto& [name, p] : params) {
    std::vector<Scalar> analytic(p.grad().begin(), p.grad().end());
    auto eval = [&]() {
      NoGradGuard no_grad;
      return build_loss().item();
    };
    const Tensor<Scalar> numeric = finite_diff_grad4<Scalar>(eval, p, step);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double err = relative_error(analytic[i], numeric.data()[i], floor);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = name;
        report.worst_index = static_cast<Index>(i);
        report.worst_analytic = static_cast<double>(analytic[i]);
        report.worst_numeric = static_cast<double>(numeric.data()[i]);
      }
    }
    report.coordinates += p.numel();
  }
  return report;
}

}  // namespace stforge
