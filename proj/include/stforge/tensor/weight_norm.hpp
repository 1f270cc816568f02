#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "stforge/tensor/tensor.hpp"

namespace stforge {

/// Magnitude/direction reparameterization w = g · v / ‖v‖, normalized per
/// leading-axis row (a conv kernel (C_out, C_in, 3, 3) has C_out rows).
template <typename Scalar>
struct WeightNormParam {
  Tensor<Scalar> v;  // direction, same shape as w
  Tensor<Scalar> g;  // one magnitude per row, shape (rows)

  /// Starts at w = initial: v = initial, g = row norms.
  static WeightNormParam from_weight(const Tensor<Scalar>& initial) {
    WeightNormParam p{initial.clone(true), Tensor<Scalar>()};
    const Index rows = initial.dim(0);
    const Index cols = initial.numel() / rows;
    std::vector<Scalar> norms(static_cast<std::size_t>(rows));
    for (Index r = 0; r < rows; ++r) {
      Scalar sq(0);
      for (Index c = 0; c < cols; ++c) {
        const Scalar x = initial.data()[static_cast<std::size_t>(r * cols + c)];
        sq += x * x;
      }
      if (!(sq > Scalar(0))) {
        throw std::invalid_argument("weight norm: row " + std::to_string(r) +
                                    " of the direction has zero norm");
      }
      norms[static_cast<std::size_t>(r)] = std::sqrt(sq);
    }
    p.g = Tensor<Scalar>::from({rows}, std::move(norms), true);
    return p;
  }
};

template <typename Scalar>
Tensor<Scalar> weight_norm_materialize(const Tensor<Scalar>& v, const Tensor<Scalar>& g) {
  const Index rows = v.dim(0);
  if (g.numel() != rows) {
    throw ShapeError("weight norm: magnitude " + shape_str(g.shape()) + " for direction " +
                     shape_str(v.shape()));
  }
  const Index cols = v.numel() / rows;
  std::vector<Scalar> norms(static_cast<std::size_t>(rows));
  std::vector<Scalar> out(static_cast<std::size_t>(v.numel()));
  const auto vd = v.data();
  const auto gd = g.data();
  for (Index r = 0; r < rows; ++r) {
    Scalar sq(0);
    for (Index c = 0; c < cols; ++c) {
      const Scalar x = vd[static_cast<std::size_t>(r * cols + c)];
      sq += x * x;
    }
    if (!(sq > Scalar(0))) {
      throw std::domain_error("weight norm: row " + std::to_string(r) + " of the direction has zero norm");
    }
    const Scalar norm = std::sqrt(sq);
    norms[static_cast<std::size_t>(r)] = norm;
    const Scalar factor = gd[static_cast<std::size_t>(r)] / norm;
    for (Index c = 0; c < cols; ++c) {
      out[static_cast<std::size_t>(r * cols + c)] = factor * vd[static_cast<std::size_t>(r * cols + c)];
    }
  }
  return detail::make_result<Scalar>(
      v.shape(), std::move(out), {v, g}, [rows, cols, norms = std::move(norms)](TensorNode<Scalar>& self) {
        auto& V = *self.inputs[0];
        auto& G = *self.inputs[1];
        for (Index r = 0; r < rows; ++r) {
          const Scalar norm = norms[static_cast<std::size_t>(r)];
          // dg = <dw, u>, dv = (g/‖v‖)(dw - <dw, u> u), u = v/‖v‖
          Scalar proj(0);
          for (Index c = 0; c < cols; ++c) {
            const auto i = static_cast<std::size_t>(r * cols + c);
            proj += self.grad[i] * V.data[i] / norm;
          }
          if (G.requires_grad) G.grad[static_cast<std::size_t>(r)] += proj;
          if (V.requires_grad) {
            const Scalar factor = G.data[static_cast<std::size_t>(r)] / norm;
            for (Index c = 0; c < cols; ++c) {
              const auto i = static_cast<std::size_t>(r * cols + c);
              V.grad[i] += factor * (self.grad[i] - proj * V.data[i] / norm);
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> weight_norm_materialize(const WeightNormParam<Scalar>& p) {
  return weight_norm_materialize(p.v, p.g);
}

}  // namespace stforge
