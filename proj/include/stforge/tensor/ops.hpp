#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stforge/tensor/rng.hpp"
#include "stforge/tensor/tensor.hpp"

namespace stforge {

/// One flag per position along an axis; nonzero means valid.
using Mask = std::vector<std::uint8_t>;

namespace detail {

template <typename Scalar>
Eigen::Map<RowMatrix<Scalar>> map(std::vector<Scalar>& buf, Index rows, Index cols) {
  return Eigen::Map<RowMatrix<Scalar>>(buf.data(), rows, cols);
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> cmap(const std::vector<Scalar>& buf, Index rows, Index cols) {
  return Eigen::Map<const RowMatrix<Scalar>>(buf.data(), rows, cols);
}

struct AxisSplit {
  Index outer;
  Index extent;
  Index inner;
};

inline AxisSplit split_axis(const Shape& shape, Index axis, const char* op) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  }
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) {
    s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& x, const char* op) {
  for (Scalar v : x.data()) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string(op) + ": non-finite input");
    }
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  detail::map(out, m, n).noalias() = a.mat() * b.mat();
  return detail::make_result<Scalar>({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const auto g = detail::cmap(self.grad, m, n);
    if (A.requires_grad) {
      detail::map(A.grad, m, k).noalias() += g * detail::cmap(B.data, k, n).transpose();
    }
    if (B.requires_grad) {
      detail::map(B.grad, k, n).noalias() += detail::cmap(A.data, m, k).transpose() * g;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose: needs rank 2, got " + shape_str(a.shape()));
  }
  const Index m = a.dim(0), n = a.dim(1);
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  detail::map(out, n, m) = a.mat().transpose();
  return detail::make_result<Scalar>({n, m}, std::move(out), {a}, [m, n](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    detail::map(A.grad, m, n) += detail::cmap(self.grad, n, m).transpose();
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a, b}, [](TensorNode<Scalar>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

/// a[m×n] + b broadcast over rows; b is (n) or (1×n).
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.numel() != a.dim(1) || b.rank() > 2 || (b.rank() == 2 && b.dim(0) != 1)) {
    throw ShapeError("add_row: cannot broadcast " + shape_str(b.shape()) + " over rows of " +
                     shape_str(a.shape()));
  }
  const Index m = a.dim(0), n = a.dim(1);
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  detail::map(out, m, n).rowwise() += b.mat().row(0);
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a, b}, [m, n](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const auto g = detail::cmap(self.grad, m, n);
    if (A.requires_grad) detail::map(A.grad, m, n) += g;
    if (B.requires_grad) detail::map(B.grad, 1, n) += g.colwise().sum();
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a, b}, [](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (A.requires_grad) A.grad[i] += self.grad[i] * B.data[i];
      if (B.requires_grad) B.grad[i] += self.grad[i] * A.data[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a}, [factor](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += factor * self.grad[i];
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = std::tanh(v);
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a}, [](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const Scalar y = self.data[i];
      A.grad[i] += self.grad[i] * (Scalar(1) - y * y);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (auto& v : out) {
    v = v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v))
                       : std::exp(v) / (Scalar(1) + std::exp(v));
  }
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a}, [](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const Scalar y = self.data[i];
      A.grad[i] += self.grad[i] * y * (Scalar(1) - y);
    }
  });
}

/// Sum of all elements, as a (1) tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Scalar total(0);
  for (Scalar v : a.data()) total += v;
  return detail::make_result<Scalar>({1}, {total}, {a}, [](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    for (auto& g : A.grad) g += self.grad[0];
  });
}

/// Mean along `axis`; the axis is kept with extent 1. With a mask, only
/// positions flagged valid contribute and masked positions receive zero grad.
template <typename Scalar>
Tensor<Scalar> mean_over_axis(const Tensor<Scalar>& a, Index axis, const Mask* mask = nullptr) {
  const auto s = detail::split_axis(a.shape(), axis, "mean_over_axis");
  if (mask && static_cast<Index>(mask->size()) != s.extent) {
    throw ShapeError("mean_over_axis: mask length " + std::to_string(mask->size()) +
                     " does not match extent " + std::to_string(s.extent));
  }
  std::vector<Scalar> weights(static_cast<std::size_t>(s.extent), Scalar(1));
  Index valid = s.extent;
  if (mask) {
    valid = 0;
    for (Index i = 0; i < s.extent; ++i) {
      weights[static_cast<std::size_t>(i)] = (*mask)[static_cast<std::size_t>(i)] ? Scalar(1) : Scalar(0);
      valid += (*mask)[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    if (valid == 0) {
      throw std::invalid_argument("mean_over_axis: every position is masked");
    }
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(valid);
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = 1;
  std::vector<Scalar> out(static_cast<std::size_t>(s.outer * s.inner), Scalar(0));
  const auto in = a.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.extent; ++i) {
      if (weights[static_cast<std::size_t>(i)] == Scalar(0)) continue;
      for (Index j = 0; j < s.inner; ++j) {
        out[static_cast<std::size_t>(o * s.inner + j)] +=
            in[static_cast<std::size_t>((o * s.extent + i) * s.inner + j)];
      }
    }
  }
  for (auto& v : out) v *= inv;
  return detail::make_result<Scalar>(
      std::move(out_shape), std::move(out), {a},
      [s, inv, weights = std::move(weights)](TensorNode<Scalar>& self) {
        auto& A = *self.inputs[0];
        for (Index o = 0; o < s.outer; ++o) {
          for (Index i = 0; i < s.extent; ++i) {
            const Scalar w = weights[static_cast<std::size_t>(i)] * inv;
            if (w == Scalar(0)) continue;
            for (Index j = 0; j < s.inner; ++j) {
              A.grad[static_cast<std::size_t>((o * s.extent + i) * s.inner + j)] +=
                  w * self.grad[static_cast<std::size_t>(o * s.inner + j)];
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
  if (parts.empty()) {
    throw ShapeError("concat: no inputs");
  }
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  if (axis < 0 || axis >= static_cast<Index>(first.size())) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(first));
  }
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<Index>(first.size())) {
      throw ShapeError("concat: rank mismatch, " + shape_str(first) + " vs " + shape_str(p.shape()));
    }
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (static_cast<Index>(d) != axis && p.shape()[d] != first[d]) {
        throw ShapeError("concat: extent mismatch off the concat axis, " + shape_str(first) +
                         " vs " + shape_str(p.shape()));
      }
    }
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const auto s = detail::split_axis(out_shape, axis, "concat");
  std::vector<Scalar> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index len = p.dim(axis);
    const auto src = p.data();
    for (Index o = 0; o < s.outer; ++o) {
      std::copy_n(src.begin() + o * len * s.inner, len * s.inner,
                  out.begin() + (o * total + offset) * s.inner);
    }
    offsets.push_back(offset);
    offset += len;
  }
  return detail::make_result_n<Scalar>(
      std::move(out_shape), std::move(out), parts,
      [s, total, offsets = std::move(offsets), axis](TensorNode<Scalar>& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          auto& in = *self.inputs[k];
          if (!in.requires_grad) continue;
          const Index len = in.shape[static_cast<std::size_t>(axis)];
          for (Index o = 0; o < s.outer; ++o) {
            const Scalar* g = self.grad.data() + (o * total + offsets[k]) * s.inner;
            Scalar* dst = in.grad.data() + o * len * s.inner;
            for (Index j = 0; j < len * s.inner; ++j) dst[j] += g[j];
          }
        }
      });
}

/// Contiguous range [start, start+length) along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, Index axis, Index start, Index length) {
  const auto s = detail::split_axis(a.shape(), axis, "slice");
  if (start < 0 || length <= 0 || start + length > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") outside axis " + std::to_string(axis) +
                     " of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  std::vector<Scalar> out(static_cast<std::size_t>(s.outer * length * s.inner));
  const auto src = a.data();
  for (Index o = 0; o < s.outer; ++o) {
    std::copy_n(src.begin() + (o * s.extent + start) * s.inner, length * s.inner,
                out.begin() + o * length * s.inner);
  }
  return detail::make_result<Scalar>(
      std::move(out_shape), std::move(out), {a}, [s, start, length](TensorNode<Scalar>& self) {
        auto& A = *self.inputs[0];
        for (Index o = 0; o < s.outer; ++o) {
          const Scalar* g = self.grad.data() + o * length * s.inner;
          Scalar* dst = A.grad.data() + (o * s.extent + start) * s.inner;
          for (Index j = 0; j < length * s.inner; ++j) dst[j] += g[j];
        }
      });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  validate_shape(shape);
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  return detail::make_result<Scalar>(std::move(shape), std::move(out), {a}, [](TensorNode<Scalar>& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
  });
}

/// General axis permutation: output axis d is input axis perm[d].
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& a, const std::vector<Index>& perm) {
  const auto rank = static_cast<std::size_t>(a.rank());
  if (perm.size() != rank) {
    throw ShapeError("permute: permutation length differs from rank of " + shape_str(a.shape()));
  }
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (perm[d] < 0 || perm[d] >= a.rank() || seen[static_cast<std::size_t>(perm[d])]) {
      throw ShapeError("permute: invalid permutation");
    }
    seen[static_cast<std::size_t>(perm[d])] = true;
    out_shape[d] = a.shape()[static_cast<std::size_t>(perm[d])];
  }
  Shape in_strides(rank, 1);
  for (std::size_t d = rank - 1; d > 0; --d) in_strides[d - 1] = in_strides[d] * a.shape()[d];
  // source offset for each output element
  const Index n = a.numel();
  std::vector<Index> source(static_cast<std::size_t>(n));
  std::vector<Index> idx(rank, 0);
  for (Index flat = 0; flat < n; ++flat) {
    Index src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[static_cast<std::size_t>(perm[d])];
    source[static_cast<std::size_t>(flat)] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<Scalar> out(static_cast<std::size_t>(n));
  const auto in = a.data();
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(source[static_cast<std::size_t>(i)])];
  return detail::make_result<Scalar>(
      std::move(out_shape), std::move(out), {a}, [source = std::move(source)](TensorNode<Scalar>& self) {
        auto& A = *self.inputs[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[static_cast<std::size_t>(source[i])] += self.grad[i];
      });
}

/// Rows of `table` selected by `ids`, shape (len(ids), dim).
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const int> ids) {
  if (table.rank() != 2 || ids.empty()) {
    throw ShapeError("embedding_lookup: needs a rank-2 table and at least one id");
  }
  const Index rows = table.dim(0), width = table.dim(1);
  std::vector<int> picked(ids.begin(), ids.end());
  std::vector<Scalar> out(static_cast<std::size_t>(static_cast<Index>(picked.size()) * width));
  const auto src = table.data();
  for (std::size_t r = 0; r < picked.size(); ++r) {
    if (picked[r] < 0 || picked[r] >= rows) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(picked[r]) +
                              " outside table of " + std::to_string(rows) + " rows");
    }
    std::copy_n(src.begin() + picked[r] * width, width, out.begin() + static_cast<Index>(r) * width);
  }
  const Index count = static_cast<Index>(picked.size());
  return detail::make_result<Scalar>(
      {count, width}, std::move(out), {table}, [picked = std::move(picked), width](TensorNode<Scalar>& self) {
        auto& T = *self.inputs[0];
        for (std::size_t r = 0; r < picked.size(); ++r) {
          for (Index j = 0; j < width; ++j) {
            T.grad[static_cast<std::size_t>(picked[r] * width + j)] +=
                self.grad[static_cast<std::size_t>(static_cast<Index>(r) * width + j)];
          }
        }
      });
}

/// Max-shifted softmax along `axis`. Masked positions get exactly zero.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis, const Mask* mask = nullptr) {
  detail::require_finite(x, "softmax");
  const auto s = detail::split_axis(x.shape(), axis, "softmax");
  if (mask) {
    if (static_cast<Index>(mask->size()) != s.extent) {
      throw ShapeError("softmax: mask length does not match axis extent");
    }
    if (std::none_of(mask->begin(), mask->end(), [](std::uint8_t m) { return m != 0; })) {
      throw std::invalid_argument("softmax: every position is masked");
    }
  }
  auto valid = [&](Index i) { return !mask || (*mask)[static_cast<std::size_t>(i)] != 0; };
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()), Scalar(0));
  const auto in = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index j = 0; j < s.inner; ++j) {
      auto at = [&](Index i) { return static_cast<std::size_t>((o * s.extent + i) * s.inner + j); };
      Scalar peak = -std::numeric_limits<Scalar>::infinity();
      for (Index i = 0; i < s.extent; ++i) {
        if (valid(i)) peak = std::max(peak, in[at(i)]);
      }
      Scalar total(0);
      for (Index i = 0; i < s.extent; ++i) {
        if (!valid(i)) continue;
        out[at(i)] = std::exp(in[at(i)] - peak);
        total += out[at(i)];
      }
      for (Index i = 0; i < s.extent; ++i) out[at(i)] /= total;
    }
  }
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, [s](TensorNode<Scalar>& self) {
    auto& X = *self.inputs[0];
    for (Index o = 0; o < s.outer; ++o) {
      for (Index j = 0; j < s.inner; ++j) {
        auto at = [&](Index i) { return static_cast<std::size_t>((o * s.extent + i) * s.inner + j); };
        Scalar dot(0);
        for (Index i = 0; i < s.extent; ++i) dot += self.grad[at(i)] * self.data[at(i)];
        for (Index i = 0; i < s.extent; ++i) {
          X.grad[at(i)] += self.data[at(i)] * (self.grad[at(i)] - dot);
        }
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x, Index axis) {
  detail::require_finite(x, "log_softmax");
  const auto s = detail::split_axis(x.shape(), axis, "log_softmax");
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  const auto in = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index j = 0; j < s.inner; ++j) {
      auto at = [&](Index i) { return static_cast<std::size_t>((o * s.extent + i) * s.inner + j); };
      Scalar peak = in[at(0)];
      for (Index i = 1; i < s.extent; ++i) peak = std::max(peak, in[at(i)]);
      Scalar total(0);
      for (Index i = 0; i < s.extent; ++i) total += std::exp(in[at(i)] - peak);
      const Scalar log_norm = peak + std::log(total);
      for (Index i = 0; i < s.extent; ++i) out[at(i)] = in[at(i)] - log_norm;
    }
  }
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, [s](TensorNode<Scalar>& self) {
    auto& X = *self.inputs[0];
    for (Index o = 0; o < s.outer; ++o) {
      for (Index j = 0; j < s.inner; ++j) {
        auto at = [&](Index i) { return static_cast<std::size_t>((o * s.extent + i) * s.inner + j); };
        Scalar gsum(0);
        for (Index i = 0; i < s.extent; ++i) gsum += self.grad[at(i)];
        for (Index i = 0; i < s.extent; ++i) {
          X.grad[at(i)] += self.grad[at(i)] - std::exp(self.data[at(i)]) * gsum;
        }
      }
    }
  });
}

/// 3×3 convolution, stride 2, zero padding 1 on every border.
/// x: (C_in, H, W), kernel: (C_out, C_in, 3, 3), bias: (C_out) or undefined.
/// Output: (C_out, ceil(H/2), ceil(W/2)).
template <typename Scalar>
Tensor<Scalar> conv2d_s2(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                         const Tensor<Scalar>& bias = Tensor<Scalar>()) {
  if (x.rank() != 3) {
    throw ShapeError("conv2d_s2: input must be (C_in, H, W), got " + shape_str(x.shape()));
  }
  if (kernel.rank() != 4 || kernel.dim(1) != x.dim(0) || kernel.dim(2) != 3 || kernel.dim(3) != 3) {
    throw ShapeError("conv2d_s2: kernel " + shape_str(kernel.shape()) + " does not fit input " +
                     shape_str(x.shape()));
  }
  const Index cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = kernel.dim(0);
  if (bias.defined() && bias.numel() != cout) {
    throw ShapeError("conv2d_s2: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) +
                     " output channels");
  }
  const Index ho = (h + 1) / 2, wo = (w + 1) / 2;
  std::vector<Scalar> out(static_cast<std::size_t>(cout * ho * wo), Scalar(0));
  const auto xd = x.data();
  const auto kd = kernel.data();
  for (Index co = 0; co < cout; ++co) {
    const Scalar b = bias.defined() ? bias.data()[static_cast<std::size_t>(co)] : Scalar(0);
    for (Index oh = 0; oh < ho; ++oh) {
      for (Index ow = 0; ow < wo; ++ow) {
        Scalar acc = b;
        for (Index ci = 0; ci < cin; ++ci) {
          for (Index kh = 0; kh < 3; ++kh) {
            const Index ih = 2 * oh + kh - 1;
            if (ih < 0 || ih >= h) continue;
            for (Index kw = 0; kw < 3; ++kw) {
              const Index iw = 2 * ow + kw - 1;
              if (iw < 0 || iw >= w) continue;
              acc += kd[static_cast<std::size_t>(((co * cin + ci) * 3 + kh) * 3 + kw)] *
                     xd[static_cast<std::size_t>((ci * h + ih) * w + iw)];
            }
          }
        }
        out[static_cast<std::size_t>((co * ho + oh) * wo + ow)] = acc;
      }
    }
  }
  auto backward = [cin, h, w, cout, ho, wo](TensorNode<Scalar>& self) {
    auto& X = *self.inputs[0];
    auto& K = *self.inputs[1];
    TensorNode<Scalar>* B = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    for (Index co = 0; co < cout; ++co) {
      for (Index oh = 0; oh < ho; ++oh) {
        for (Index ow = 0; ow < wo; ++ow) {
          const Scalar g = self.grad[static_cast<std::size_t>((co * ho + oh) * wo + ow)];
          if (B && B->requires_grad) B->grad[static_cast<std::size_t>(co)] += g;
          for (Index ci = 0; ci < cin; ++ci) {
            for (Index kh = 0; kh < 3; ++kh) {
              const Index ih = 2 * oh + kh - 1;
              if (ih < 0 || ih >= h) continue;
              for (Index kw = 0; kw < 3; ++kw) {
                const Index iw = 2 * ow + kw - 1;
                if (iw < 0 || iw >= w) continue;
                const auto ki = static_cast<std::size_t>(((co * cin + ci) * 3 + kh) * 3 + kw);
                const auto xi = static_cast<std::size_t>((ci * h + ih) * w + iw);
                if (K.requires_grad) K.grad[ki] += g * X.data[xi];
                if (X.requires_grad) X.grad[xi] += g * K.data[ki];
              }
            }
          }
        }
      }
    }
  };
  if (bias.defined()) {
    return detail::make_result<Scalar>({cout, ho, wo}, std::move(out), {x, kernel, bias}, backward);
  }
  return detail::make_result<Scalar>({cout, ho, wo}, std::move(out), {x, kernel}, backward);
}

/// Inverted dropout: in train mode each unit is zeroed with probability `rate`
/// and survivors are scaled by 1/(1-rate). Eval mode returns `x` itself.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, RngStream* rng, bool train_mode) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!train_mode || rate == 0.0) {
    return x;
  }
  if (rng == nullptr) {
    throw std::invalid_argument("dropout: train mode needs a random stream");
  }
  const auto keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  std::vector<Scalar> factors(static_cast<std::size_t>(x.numel()));
  for (auto& f : factors) {
    f = rng->uniform_double() < rate ? Scalar(0) : keep_scale;
  }
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factors[i];
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x},
                                     [factors = std::move(factors)](TensorNode<Scalar>& self) {
                                       auto& X = *self.inputs[0];
                                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                         X.grad[i] += self.grad[i] * factors[i];
                                       }
                                     });
}

/// Dense layer y = x · weight_t + b, where weight_t is the (in, out) transpose
/// of a stored (out, in) weight.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight_t, const Tensor<Scalar>& bias) {
  return add_row(matmul(x, weight_t), bias);
}

}  // namespace stforge
