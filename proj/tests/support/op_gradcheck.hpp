#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "stforge/tensor/gradcheck.hpp"
#include "stforge/tensor/ops.hpp"
#include "stforge/tensor/rng.hpp"
#include "stforge/tensor/weight_norm.hpp"

namespace stforge::test {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<Scalar> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<Scalar>(lo + (hi - lo) * rng.uniform_double());
  return Tensor<Scalar>::from(std::move(shape), std::move(values), true);
}

// Weighted sum with fixed random weights so every output coordinate carries a
// distinct upstream gradient.
template <typename Scalar>
Tensor<Scalar> weighted_probe(const Tensor<Scalar>& out, std::uint64_t seed) {
  RngStream rng(seed, 99);
  std::vector<Scalar> w(static_cast<std::size_t>(out.numel()));
  for (auto& v : w) v = static_cast<Scalar>(rng.uniform_double() * 2.0 - 1.0);
  return sum(mul(out, Tensor<Scalar>::from(out.shape(), std::move(w))));
}

template <typename Scalar, typename Op>
double worst_over_instances(int instances, Op&& op) {
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    worst = std::max(worst, op(static_cast<std::uint64_t>(k)));
  }
  return worst;
}

struct OpCheck {
  std::string op;
  double worst = 0.0;
};

/// Worst relative error per op family over `instances` seeded cases.
template <typename Scalar>
std::vector<OpCheck> op_gradcheck_suite(int instances = 20) {
  const int kInstances = instances;
  std::vector<OpCheck> out;

  {
    const double worst = worst_over_instances<Scalar>(kInstances, [](std::uint64_t seed) {
      RngStream rng(seed, 1);
      auto a = random_tensor<Scalar>({3, 4}, rng);
      auto b = random_tensor<Scalar>({4, 2}, rng);
      return check_gradients<Scalar>([&] { return weighted_probe(matmul(a, b), seed); },
                                     {{"a", a}, {"b", b}})
          .max_rel_error;
    });
    out.push_back({"matmul", worst});
  }
  {
    const double worst = worst_over_instances<Scalar>(kInstances, [](std::uint64_t seed) {
      RngStream rng(seed, 2);
      auto a = random_tensor<Scalar>({3, 5}, rng);
      auto b = random_tensor<Scalar>({3, 5}, rng);
      auto bias = random_tensor<Scalar>({5}, rng);
      auto build = [&] {
        auto t = tanh(add(a, b));
        auto s = sigmoid(mul(a, b));
        auto c = concat<Scalar>({t, s, add_row(a, bias)}, 1);
        auto m = mean_over_axis(c, 0);
        auto r = reshape(permute(slice(c, 1, 2, 9), {1, 0}), {27});
        return add(weighted_probe(m, seed), weighted_probe(scale(r, Scalar(0.5)), seed + 1));
      };
      return check_gradients<Scalar>(build, {{"a", a}, {"b", b}, {"bias", bias}}).max_rel_error;
    });
    out.push_back({"elementwise family", worst});
  }
  {
    const double worst = worst_over_instances<Scalar>(kInstances, [](std::uint64_t seed) {
      RngStream rng(seed, 3);
      auto x = random_tensor<Scalar>({4, 6}, rng, -2.0, 2.0);
      const Mask mask{1, 0, 1, 1};
      auto build = [&] {
        auto sm = softmax(x, 1);
        auto lsm = log_softmax(x, 0);
        auto msm = softmax(transpose(x), 1, &mask);
        auto mm = mean_over_axis(x, 0, &mask);
        return add(add(weighted_probe(sm, seed), weighted_probe(lsm, seed + 1)),
                   add(weighted_probe(msm, seed + 2), weighted_probe(mm, seed + 3)));
      };
      return check_gradients<Scalar>(build, {{"x", x}}).max_rel_error;
    });
    out.push_back({"masked mean, softmax, log_softmax", worst});
  }
  {
    const double worst = worst_over_instances<Scalar>(kInstances, [](std::uint64_t seed) {
      RngStream rng(seed, 4);
      auto table = random_tensor<Scalar>({6, 3}, rng);
      const std::vector<int> ids{2, 5, 2, 0};
      return check_gradients<Scalar>([&] { return weighted_probe(embedding_lookup(table, ids), seed); },
                                     {{"table", table}})
          .max_rel_error;
    });
    out.push_back({"embedding lookup with repeated ids", worst});
  }
  {
    const double worst = worst_over_instances<Scalar>(kInstances, [](std::uint64_t seed) {
      RngStream rng(seed, 5);
      auto x = random_tensor<Scalar>({2, 5, 6}, rng);
      auto k = random_tensor<Scalar>({3, 2, 3, 3}, rng);
      auto b = random_tensor<Scalar>({3}, rng);
      return check_gradients<Scalar>([&] { return weighted_probe(conv2d_s2(x, k, b), seed); },
                                     {{"x", x}, {"k", k}, {"b", b}})
          .max_rel_error;
    });
    out.push_back({"conv2d_s2", worst});
  }
  {
    const double worst = worst_over_instances<Scalar>(kInstances, [](std::uint64_t seed) {
      RngStream rng(seed, 6);
      auto x = random_tensor<Scalar>({4, 4}, rng);
      auto build = [&] {
        RngStream mask_rng(seed, 7);
        return weighted_probe(dropout(x, 0.3, &mask_rng, true), seed);
      };
      return check_gradients<Scalar>(build, {{"x", x}}).max_rel_error;
    });
    out.push_back({"dropout with a fixed stream", worst});
  }
  {
    const double worst = worst_over_instances<Scalar>(kInstances, [](std::uint64_t seed) {
      RngStream rng(seed, 8);
      auto p = WeightNormParam<Scalar>::from_weight(random_tensor<Scalar>({4, 4}, rng));
      for (auto& gv : p.g.data()) gv = static_cast<Scalar>(0.5 + rng.uniform_double());
      return check_gradients<Scalar>([&] { return weighted_probe(weight_norm_materialize(p), seed); },
                                     {{"v", p.v}, {"g", p.g}})
          .max_rel_error;
    });
    out.push_back({"weight norm", worst});
  }
  return out;
}

}  // namespace stforge::test
