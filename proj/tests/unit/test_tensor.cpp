#include "doctest.h"

#include <cmath>
#include <numeric>

#include "stforge/tensor/gradcheck.hpp"
#include "stforge/tensor/ops.hpp"
#include "stforge/tensor/rng.hpp"
#include "stforge/tensor/weight_norm.hpp"
#include "support/op_gradcheck.hpp"

using namespace stforge;
using test::random_tensor;

namespace {

template <typename Scalar>
void check_all_ops() {
  for (const auto& r : test::op_gradcheck_suite<Scalar>()) {
    INFO(r.op);
    CHECK(r.worst < GradCheckTolerance<Scalar>::kMaxRelError);
  }
}

}  // namespace

TEST_CASE("Philox4x32-10 matches the published known-answer vectors") {
  const auto zero = RngStream::philox_block({0, 0, 0, 0}, {0, 0});
  CHECK(zero[0] == 0x6627e8d5u);
  CHECK(zero[1] == 0xe169c58du);
  CHECK(zero[2] == 0xbc57ac4cu);
  CHECK(zero[3] == 0x9b00dbd8u);
  const auto ones = RngStream::philox_block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                            {0xffffffffu, 0xffffffffu});
  CHECK(ones[0] == 0x408f276du);
  CHECK(ones[1] == 0x41c83b0eu);
  CHECK(ones[2] == 0xa20bc7c6u);
  CHECK(ones[3] == 0x6d5451fdu);
}

TEST_CASE("rng streams are reproducible and distinct") {
  RngStream a(42, 3), b(42, 3), c(42, 4);
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    const auto va = a.next_u32();
    CHECK(va == b.next_u32());
    differs = differs || va != c.next_u32();
  }
  CHECK(differs);
}

TEST_CASE("tensor construction validates shapes") {
  CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>::zeros({2, 0}), ShapeError);
  auto t = Tensor<float>::zeros({2, 3}, true);
  CHECK(t.numel() == 6);
  CHECK(t.grad().size() == 6);
}

TEST_CASE("matmul examples") {
  auto eye = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  auto c = matmul(eye, b);
  CHECK(std::vector<float>(c.data().begin(), c.data().end()) == std::vector<float>{1, 2, 3, 4});
  auto sel = matmul(Tensor<float>::from({1, 2}, {1, 0}), Tensor<float>::from({2, 1}, {5, 7}));
  CHECK(sel.shape() == Shape{1, 1});
  CHECK(sel.item() == 5.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("and (2, 3)") != std::string::npos);
  }
}

TEST_CASE("conv2d_s2 output shapes") {
  auto k1 = Tensor<float>::zeros({16, 1, 3, 3});
  CHECK(conv2d_s2(Tensor<float>::zeros({1, 100, 40}), k1).shape() == Shape{16, 50, 20});
  CHECK(conv2d_s2(Tensor<float>::zeros({1, 7, 40}), k1).shape() == Shape{16, 4, 20});
  CHECK(conv2d_s2(Tensor<float>::zeros({1, 1, 1}), k1).shape() == Shape{16, 1, 1});
  CHECK_THROWS_AS(conv2d_s2(Tensor<float>::zeros({100, 40}), k1), ShapeError);
}

TEST_CASE("conv2d_s2 of zeros with zero bias is zero") {
  RngStream rng(5);
  auto k = random_tensor<float>({16, 1, 3, 3}, rng);
  auto y = conv2d_s2(Tensor<float>::zeros({1, 9, 8}), k, Tensor<float>::zeros({16}));
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d_s2 matches a direct stencil evaluation") {
  RngStream rng(11);
  auto x = random_tensor<float>({1, 4, 4}, rng);
  auto k = random_tensor<float>({1, 1, 3, 3}, rng);
  auto y = conv2d_s2(x, k);
  // output (0,0) sees input rows/cols {-1,0,1}: only (0..1, 0..1) are inside.
  float expect = 0.0f;
  for (int kh = 1; kh < 3; ++kh)
    for (int kw = 1; kw < 3; ++kw) expect += k.data()[kh * 3 + kw] * x.data()[(kh - 1) * 4 + (kw - 1)];
  CHECK(y.data()[0] == doctest::Approx(expect).epsilon(1e-6));
  // output (1,1) is centred on input (2,2).
  float centre = 0.0f;
  for (int kh = 0; kh < 3; ++kh)
    for (int kw = 0; kw < 3; ++kw) centre += k.data()[kh * 3 + kw] * x.data()[(1 + kh) * 4 + (1 + kw)];
  CHECK(y.data()[3] == doctest::Approx(centre).epsilon(1e-6));
}

TEST_CASE("softmax examples") {
  auto u = softmax(Tensor<float>::from({3}, {0, 0, 0}), 0);
  for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  auto sat = softmax(Tensor<float>::from({2}, {5.0f, 5.0f - 1000.0f}), 0);
  CHECK(sat.data()[0] == doctest::Approx(1.0));
  CHECK(sat.data()[1] == doctest::Approx(0.0));
  RngStream rng(1);
  auto r = softmax(random_tensor<double>({5}, rng, -3, 3), 0);
  const double total = std::accumulate(r.data().begin(), r.data().end(), 0.0);
  CHECK(std::abs(total - 1.0) < 1e-6);
  CHECK_THROWS_AS(softmax(Tensor<float>::from({2}, {1.0f, NAN}), 0), std::domain_error);
}

TEST_CASE("softmax is a distribution along the chosen axis") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng(seed, 12);
    auto x = random_tensor<float>({3, 7}, rng, -10, 10);
    for (Index axis : {Index{0}, Index{1}}) {
      auto y = softmax(x, axis);
      const auto s = detail::split_axis(y.shape(), axis, "test");
      for (Index o = 0; o < s.outer; ++o) {
        for (Index j = 0; j < s.inner; ++j) {
          double total = 0.0;
          for (Index i = 0; i < s.extent; ++i) {
            const float v = y.data()[static_cast<std::size_t>((o * s.extent + i) * s.inner + j)];
            CHECK(v >= 0.0f);
            total += v;
          }
          CHECK(std::abs(total - 1.0) < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("masked softmax puts exactly zero on masked positions") {
  const Mask mask{1, 0, 1};
  auto y = softmax(Tensor<float>::from({3}, {0.3f, 9.0f, -1.0f}), 0, &mask);
  CHECK(y.data()[1] == 0.0f);
  CHECK(y.data()[0] + y.data()[2] == doctest::Approx(1.0));
  const Mask none{0, 0, 0};
  CHECK_THROWS(softmax(Tensor<float>::from({3}, {0, 0, 0}), 0, &none));
}

TEST_CASE("elementwise examples") {
  CHECK(tanh(Tensor<float>::scalar(0.0f)).item() == 0.0f);
  auto c = mean_over_axis(Tensor<float>::full({4, 3}, 2.5f), 0);
  CHECK(c.shape() == Shape{1, 3});
  for (float v : c.data()) CHECK(v == 2.5f);
  CHECK_THROWS_AS(concat<float>({Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({3, 3})}, 1),
                  ShapeError);
  CHECK_THROWS_AS(concat<float>({Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2, 3, 1})}, 0),
                  ShapeError);
  CHECK_THROWS_AS(embedding_lookup(Tensor<float>::zeros({3, 2}), std::vector<int>{3}),
                  std::out_of_range);
}

TEST_CASE("dropout semantics") {
  RngStream rng(9);
  auto x = random_tensor<float>({50, 50}, rng);
  CHECK(dropout(x, 0.0, &rng, true).node_ptr() == x.node_ptr());
  auto eval = dropout(x, 0.2, &rng, false);
  CHECK(std::equal(eval.data().begin(), eval.data().end(), x.data().begin()));
  CHECK_THROWS_AS(dropout(x, 1.0, &rng, true), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, -0.1, &rng, true), std::invalid_argument);

  auto ones = Tensor<float>::full({100000}, 1.0f);
  RngStream mc(2024);
  auto dropped = dropout(ones, 0.2, &mc, true);
  std::size_t kept = 0;
  for (float v : dropped.data()) {
    if (v != 0.0f) {
      ++kept;
      CHECK(v == doctest::Approx(1.25f));
    }
  }
  const double fraction = static_cast<double>(kept) / 1e5;
  CHECK(fraction > 0.79);
  CHECK(fraction < 0.81);
}

TEST_CASE("backward examples") {
  RngStream rng(3);
  auto w = random_tensor<float>({2, 3, 2}, rng);
  auto loss = sum(w);
  backward(loss);
  for (float g : w.grad()) CHECK(g == 1.0f);

  auto v = random_tensor<double>({4, 2}, rng);
  auto sq = sum(mul(v, v));
  backward(sq);
  for (std::size_t i = 0; i < v.data().size(); ++i) CHECK(v.grad()[i] == doctest::Approx(2.0 * v.data()[i]));
}

TEST_CASE("backward rejects non-scalar roots and unflagged repeats") {
  auto w = Tensor<float>::full({3}, 2.0f, true);
  auto y = scale(w, 3.0f);
  CHECK_THROWS_AS(backward(y), ShapeError);

  auto loss = sum(y);
  backward(loss);
  CHECK(w.grad()[0] == 3.0f);
  CHECK_THROWS_AS(backward(loss), std::logic_error);
  backward(loss, RepeatBackward::kRezero);
  CHECK(w.grad()[0] == 3.0f);
  backward(loss, RepeatBackward::kAccumulate);
  CHECK(w.grad()[0] == 6.0f);
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0f);
}

TEST_CASE("gradient contributions from reuse are summed") {
  auto w = Tensor<double>::from({2}, {1.5, -2.0}, true);
  auto loss = sum(add(mul(w, w), scale(w, 3.0)));  // d/dw = 2w + 3
  backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(6.0));
  CHECK(w.grad()[1] == doctest::Approx(-1.0));
  // separate losses accumulate additively into leaves
  auto second = sum(w);
  backward(second);
  CHECK(w.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("every reachable trainable tensor gets a grad") {
  auto a = Tensor<float>::full({2, 2}, 1.0f, true);
  auto unused = Tensor<float>::full({2, 2}, 1.0f, true);
  auto mid = tanh(a);
  auto loss = sum(mid);
  backward(loss);
  CHECK(a.has_grad());
  CHECK(mid.has_grad());
  CHECK(mid.grad().size() == 4);
}

TEST_CASE("no-grad mode records no graph") {
  auto w = Tensor<float>::full({2}, 1.0f, true);
  NoGradGuard guard;
  auto y = sum(w);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("weight norm examples and invariant") {
  auto w1 = weight_norm_materialize(Tensor<float>::from({1, 2}, {3, 4}, true), Tensor<float>::from({1}, {5}, true));
  CHECK(w1.data()[0] == doctest::Approx(3.0f));
  CHECK(w1.data()[1] == doctest::Approx(4.0f));
  auto w2 = weight_norm_materialize(Tensor<float>::from({1, 2}, {1, 0}), Tensor<float>::from({1}, {2}));
  CHECK(w2.data()[0] == 2.0f);
  CHECK(w2.data()[1] == 0.0f);
  CHECK_THROWS(WeightNormParam<float>::from_weight(Tensor<float>::from({2, 2}, {1, 1, 0, 0})));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed, 13);
    auto p = WeightNormParam<double>::from_weight(random_tensor<double>({5, 3, 2}, rng));
    for (auto& gv : p.g.data()) gv = 4.0 * rng.uniform_double() - 2.0;
    auto w = weight_norm_materialize(p);
    for (Index r = 0; r < 5; ++r) {
      double sq = 0.0;
      for (Index c = 0; c < 6; ++c) sq += std::pow(w.data()[static_cast<std::size_t>(r * 6 + c)], 2);
      const double g = std::abs(p.g.data()[static_cast<std::size_t>(r)]);
      CHECK(std::abs(std::sqrt(sq) - g) <= 1e-5 * std::max(g, 1e-12));
    }
  }
}

TEST_CASE("finite difference oracle examples") {
  auto theta = Tensor<double>::from({3}, {0.5, -1.0, 2.0});
  auto ones = finite_diff_grad<double>(
      [&] { return std::accumulate(theta.data().begin(), theta.data().end(), 0.0); }, theta, 1e-4);
  for (double g : ones.data()) CHECK(std::abs(g - 1.0) < 1e-8);
  auto x = Tensor<double>::scalar(3.0);
  auto d = finite_diff_grad<double>([&] { return x.item() * x.item(); }, x, 1e-4);
  CHECK(std::abs(d.item() - 6.0) < 1e-6);
  CHECK(x.item() == 3.0);
}

TEST_CASE("every op agrees with central differences at 32-bit") { check_all_ops<float>(); }

TEST_CASE("every op agrees with central differences in 64-bit check mode") { check_all_ops<double>(); }

TEST_CASE("graph evaluation is deterministic given the seed") {
  auto run = [] {
    RngStream init(77);
    auto x = random_tensor<float>({8, 8}, init);
    auto w = random_tensor<float>({8, 8}, init);
    RngStream drop(78);
    auto y = softmax(dropout(tanh(matmul(x, w)), 0.2, &drop, true), 1);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  CHECK(run() == run());
}
