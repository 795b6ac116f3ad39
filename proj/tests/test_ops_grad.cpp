// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference gradient checks for every differentiable op: analytic
// gradients must match central differences at randomly sampled coordinates
// with relative error below 1e-6, inputs sampled away from non-smooth points.
#include <cmath>
#include <functional>
#include <map>

#include "doctest.h"
#include "vlmoe/ops.hpp"
#include "vlmoe/rng.hpp"
#include "vlmoe/tensor.hpp"

using namespace vlmoe;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0,
                     bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.mutable_data()) v = rng.normal(0.0, stddev);
  return t;
}

// random linear functional makes the scalar loss sensitive to every output
Tensor project(const Tensor& out, Rng& rng) {
  Tensor w = Tensor::zeros(out.shape());
  for (auto& v : w.mutable_data()) v = rng.normal();
  return sum(mul(out, w));
}

void check_gradients(const std::vector<Tensor>& inputs,
                     const std::function<Tensor()>& loss_fn, Rng& rng,
                     int n_coords = 20, double eps = 1e-5,
                     double tol = 1e-6) {
  std::map<const TensorImpl*, std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(&tape);
    Tensor loss = loss_fn();
    tape.backward(loss, false);
    for (const auto& in : inputs) {
      const auto* g = tape.grad_of(in);
      analytic[in.impl()] =
          g ? *g : std::vector<double>(in.numel(), 0.0);
    }
  }
  for (const auto& in : inputs) {
    for (int c = 0; c < n_coords; ++c) {
      const std::size_t idx =
          static_cast<std::size_t>(rng.next_u64() % in.numel());
      auto& data = const_cast<Tensor&>(in).mutable_data();
      const double saved = data[idx];
      double lp, lm;
      {
        NoGradGuard no_grad;
        data[idx] = saved + eps;
        lp = loss_fn().value();
        data[idx] = saved - eps;
        lm = loss_fn().value();
        data[idx] = saved;
      }
      const double numeric = (lp - lm) / (2 * eps);
      const double a = analytic[in.impl()][idx];
      const double rel =
          std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric),
                                           1e-8);
      INFO("coordinate " << idx << " analytic " << a << " numeric "
                         << numeric);
      CHECK(rel < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul gradients") {
  Rng rng(11);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  check_gradients({a, b}, [&] {
    Rng p(1);
    return project(matmul(a, b), p);
  }, rng);
}

TEST_CASE("elementwise gradients") {
  Rng rng(12);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  check_gradients({a, b}, [&] {
    Rng p(2);
    return project(add(mul(a, b), scale(a, 0.7)), p);
  }, rng);
}

TEST_CASE("row bias gradients") {
  Rng rng(13);
  Tensor x = random_tensor({5, 6}, rng);
  Tensor bias = random_tensor({6}, rng);
  check_gradients({x, bias}, [&] {
    Rng p(3);
    return project(add_row_bias(x, bias), p);
  }, rng);
}

TEST_CASE("gelu gradients") {
  Rng rng(14);
  Tensor x = random_tensor({4, 4}, rng, 1.5);
  check_gradients({x}, [&] {
    Rng p(4);
    return project(gelu(x), p);
  }, rng);
}

TEST_CASE("softmax gradients on both axes") {
  Rng rng(15);
  Tensor x = random_tensor({4, 5}, rng);
  check_gradients({x}, [&] {
    Rng p(5);
    return project(softmax(x, 1), p);
  }, rng);
  check_gradients({x}, [&] {
    Rng p(6);
    return project(softmax(x, 0), p);
  }, rng);
}

TEST_CASE("layer_norm gradients") {
  Rng rng(16);
  Tensor x = random_tensor({4, 8}, rng, 2.0);
  Tensor gain = random_tensor({8}, rng);
  Tensor bias = random_tensor({8}, rng);
  check_gradients({x, gain, bias}, [&] {
    Rng p(16);
    return project(layer_norm(x, gain, bias), p);
  }, rng, 20, 1e-5, 2e-6);
}

TEST_CASE("cross entropy gradients") {
  Rng rng(17);
  Tensor logits = random_tensor({6, 9}, rng, 2.0);
  std::vector<int> targets = {1, 4, 0, 8, 2, 7};
  std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 1};
  check_gradients({logits}, [&] {
    return cross_entropy_logits(logits, targets, mask);
  }, rng);
}

TEST_CASE("gather and scatter gradients") {
  Rng rng(18);
  Tensor x = random_tensor({6, 4}, rng);
  std::vector<int> rows = {4, 1, 1, 5};
  check_gradients({x}, [&] {
    Rng p(7);
    return project(gather_rows(x, rows), p);
  }, rng);

  std::vector<std::pair<int, int>> coords = {{0, 1}, {5, 3}, {2, 2}, {0, 1}};
  check_gradients({x}, [&] {
    Rng p(8);
    return project(gather_entries(x, coords), p);
  }, rng);

  Tensor block_a = random_tensor({3, 4}, rng);
  Tensor block_b = random_tensor({2, 4}, rng);
  Tensor w_a = random_tensor({3}, rng);
  Tensor w_b = random_tensor({2}, rng);
  check_gradients({block_a, block_b, w_a, w_b}, [&] {
    Rng p(9);
    return project(weighted_scatter_rows(6, 4, {block_a, block_b},
                                         {{0, 2, 5}, {1, 2}}, {w_a, w_b}),
                   p);
  }, rng);
}

TEST_CASE("shape op gradients") {
  Rng rng(19);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({2, 4}, rng);
  check_gradients({a, b}, [&] {
    Rng p(10);
    return project(concat({a, b}, 0), p);
  }, rng);

  Tensor c = random_tensor({3, 2}, rng);
  check_gradients({a, c}, [&] {
    Rng p(11);
    return project(concat({a, c}, 1), p);
  }, rng);

  check_gradients({a}, [&] {
    Rng p(12);
    return project(transpose(slice_cols(slice_rows(a, 0, 2), 1, 3)), p);
  }, rng);

  check_gradients({a}, [&] {
    Rng p(13);
    return project(mean_rows(a), p);
  }, rng);
}

TEST_CASE("embedding lookup gradients") {
  Rng rng(20);
  Tensor table = random_tensor({10, 5}, rng);
  std::vector<int> ids = {3, 3, 9, 0};
  check_gradients({table}, [&] {
    Rng p(14);
    return project(embedding_lookup(table, ids), p);
  }, rng);
}

TEST_CASE("bilinear grid interpolation gradients and oracles") {
  Rng rng(21);
  const int g1 = 4, c = 3;
  Tensor grid = random_tensor({g1 * g1, c}, rng);
  check_gradients({grid}, [&] {
    Rng p(15);
    return project(interpolate_grid_bilinear(grid, g1, 7), p);
  }, rng);

  SUBCASE("identity resampling is exact") {
    Tensor same = interpolate_grid_bilinear(grid, g1, g1);
    for (std::size_t i = 0; i < grid.numel(); ++i)
      CHECK(same.data()[i] == grid.data()[i]);
  }
  SUBCASE("constants preserved") {
    Tensor flat = Tensor::full({g1 * g1, 2}, 3.25);
    Tensor out = interpolate_grid_bilinear(flat, g1, 9);
    for (double v : out.data())
      CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
  }
  SUBCASE("linear ramp closed form, 24 to 36") {
    const int a = 24, b = 36;
    Tensor ramp = Tensor::zeros({a * a, 1});
    for (int y = 0; y < a; ++y)
      for (int x = 0; x < a; ++x)
        ramp.mutable_data()[static_cast<std::size_t>(y * a + x)] = y;
    Tensor out = interpolate_grid_bilinear(ramp, a, b);
    const double slope = static_cast<double>(a - 1) / (b - 1);
    for (int y = 0; y < b; ++y)
      for (int x = 0; x < b; ++x)
        CHECK(out.at(y * b + x, 0) ==
              doctest::Approx(y * slope).epsilon(1e-9));
  }
  SUBCASE("coincident sample points reproduce grid values") {
    // g2 = 2*g1 - 1 places every source node on an output node
    Tensor out = interpolate_grid_bilinear(grid, g1, 2 * g1 - 1);
    for (int y = 0; y < g1; ++y)
      for (int x = 0; x < g1; ++x)
        for (int ch = 0; ch < c; ++ch)
          CHECK(out.at((2 * y) * (2 * g1 - 1) + 2 * x, ch) ==
                doctest::Approx(grid.at(y * g1 + x, ch)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(interpolate_grid_bilinear(grid, g1, 1), ValueError);
}
TEST_CASE("matmul_nt matches matmul with transpose") {
  Rng rng(30);
  Tensor a = random_tensor({5, 7}, rng);
  Tensor b = random_tensor({4, 7}, rng);
  Tensor nt = matmul_nt(a, b);
  Tensor ref = matmul(a, transpose(b));
  REQUIRE(nt.shape() == ref.shape());
  for (std::size_t i = 0; i < nt.numel(); ++i)
    CHECK(nt.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  check_gradients({a, b}, [&] {
    Rng p(31);
    return project(matmul_nt(a, b), p);
  }, rng);
}
