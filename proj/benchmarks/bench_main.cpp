// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "vlmoe/model.hpp"
#include "vlmoe/moe.hpp"
#include "vlmoe/ops.hpp"
#include "vlmoe/poisson.hpp"
#include "vlmoe/rng.hpp"

using namespace vlmoe;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, bool grad = false) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (auto& v : t.mutable_data()) v = rng.normal();
  return t;
}

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.vocab = 200;
  return cfg;  // desk defaults: D=64, L=4, patch 4 on 32 px images
}

void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Tensor a = random_tensor({80, n}, 1);
  Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 80 * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_moe_forward(benchmark::State& state) {
  Rng rng(3);
  const int d = 64, experts = static_cast<int>(state.range(0));
  MoeLayer layer;
  layer.top_k = 2;
  layer.router_w = random_tensor({d, experts}, 4, true);
  layer.experts = clone_experts(make_feed_forward(d, 128, rng), experts);
  Tensor x = random_tensor({80, d}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(moe_forward(x, layer));
}
BENCHMARK(BM_moe_forward)->Arg(2)->Arg(4)->Arg(8);

void BM_model_forward(benchmark::State& state) {
  ModelConfig cfg = desk_config();
  Model m = Model::init(cfg, 6);
  Rng rng(7);
  Image img(32, 32, 3);
  for (auto& v : img.px) v = rng.uniform_int(1, 254);
  std::vector<int> tokens;
  for (int i = 0; i < 14; ++i) tokens.push_back(rng.uniform_int(0, 199));
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(img, tokens));
}
BENCHMARK(BM_model_forward);

void BM_forward_backward(benchmark::State& state) {
  ModelConfig cfg = desk_config();
  Model dense = Model::init(cfg, 8);
  Rng srng(9);
  Model m = sparsify(dense, 4, 2, 2, 0.01, srng);
  Rng rng(10);
  Image img(32, 32, 3);
  for (auto& v : img.px) v = rng.uniform_int(1, 254);
  SequenceExample ex;
  ex.image = &img;
  for (int i = 0; i < 14; ++i)
    ex.text_tokens.push_back(rng.uniform_int(0, 199));
  const int p = cfg.visual_tokens();
  const int n = static_cast<int>(ex.text_tokens.size());
  ex.labels.assign(static_cast<std::size_t>(p + n), 0);
  ex.loss_mask.assign(static_cast<std::size_t>(p + n), 0);
  for (int i = 6; i + 1 < n; ++i) {
    ex.labels[static_cast<std::size_t>(p + i)] =
        ex.text_tokens[static_cast<std::size_t>(i + 1)];
    ex.loss_mask[static_cast<std::size_t>(p + i)] = 1;
  }
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(&tape);
    ModelOutput out = m.forward(img, ex.text_tokens);
    Tensor loss = autoregressive_loss_fast(m, out, ex);
    tape.backward(loss, false);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_forward_backward);

void BM_poisson_blend(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(11);
  Image dst(32, 32, 3);
  for (auto& v : dst.px) v = rng.uniform_int(1, 254);
  Image src(side, side, 3);
  for (auto& v : src.px) v = rng.uniform_int(1, 254);
  std::vector<uint8_t> mask(static_cast<std::size_t>(side) * side, 0);
  for (int y = 1; y < side - 1; ++y)
    for (int x = 1; x < side - 1; ++x)
      mask[static_cast<std::size_t>(y) * side + x] = 1;
  for (auto _ : state)
    benchmark::DoNotOptimize(poisson_blend(src, dst, mask, 4, 4));
}
BENCHMARK(BM_poisson_blend)->Arg(8)->Arg(12);

}  // namespace

BENCHMARK_MAIN();
