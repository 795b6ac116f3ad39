// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/moe.hpp"

#include "vlmoe/errors.hpp"

namespace vlmoe {

Tensor FeedForward::forward(const Tensor& x) const {
  Tensor h = gelu(add_row_bias(matmul(x, w1), b1));
  return add_row_bias(matmul(h, w2), b2);
}

RoutingDecision route(const Tensor& x, const Tensor& router_w, int top_k) {
  if (x.rank() != 2) throw ShapeError("route: token matrix must be rank-2");
  const int k_tokens = x.dim(0);
  if (k_tokens == 0) throw ValueError("route: empty token batch");
  const int experts = router_w.dim(1);
  if (top_k < 1 || top_k > experts)
    throw ValueError("route: top_k out of range");

  RoutingDecision d;
  d.probs = softmax(matmul(x, router_w), 1);
  d.topk_idx.resize(static_cast<std::size_t>(k_tokens));
  d.topk_w.resize(static_cast<std::size_t>(k_tokens));
  std::vector<double> counts(static_cast<std::size_t>(experts), 0.0);
  const double* p = d.probs.data().data();
  for (int t = 0; t < k_tokens; ++t) {
    auto idx = topk_indices(p + static_cast<std::size_t>(t) * experts, experts,
                            top_k);
    auto& w = d.topk_w[static_cast<std::size_t>(t)];
    w.reserve(idx.size());
    for (int e : idx) w.push_back(d.probs.at(t, e));
    counts[static_cast<std::size_t>(idx[0])] += 1.0;  // argmax = first of top-k
    d.topk_idx[static_cast<std::size_t>(t)] = std::move(idx);
  }
  for (auto& c : counts) c /= k_tokens;
  d.stats.fraction = std::move(counts);
  d.stats.mean_prob = mean_rows(d.probs);
  d.stats.tokens = k_tokens;
  return d;
}

std::pair<Tensor, RoutingDecision> moe_forward(const Tensor& x,
                                               const MoeLayer& layer) {
  const int experts = layer.expert_count();
  if (layer.top_k < 1 || layer.top_k > experts)
    throw ValueError("moe_forward: top_k out of range");
  RoutingDecision decision = route(x, layer.router_w, layer.top_k);
  const int k_tokens = x.dim(0), d = x.dim(1);

  // Token rows routed to each expert, in token order.
  std::vector<std::vector<int>> expert_rows(static_cast<std::size_t>(experts));
  for (int t = 0; t < k_tokens; ++t)
    for (int e : decision.topk_idx[static_cast<std::size_t>(t)])
      expert_rows[static_cast<std::size_t>(e)].push_back(t);

  std::vector<Tensor> blocks, weights;
  std::vector<std::vector<int>> scatter_rows;
  for (int e = 0; e < experts; ++e) {
    const auto& rows = expert_rows[static_cast<std::size_t>(e)];
    if (rows.empty()) continue;  // inactive expert: no compute, no gradient
    Tensor xe = gather_rows(x, rows);
    Tensor ye = layer.experts[static_cast<std::size_t>(e)].forward(xe);
    std::vector<std::pair<int, int>> coords;
    coords.reserve(rows.size());
    for (int t : rows) coords.emplace_back(t, e);
    blocks.push_back(std::move(ye));
    weights.push_back(gather_entries(decision.probs, coords));
    scatter_rows.push_back(rows);
  }
  Tensor out = weighted_scatter_rows(k_tokens, d, blocks, scatter_rows,
                                     weights);
  return {std::move(out), std::move(decision)};
}

Tensor load_balance_loss(const LoadBalanceStats& stats) {
  const int experts = static_cast<int>(stats.fraction.size());
  Tensor f = Tensor::from_data({experts}, stats.fraction);
  return scale(sum(mul(f, stats.mean_prob)), static_cast<double>(experts));
}

std::vector<FeedForward> clone_experts(const FeedForward& ffn, int count) {
  if (count < 1) throw ValueError("clone_experts: expert count must be >= 1");
  std::vector<FeedForward> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    FeedForward c;
    c.w1 = ffn.w1.clone();
    c.b1 = ffn.b1.clone();
    c.w2 = ffn.w2.clone();
    c.b2 = ffn.b2.clone();
    out.push_back(std::move(c));
  }
  return out;
}

FeedForward make_feed_forward(int d, int hidden, Rng& rng) {
  FeedForward f;
  f.w1 = Tensor::zeros({d, hidden}, true);
  f.b1 = Tensor::zeros({hidden}, true);
  f.w2 = Tensor::zeros({hidden, d}, true);
  f.b2 = Tensor::zeros({d}, true);
  for (auto& v : f.w1.mutable_data()) v = rng.normal(0.0, 0.02);
  for (auto& v : f.w2.mutable_data()) v = rng.normal(0.0, 0.02);
  return f;
}

}  // namespace vlmoe
