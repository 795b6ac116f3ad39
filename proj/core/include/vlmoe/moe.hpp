// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "vlmoe/ops.hpp"
#include "vlmoe/rng.hpp"
#include "vlmoe/tensor.hpp"

namespace vlmoe {

// Two-layer gelu feed-forward: y = gelu(x.W1 + b1).W2 + b2.
// Also the expert unit: an ensemble is a vector of independent copies.
struct FeedForward {
  Tensor w1;  // [D x H]
  Tensor b1;  // [H]
  Tensor w2;  // [H x D]
  Tensor b2;  // [D]

  Tensor forward(const Tensor& x) const;
};

// Per-batch load statistics of one MoE layer.
//   fraction[i]: share of tokens whose argmax expert is i (hard count)
//   mean_prob:   per-expert mean routing probability, graph-connected so the
//                balance loss differentiates through it
struct LoadBalanceStats {
  std::vector<double> fraction;  // F, sums to 1
  Tensor mean_prob;              // G, rank-1 [E], sums to 1
  int tokens = 0;                // K
};

struct RoutingDecision {
  Tensor probs;                            // [K x E], rows sum to 1
  std::vector<std::vector<int>> topk_idx;  // K rows of k distinct experts
  std::vector<std::vector<double>> topk_w; // matching raw probabilities
  LoadBalanceStats stats;
};

// probs = softmax(x . router_w) per token; top-k by probability with ties to
// the lower index; stats over the K tokens of x.
RoutingDecision route(const Tensor& x, const Tensor& router_w, int top_k);

struct MoeLayer {
  Tensor router_w;                  // [D x E]
  std::vector<FeedForward> experts; // identical shapes
  int top_k = 2;

  int expert_count() const { return static_cast<int>(experts.size()); }
};

// Per token: sum over its top-k experts of prob_i * expert_i(token), with raw
// (unrenormalized) softmax probabilities. Experts outside a token's top-k see
// neither the token nor its gradient.
std::pair<Tensor, RoutingDecision> moe_forward(const Tensor& x,
                                               const MoeLayer& layer);

// E * sum_i F_i * G_i. F enters as a constant of the discrete assignment;
// gradients flow through G only.
Tensor load_balance_loss(const LoadBalanceStats& stats);

// E deep copies, bitwise-equal to the source at creation.
std::vector<FeedForward> clone_experts(const FeedForward& ffn, int count);

FeedForward make_feed_forward(int d, int hidden, Rng& rng);

}  // namespace vlmoe
