// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vlmoe/image.hpp"
#include "vlmoe/moe.hpp"
#include "vlmoe/ops.hpp"
#include "vlmoe/rng.hpp"
#include "vlmoe/tensor.hpp"

namespace vlmoe {

struct ModelConfig {
  int hidden_size = 64;   // D
  int layers = 4;         // L
  int heads = 4;
  int vocab = 128;
  int experts = 4;        // E (used once sparsified)
  int top_k = 2;
  int moe_period = 2;     // every moe_period-th block becomes MoE
  int patch_size = 4;
  int image_size = 32;
  int patch_channels = 48;  // C, encoder channel size
  int ffn_hidden = 128;     // H
  int lora_rank = 8;        // 0 disables adapters
  double lora_scale = 1.0;
  double aux_alpha = 0.01;  // balance coefficient for the auxiliary loss
  int max_text_len = 48;
  bool visual_bidirectional = false;  // default: fully causal
  double layer_norm_eps = 1e-5;

  int grid() const { return image_size / patch_size; }
  int visual_tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;  // throws ValueError / ShapeError
};

// Low-rank additive adapter on a frozen base matrix:
//   adapted(x) = x.W + scale * (x.A).B
// B starts at zero so the wrapped layer initially equals the base layer.
struct LoraAdapter {
  Tensor a;  // [D x r]
  Tensor b;  // [r x D]
  double scale = 1.0;

  int rank() const { return a.dim(1); }
};

LoraAdapter make_lora(int d, int rank, double scale, Rng& rng);
Tensor lora_linear(const Tensor& x, const Tensor& w,
                   const std::optional<LoraAdapter>& adapter);

struct AttentionBlock {
  Tensor wq, wk, wv, wo;  // [D x D]
  std::optional<LoraAdapter> lora_q, lora_v;
};

struct Block {
  Tensor ln1_gain, ln1_bias;
  AttentionBlock attn;
  Tensor ln2_gain, ln2_bias;
  FeedForward ffn;               // dense path
  std::optional<MoeLayer> moe;   // replaces ffn when present

  bool is_moe() const { return moe.has_value(); }
};

// One training example: an image plus a text token sequence, with next-token
// labels and a mask that marks the supervised (answer) positions. labels and
// loss_mask cover the concatenated sequence of length P + N; the mask is
// false at every visual position.
struct SequenceExample {
  const Image* image = nullptr;
  std::vector<int> text_tokens;   // length N
  std::vector<int> labels;        // length P + N
  std::vector<uint8_t> loss_mask; // length P + N
  std::string granularity;        // "local" / "global" (routing reports)
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct ModelOutput {
  Tensor hidden;  // [K x D] after the final layer norm
  std::vector<RoutingDecision> routing;  // one per MoE layer, in block order
  int visual_len = 0;  // P
  int text_len = 0;    // N
};

class Model {
 public:
  ModelConfig cfg;

  Tensor patch_w, patch_b;   // [patch_dim x C], [C]
  Tensor pos_visual;         // [grid*grid x C] learned positional grid
  Tensor proj_w, proj_b;     // [C x D], [D]
  Tensor tok_embed;          // [vocab x D]
  Tensor pos_text;           // [max_text_len x D]
  std::vector<Block> blocks;
  Tensor final_ln_gain, final_ln_bias;
  Tensor head_w, head_b;     // [D x vocab], [vocab]

  static Model init(const ModelConfig& cfg, uint64_t seed);
  Model clone() const;

  bool is_sparse() const;

  // Visual token encoding: learned linear map over raw patch pixels plus the
  // positional grid (bilinearly resampled when the image grid differs from
  // the stored one), then projection to D.
  Tensor encode_patches(const Image& img) const;

  ModelOutput forward(const Image& img,
                      const std::vector<int>& text_tokens) const;

  Tensor logits_full(const ModelOutput& out) const;  // [(P+N) x vocab]
  Tensor logits_rows(const ModelOutput& out,
                     const std::vector<int>& positions) const;

  std::vector<NamedParam> named_parameters() const;

  // Greedy decode starting after the instruction; stops at eos or max_tokens.
  std::vector<int> generate(const Image& img,
                            const std::vector<int>& instruction_tokens,
                            int max_tokens, int bos_id, int eos_id) const;
};

// Mean cross entropy over mask-true positions of the full-logits view.
Tensor autoregressive_loss(const Tensor& logits, const SequenceExample& ex);
// Same value, computed only at the supervised rows (training fast path).
Tensor autoregressive_loss_fast(const Model& m, const ModelOutput& out,
                                const SequenceExample& ex);
// regressive + alpha * mean(aux); empty aux list contributes 0.
Tensor total_loss(const Tensor& regressive, const std::vector<Tensor>& aux,
                  double alpha);

// Bilinear corner-aligned resampling of a [g1*g1 x C] positional grid.
Tensor interpolate_pos_encoding(const Tensor& grid, int g1, int g2);

// Deep-copies the dense model and replaces the feed-forward of every
// moe_period-th block (0-based indices period-1, 2*period-1, ...) with an MoE
// layer of `experts` clones plus a fresh router.
Model sparsify(const Model& dense, int experts, int top_k, int period,
               double router_init_std, Rng& rng);

}  // namespace vlmoe
