// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/model.hpp"

#include <cmath>

#include "vlmoe/errors.hpp"

namespace vlmoe {

void ModelConfig::validate() const {
  if (hidden_size < 1 || layers < 1 || heads < 1 || vocab < 2)
    throw ValueError("model config: non-positive core dimension");
  if (hidden_size % heads != 0)
    throw ValueError("model config: hidden_size must be divisible by heads");
  if (image_size % patch_size != 0)
    throw ValueError("model config: image_size must be divisible by patch_size");
  if (grid() < 2) throw ValueError("model config: patch grid side must be >= 2");
  if (experts < 1 || top_k < 1 || top_k > experts)
    throw ValueError("model config: need 1 <= top_k <= experts");
  if (moe_period < 1) throw ValueError("model config: moe_period must be >= 1");
  if (lora_rank < 0 || lora_rank >= hidden_size)
    throw ValueError("model config: lora_rank must be in [0, hidden_size)");
  if (max_text_len < 2) throw ValueError("model config: max_text_len too small");
}

LoraAdapter make_lora(int d, int rank, double scale, Rng& rng) {
  if (rank < 1) throw ValueError("lora: rank must be >= 1");
  if (rank >= d) throw ValueError("lora: rank must be < layer width");
  LoraAdapter l;
  l.a = Tensor::zeros({d, rank}, true);
  l.b = Tensor::zeros({rank, d}, true);  // zero init: adapter starts as identity
  l.scale = scale;
  for (auto& v : l.a.mutable_data()) v = rng.normal(0.0, 0.02);
  return l;
}

Tensor lora_linear(const Tensor& x, const Tensor& w,
                   const std::optional<LoraAdapter>& adapter) {
  Tensor base = matmul(x, w);
  if (!adapter) return base;
  Tensor delta = matmul(matmul(x, adapter->a), adapter->b);
  return add(base, scale(delta, adapter->scale));
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.mutable_data()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor ones_tensor(Shape shape) {
  return Tensor::full(std::move(shape), 1.0, true);
}

constexpr double kMaskedOut = -1e30;

Tensor attention_mask(int total, int visual, bool visual_bidirectional) {
  Tensor m = Tensor::zeros({total, total});
  auto& d = m.mutable_data();
  for (int i = 0; i < total; ++i) {
    for (int j = 0; j < total; ++j) {
      bool allowed = j <= i;
      if (visual_bidirectional && i < visual && j < visual) allowed = true;
      if (!allowed)
        d[static_cast<std::size_t>(i) * total + j] = kMaskedOut;
    }
  }
  return m;
}

}  // namespace

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(hash_combine(seed, hash_string("model-init")));

  const int d = cfg.hidden_size, c = cfg.patch_channels;
  m.patch_w = normal_tensor({cfg.patch_dim(), c}, 0.02, rng);
  m.patch_b = Tensor::zeros({c}, true);
  m.pos_visual = normal_tensor({cfg.grid() * cfg.grid(), c}, 0.02, rng);
  m.proj_w = normal_tensor({c, d}, 0.02, rng);
  m.proj_b = Tensor::zeros({d}, true);
  m.tok_embed = normal_tensor({cfg.vocab, d}, 0.02, rng);
  m.pos_text = normal_tensor({cfg.max_text_len, d}, 0.02, rng);

  m.blocks.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& blk : m.blocks) {
    blk.ln1_gain = ones_tensor({d});
    blk.ln1_bias = Tensor::zeros({d}, true);
    blk.attn.wq = normal_tensor({d, d}, 0.02, rng);
    blk.attn.wk = normal_tensor({d, d}, 0.02, rng);
    blk.attn.wv = normal_tensor({d, d}, 0.02, rng);
    blk.attn.wo = normal_tensor({d, d}, 0.02, rng);
    if (cfg.lora_rank > 0) {
      blk.attn.lora_q = make_lora(d, cfg.lora_rank, cfg.lora_scale, rng);
      blk.attn.lora_v = make_lora(d, cfg.lora_rank, cfg.lora_scale, rng);
    }
    blk.ln2_gain = ones_tensor({d});
    blk.ln2_bias = Tensor::zeros({d}, true);
    blk.ffn = make_feed_forward(d, cfg.ffn_hidden, rng);
  }
  m.final_ln_gain = ones_tensor({d});
  m.final_ln_bias = Tensor::zeros({d}, true);
  m.head_w = normal_tensor({d, cfg.vocab}, 0.02, rng);
  m.head_b = Tensor::zeros({cfg.vocab}, true);
  return m;
}

namespace {
Tensor clone_if(const Tensor& t) { return t.defined() ? t.clone() : Tensor(); }

FeedForward clone_ffn(const FeedForward& f) {
  FeedForward c;
  c.w1 = clone_if(f.w1);
  c.b1 = clone_if(f.b1);
  c.w2 = clone_if(f.w2);
  c.b2 = clone_if(f.b2);
  return c;
}
}  // namespace

Model Model::clone() const {
  Model m;
  m.cfg = cfg;
  m.patch_w = patch_w.clone();
  m.patch_b = patch_b.clone();
  m.pos_visual = pos_visual.clone();
  m.proj_w = proj_w.clone();
  m.proj_b = proj_b.clone();
  m.tok_embed = tok_embed.clone();
  m.pos_text = pos_text.clone();
  for (const auto& blk : blocks) {
    Block b;
    b.ln1_gain = blk.ln1_gain.clone();
    b.ln1_bias = blk.ln1_bias.clone();
    b.attn.wq = blk.attn.wq.clone();
    b.attn.wk = blk.attn.wk.clone();
    b.attn.wv = blk.attn.wv.clone();
    b.attn.wo = blk.attn.wo.clone();
    if (blk.attn.lora_q) {
      LoraAdapter l;
      l.a = blk.attn.lora_q->a.clone();
      l.b = blk.attn.lora_q->b.clone();
      l.scale = blk.attn.lora_q->scale;
      b.attn.lora_q = std::move(l);
    }
    if (blk.attn.lora_v) {
      LoraAdapter l;
      l.a = blk.attn.lora_v->a.clone();
      l.b = blk.attn.lora_v->b.clone();
      l.scale = blk.attn.lora_v->scale;
      b.attn.lora_v = std::move(l);
    }
    b.ln2_gain = blk.ln2_gain.clone();
    b.ln2_bias = blk.ln2_bias.clone();
    b.ffn = clone_ffn(blk.ffn);
    if (blk.moe) {
      MoeLayer ml;
      ml.router_w = blk.moe->router_w.clone();
      ml.top_k = blk.moe->top_k;
      for (const auto& e : blk.moe->experts)
        ml.experts.push_back(clone_ffn(e));
      b.moe = std::move(ml);
    }
    m.blocks.push_back(std::move(b));
  }
  m.final_ln_gain = final_ln_gain.clone();
  m.final_ln_bias = final_ln_bias.clone();
  m.head_w = head_w.clone();
  m.head_b = head_b.clone();
  return m;
}

bool Model::is_sparse() const {
  for (const auto& b : blocks)
    if (b.is_moe()) return true;
  return false;
}

Tensor Model::encode_patches(const Image& img) const {
  if (img.height != img.width)
    throw ShapeError("encode_patches: image must be square");
  if (img.channels != 3)
    throw ShapeError("encode_patches: expected 3 channels");
  if (img.height % cfg.patch_size != 0)
    throw ShapeError("encode_patches: image side " +
                     std::to_string(img.height) +
                     " not divisible by patch size");
  const int g = img.height / cfg.patch_size;
  const int p = g * g, pd = cfg.patch_dim(), ps = cfg.patch_size;

  Tensor patches = Tensor::zeros({p, pd});
  auto& buf = patches.mutable_data();
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      double* row = buf.data() +
                    static_cast<std::size_t>(gy * g + gx) * pd;
      int o = 0;
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          for (int ch = 0; ch < 3; ++ch)
            row[o++] = img.at(gy * ps + y, gx * ps + x, ch) / 255.0;
    }
  }
  Tensor enc = add_row_bias(matmul(patches, patch_w), patch_b);
  Tensor pe = (g == cfg.grid())
                  ? pos_visual
                  : interpolate_pos_encoding(pos_visual, cfg.grid(), g);
  enc = add(enc, pe);
  return add_row_bias(matmul(enc, proj_w), proj_b);
}

namespace {

Tensor attend(const Tensor& x, const AttentionBlock& attn, const Tensor& mask,
              int heads) {
  const int d = x.dim(1);
  const int dh = d / heads;
  Tensor q = lora_linear(x, attn.wq, attn.lora_q);
  Tensor k = matmul(x, attn.wk);
  Tensor v = lora_linear(x, attn.wv, attn.lora_v);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = add(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    Tensor weights = softmax(scores, 1);
    outs.push_back(matmul(weights, vh));
  }
  return matmul(concat(outs, 1), attn.wo);
}

}  // namespace

ModelOutput Model::forward(const Image& img,
                           const std::vector<int>& text_tokens) const {
  const int n = static_cast<int>(text_tokens.size());
  if (n < 1) throw ValueError("forward: empty text sequence");
  if (n > cfg.max_text_len)
    throw ValueError("forward: sequence longer than configured maximum (" +
                     std::to_string(n) + " > " +
                     std::to_string(cfg.max_text_len) + ")");
  for (int id : text_tokens)
    if (id < 0 || id >= cfg.vocab)
      throw ValueError("forward: token id out of vocabulary");

  Tensor vis = encode_patches(img);
  const int p = vis.dim(0);
  Tensor txt = add(embedding_lookup(tok_embed, text_tokens),
                   slice_rows(pos_text, 0, n));
  Tensor x = concat({vis, txt}, 0);
  const int total = p + n;
  Tensor mask = attention_mask(total, p, cfg.visual_bidirectional);

  ModelOutput out;
  for (const auto& blk : blocks) {
    Tensor h = layer_norm(x, blk.ln1_gain, blk.ln1_bias, cfg.layer_norm_eps);
    x = add(attend(h, blk.attn, mask, cfg.heads), x);
    Tensor h2 = layer_norm(x, blk.ln2_gain, blk.ln2_bias, cfg.layer_norm_eps);
    if (blk.is_moe()) {
      auto [y, decision] = moe_forward(h2, *blk.moe);
      out.routing.push_back(std::move(decision));
      x = add(y, x);
    } else {
      x = add(blk.ffn.forward(h2), x);
    }
  }
  out.hidden = layer_norm(x, final_ln_gain, final_ln_bias, cfg.layer_norm_eps);
  out.visual_len = p;
  out.text_len = n;
  return out;
}

Tensor Model::logits_full(const ModelOutput& out) const {
  return add_row_bias(matmul(out.hidden, head_w), head_b);
}

Tensor Model::logits_rows(const ModelOutput& out,
                          const std::vector<int>& positions) const {
  return add_row_bias(matmul(gather_rows(out.hidden, positions), head_w),
                      head_b);
}

std::vector<NamedParam> Model::named_parameters() const {
  std::vector<NamedParam> ps;
  auto push = [&ps](const std::string& name, const Tensor& t) {
    if (t.defined()) ps.push_back({name, t});
  };
  push("patch.w", patch_w);
  push("patch.b", patch_b);
  push("pos.visual", pos_visual);
  push("proj.w", proj_w);
  push("proj.b", proj_b);
  push("embed.tok", tok_embed);
  push("embed.pos", pos_text);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string pre = "blk" + std::to_string(i);
    push(pre + ".ln1.gain", b.ln1_gain);
    push(pre + ".ln1.bias", b.ln1_bias);
    push(pre + ".attn.wq", b.attn.wq);
    push(pre + ".attn.wk", b.attn.wk);
    push(pre + ".attn.wv", b.attn.wv);
    push(pre + ".attn.wo", b.attn.wo);
    if (b.attn.lora_q) {
      push(pre + ".attn.lora_q.a", b.attn.lora_q->a);
      push(pre + ".attn.lora_q.b", b.attn.lora_q->b);
    }
    if (b.attn.lora_v) {
      push(pre + ".attn.lora_v.a", b.attn.lora_v->a);
      push(pre + ".attn.lora_v.b", b.attn.lora_v->b);
    }
    push(pre + ".ln2.gain", b.ln2_gain);
    push(pre + ".ln2.bias", b.ln2_bias);
    if (b.is_moe()) {
      push(pre + ".moe.router", b.moe->router_w);
      for (std::size_t e = 0; e < b.moe->experts.size(); ++e) {
        const std::string ep = pre + ".moe.expert" + std::to_string(e);
        push(ep + ".w1", b.moe->experts[e].w1);
        push(ep + ".b1", b.moe->experts[e].b1);
        push(ep + ".w2", b.moe->experts[e].w2);
        push(ep + ".b2", b.moe->experts[e].b2);
      }
    } else {
      push(pre + ".ffn.w1", b.ffn.w1);
      push(pre + ".ffn.b1", b.ffn.b1);
      push(pre + ".ffn.w2", b.ffn.w2);
      push(pre + ".ffn.b2", b.ffn.b2);
    }
  }
  push("final_ln.gain", final_ln_gain);
  push("final_ln.bias", final_ln_bias);
  push("head.w", head_w);
  push("head.b", head_b);
  return ps;
}

std::vector<int> Model::generate(const Image& img,
                                 const std::vector<int>& instruction_tokens,
                                 int max_tokens, int bos_id,
                                 int eos_id) const {
  NoGradGuard no_grad;
  std::vector<int> text;
  text.reserve(instruction_tokens.size() + 1 +
               static_cast<std::size_t>(std::max(0, max_tokens)));
  text.push_back(bos_id);
  text.insert(text.end(), instruction_tokens.begin(),
              instruction_tokens.end());
  std::vector<int> generated;
  for (int step = 0; step < max_tokens; ++step) {
    if (static_cast<int>(text.size()) > cfg.max_text_len) break;
    ModelOutput out = forward(img, text);
    const int last = out.visual_len + out.text_len - 1;
    Tensor logits = logits_rows(out, {last});
    int best = 0;
    for (int j = 1; j < cfg.vocab; ++j)
      if (logits.at(0, j) > logits.at(0, best)) best = j;
    if (best == eos_id) break;
    generated.push_back(best);
    text.push_back(best);
  }
  return generated;
}

Tensor autoregressive_loss(const Tensor& logits, const SequenceExample& ex) {
  bool any = false;
  for (uint8_t m : ex.loss_mask) any = any || (m != 0);
  if (!any) throw ValueError("autoregressive_loss: no supervised positions");
  return cross_entropy_logits(logits, ex.labels, ex.loss_mask);
}

Tensor autoregressive_loss_fast(const Model& m, const ModelOutput& out,
                                const SequenceExample& ex) {
  std::vector<int> positions;
  std::vector<int> labels;
  for (std::size_t i = 0; i < ex.loss_mask.size(); ++i) {
    if (!ex.loss_mask[i]) continue;
    positions.push_back(static_cast<int>(i));
    labels.push_back(ex.labels[i]);
  }
  if (positions.empty())
    throw ValueError("autoregressive_loss: no supervised positions");
  Tensor logits = m.logits_rows(out, positions);
  std::vector<uint8_t> all(positions.size(), 1);
  return cross_entropy_logits(logits, labels, all);
}

Tensor total_loss(const Tensor& regressive, const std::vector<Tensor>& aux,
                  double alpha) {
  if (aux.empty()) return regressive;
  Tensor acc = aux[0];
  for (std::size_t i = 1; i < aux.size(); ++i) acc = add(acc, aux[i]);
  acc = scale(acc, alpha / static_cast<double>(aux.size()));
  return add(regressive, acc);
}

Tensor interpolate_pos_encoding(const Tensor& grid, int g1, int g2) {
  return interpolate_grid_bilinear(grid, g1, g2);
}

Model sparsify(const Model& dense, int experts, int top_k, int period,
               double router_init_std, Rng& rng) {
  if (period < 1) throw ValueError("sparsify: period must be >= 1");
  if (experts < 1) throw ValueError("sparsify: experts must be >= 1");
  if (top_k < 1 || top_k > experts)
    throw ValueError("sparsify: need 1 <= top_k <= experts");
  Model m = dense.clone();
  m.cfg.experts = experts;
  m.cfg.top_k = top_k;
  m.cfg.moe_period = period;
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    if ((static_cast<int>(i) + 1) % period != 0) continue;
    Block& blk = m.blocks[i];
    MoeLayer ml;
    ml.top_k = top_k;
    ml.router_w = Tensor::zeros({m.cfg.hidden_size, experts}, true);
    for (auto& v : ml.router_w.mutable_data())
      v = rng.normal(0.0, router_init_std);
    ml.experts = clone_experts(blk.ffn, experts);
    blk.moe = std::move(ml);
    blk.ffn = FeedForward{};  // replaced
  }
  return m;
}

}  // namespace vlmoe
