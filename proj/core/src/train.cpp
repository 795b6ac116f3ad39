// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/train.hpp"

#include <algorithm>
#include <cmath>

#include "vlmoe/errors.hpp"
#include "vlmoe/parallel.hpp"

namespace vlmoe {

double cosine_lr(uint64_t step, uint64_t total_steps, double lr_max,
                 double lr_min) {
  if (total_steps == 0) throw ValueError("cosine_lr: total_steps must be > 0");
  if (step > total_steps) throw ValueError("cosine_lr: step beyond schedule");
  if (step == 0) return lr_max;
  if (step == total_steps) return lr_min;
  if (2 * step == total_steps) return 0.5 * (lr_max + lr_min);
  const double frac = static_cast<double>(step) / total_steps;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * frac));
}

void AdamW::step(const std::vector<NamedParam>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    const std::vector<double>* grad = p.tensor.grad();
    auto& mm = state_[p.name];
    if (mm.m.empty()) {
      mm.m.assign(p.tensor.numel(), 0.0);
      mm.v.assign(p.tensor.numel(), 0.0);
    }
    auto& data = const_cast<Tensor&>(p.tensor).mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad ? (*grad)[i] : 0.0;
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter " + p.name);
      mm.m[i] = params_.beta1 * mm.m[i] + (1.0 - params_.beta1) * g;
      mm.v[i] = params_.beta2 * mm.v[i] + (1.0 - params_.beta2) * g * g;
      const double mhat = mm.m[i] / bc1;
      const double vhat = mm.v[i] / bc2;
      data[i] -= lr * (mhat / (std::sqrt(vhat) + params_.eps) +
                       params_.weight_decay * data[i]);
    }
  }
}

void TrainConfig::validate() const {
  if (lr_min > lr_max) throw ValueError("train config: lr_min > lr_max");
  if (epochs < 1) throw ValueError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
  if (warmstart_frac < 0.0 || warmstart_frac > 1.0)
    throw ValueError("train config: warmstart_frac must be in [0, 1]");
  if (stage != 1 && stage != 2)
    throw ValueError("train config: stage must be 1 or 2");
}

SequenceExample build_example(const InstructionRecord& rec, const Image& image,
                              const Tokenizer& tokenizer,
                              const ModelConfig& cfg) {
  SequenceExample ex;
  ex.image = &image;
  ex.granularity = rec.granularity;
  const std::vector<int> inst = tokenizer.tokenize(rec.instruction);
  const std::vector<int> ans = tokenizer.tokenize(rec.target);
  ex.text_tokens.push_back(tokenizer.bos_id());
  ex.text_tokens.insert(ex.text_tokens.end(), inst.begin(), inst.end());
  ex.text_tokens.insert(ex.text_tokens.end(), ans.begin(), ans.end());
  ex.text_tokens.push_back(tokenizer.eos_id());
  const int n = static_cast<int>(ex.text_tokens.size());
  if (n > cfg.max_text_len)
    throw ValueError("example exceeds max_text_len: " + std::to_string(n));

  const int g = image.height / cfg.patch_size;
  const int p = g * g;
  ex.labels.assign(static_cast<std::size_t>(p + n), 0);
  ex.loss_mask.assign(static_cast<std::size_t>(p + n), 0);
  const int ans_start = 1 + static_cast<int>(inst.size());
  for (int i = 0; i + 1 < n; ++i) {
    ex.labels[static_cast<std::size_t>(p + i)] =
        ex.text_tokens[static_cast<std::size_t>(i + 1)];
    if (i + 1 >= ans_start) ex.loss_mask[static_cast<std::size_t>(p + i)] = 1;
  }
  return ex;
}

bool stage1_trainable_after_warmstart(const std::string& name) {
  return name.find(".lora_") != std::string::npos ||
         name.rfind("embed.", 0) == 0 || name.rfind("head.", 0) == 0;
}

bool stage2_trainable(const std::string& name) {
  return name.find(".moe.") != std::string::npos ||
         name.find(".lora_") != std::string::npos;
}

std::string grad_group_of(const std::string& name) {
  if (name.find(".moe.router") != std::string::npos) return "router";
  if (name.find(".moe.expert") != std::string::npos) return "experts";
  if (name.find(".lora_") != std::string::npos) return "lora";
  if (name.rfind("embed.", 0) == 0) return "embeddings";
  return "";
}

namespace {

struct ExampleWork {
  std::unique_ptr<Tape> tape;
  Tensor ce;
  std::vector<LoadBalanceStats> stats;
  int tokens = 0;
};

struct BatchAux {
  // per MoE layer
  std::vector<std::vector<double>> fraction;   // F over the whole batch
  std::vector<std::vector<double>> mean_prob;  // G over the whole batch
  std::vector<double> load_loss;               // E * sum F*G
  double total_tokens = 0.0;
};

BatchAux aggregate_batch_stats(const std::vector<ExampleWork>& work) {
  BatchAux agg;
  if (work.empty() || work[0].stats.empty()) return agg;
  const std::size_t layers = work[0].stats.size();
  double total_tokens = 0.0;
  for (const auto& w : work) total_tokens += w.tokens;
  agg.total_tokens = total_tokens;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t experts = work[0].stats[l].fraction.size();
    std::vector<double> f(experts, 0.0), g(experts, 0.0);
    for (const auto& w : work) {
      const double share = w.tokens / total_tokens;
      for (std::size_t e = 0; e < experts; ++e) {
        f[e] += share * w.stats[l].fraction[e];
        g[e] += share * w.stats[l].mean_prob.at(static_cast<int>(e));
      }
    }
    double loss = 0.0;
    for (std::size_t e = 0; e < experts; ++e) loss += f[e] * g[e];
    agg.load_loss.push_back(loss * static_cast<double>(experts));
    agg.fraction.push_back(std::move(f));
    agg.mean_prob.push_back(std::move(g));
  }
  return agg;
}

std::vector<NamedParam> trainable_params(const Model& model) {
  std::vector<NamedParam> out;
  for (auto& p : model.named_parameters())
    if (p.tensor.requires_grad()) out.push_back(p);
  return out;
}

void train_loop(Model& model, const Corpus& corpus, const TrainConfig& tc,
                bool stage1, TrainResult& result) {
  if (model.cfg.vocab != corpus.tokenizer.vocab_size())
    throw ValueError("model vocab (" + std::to_string(model.cfg.vocab) +
                     ") does not match corpus vocabulary (" +
                     std::to_string(corpus.tokenizer.vocab_size()) + ")");
  if (corpus.records.empty()) throw DataError("training corpus is empty");

  std::vector<SequenceExample> examples;
  examples.reserve(corpus.records.size());
  for (const auto& rec : corpus.records) {
    auto it = corpus.images.find(rec.image_id);
    if (it == corpus.images.end())
      throw DataError("missing image for record: " + rec.image_id);
    examples.push_back(
        build_example(rec, it->second, corpus.tokenizer, model.cfg));
  }

  const int n = static_cast<int>(examples.size());
  const uint64_t batches_per_epoch =
      static_cast<uint64_t>((n + tc.batch_size - 1) / tc.batch_size);
  const uint64_t total_steps =
      batches_per_epoch * static_cast<uint64_t>(tc.epochs);
  const uint64_t warm_end =
      stage1 ? static_cast<uint64_t>(std::floor(tc.warmstart_frac *
                                                static_cast<double>(total_steps)))
             : 0;

  AdamW opt(tc.adam);
  auto trainable = trainable_params(model);
  bool frozen_applied = !stage1;
  Rng shuffle_rng = Rng(tc.seed).fork("shuffle");
  const double alpha = tc.aux_alpha;
  uint64_t global_step = 0;

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_total = 0.0;
    int epoch_batches = 0;
    EpochLoadStats epoch_load;
    epoch_load.epoch = epoch;

    for (int start = 0; start < n; start += tc.batch_size) {
      if (stage1 && !frozen_applied && global_step >= warm_end) {
        for (auto& p : model.named_parameters())
          if (!stage1_trainable_after_warmstart(p.name))
            p.tensor.set_requires_grad(false);
        trainable = trainable_params(model);
        frozen_applied = true;
      }
      const int bsz = std::min(tc.batch_size, n - start);
      const double lr = cosine_lr(global_step, total_steps, tc.lr_max,
                                  tc.lr_min);

      std::vector<ExampleWork> work(static_cast<std::size_t>(bsz));
      parallel_for(bsz, tc.threads, [&](int i) {
        const SequenceExample& ex = examples[static_cast<std::size_t>(
            order[static_cast<std::size_t>(start + i)])];
        auto& w = work[static_cast<std::size_t>(i)];
        w.tape = std::make_unique<Tape>();
        TapeScope scope(w.tape.get());
        ModelOutput out = model.forward(*ex.image, ex.text_tokens);
        w.ce = autoregressive_loss_fast(model, out, ex);
        w.tokens = out.visual_len + out.text_len;
        for (auto& d : out.routing) w.stats.push_back(std::move(d.stats));
      });

      const BatchAux agg = aggregate_batch_stats(work);
      const std::size_t moe_layers = agg.load_loss.size();

      parallel_for(bsz, tc.threads, [&](int i) {
        auto& w = work[static_cast<std::size_t>(i)];
        TapeScope scope(w.tape.get());
        Tensor loss = scale(w.ce, 1.0 / bsz);
        if (alpha != 0.0 && moe_layers > 0) {
          for (std::size_t l = 0; l < moe_layers; ++l) {
            const int experts =
                static_cast<int>(agg.fraction[l].size());
            Tensor f = Tensor::from_data({experts}, agg.fraction[l]);
            Tensor dot = sum(mul(f, w.stats[l].mean_prob));
            const double coeff = alpha * experts * w.tokens /
                                 (agg.total_tokens *
                                  static_cast<double>(moe_layers));
            loss = add(loss, scale(dot, coeff));
          }
        }
        w.tape->backward(loss, /*flush_to_leaves=*/false);
      });

      double regressive = 0.0;
      for (const auto& w : work) regressive += w.ce.value() / bsz;

      // deterministic merge: parameter-major, example order
      for (auto& p : trainable) {
        auto& gbuf = const_cast<Tensor&>(p.tensor).grad_or_create();
        for (const auto& w : work) {
          const std::vector<double>* g = w.tape->grad_of(p.tensor.impl());
          if (!g) continue;
          for (std::size_t j = 0; j < gbuf.size(); ++j) gbuf[j] += (*g)[j];
        }
      }
      work.clear();

      if (tc.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (const auto& p : trainable) {
          if (const auto* g = p.tensor.grad())
            for (double v : *g) norm_sq += v * v;
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > tc.grad_clip) {
          const double s = tc.grad_clip / norm;
          for (auto& p : trainable) {
            if (p.tensor.grad())
              for (auto& v : const_cast<Tensor&>(p.tensor).grad_or_create())
                v *= s;
          }
        }
      }

      opt.step(trainable, lr);
      for (auto& p : trainable) const_cast<Tensor&>(p.tensor).zero_grad();

      TrainLogRow row;
      row.step = global_step;
      row.lr = lr;
      row.regressive = regressive;
      row.aux = agg.load_loss;
      double aux_mean = 0.0;
      for (double v : agg.load_loss) aux_mean += v;
      if (!agg.load_loss.empty())
        aux_mean /= static_cast<double>(agg.load_loss.size());
      row.total = row.regressive + alpha * aux_mean;
      if (!std::isfinite(row.total))
        throw NumericError("training diverged: non-finite loss at step " +
                           std::to_string(global_step));
      result.log.push_back(row);

      epoch_total += row.total;
      ++epoch_batches;
      if (!epoch_load.load_loss.empty() || !agg.load_loss.empty()) {
        if (epoch_load.load_loss.empty()) {
          epoch_load.fraction = agg.fraction;
          epoch_load.mean_prob = agg.mean_prob;
          epoch_load.load_loss = agg.load_loss;
        } else {
          for (std::size_t l = 0; l < agg.load_loss.size(); ++l) {
            for (std::size_t e = 0; e < agg.fraction[l].size(); ++e) {
              epoch_load.fraction[l][e] += agg.fraction[l][e];
              epoch_load.mean_prob[l][e] += agg.mean_prob[l][e];
            }
            epoch_load.load_loss[l] += agg.load_loss[l];
          }
        }
      }
      ++global_step;
    }

    if (!epoch_load.load_loss.empty() && epoch_batches > 0) {
      for (std::size_t l = 0; l < epoch_load.load_loss.size(); ++l) {
        for (auto& v : epoch_load.fraction[l]) v /= epoch_batches;
        for (auto& v : epoch_load.mean_prob[l]) v /= epoch_batches;
        epoch_load.load_loss[l] /= epoch_batches;
      }
      result.load_stats.push_back(std::move(epoch_load));
    }
    result.epoch_loss.push_back(epoch_total / std::max(1, epoch_batches));
  }
  result.steps = global_step;
}

}  // namespace

TrainResult train_stage1(const ModelConfig& cfg, const Corpus& corpus,
                         const TrainConfig& tc) {
  tc.validate();
  if (tc.stage != 1) throw ValueError("train_stage1: config stage must be 1");
  TrainResult result{Model::init(cfg, tc.seed), {}, {}, {}, 0};
  train_loop(result.model, corpus, tc, /*stage1=*/true, result);
  return result;
}

TrainResult train_stage2(const Model& stage1, const Corpus& corpus,
                         const TrainConfig& tc) {
  tc.validate();
  if (tc.stage != 2) throw ValueError("train_stage2: config stage must be 2");
  if (stage1.is_sparse())
    throw ValueError("train_stage2: expected a dense stage-1 model");
  Rng rng = Rng(tc.seed).fork("sparsify-router");
  TrainResult result{sparsify(stage1, stage1.cfg.experts, stage1.cfg.top_k,
                              stage1.cfg.moe_period, 0.01, rng),
                     {},
                     {},
                     {},
                     0};
  for (auto& p : result.model.named_parameters())
    p.tensor.set_requires_grad(stage2_trainable(p.name));
  train_loop(result.model, corpus, tc, /*stage1=*/false, result);
  return result;
}

double batch_loss_value(const Model& model,
                        const std::vector<SequenceExample>& batch,
                        double alpha) {
  NoGradGuard no_grad;
  const int bsz = static_cast<int>(batch.size());
  double regressive = 0.0;
  std::vector<std::vector<double>> f_acc, g_acc;
  double total_tokens = 0.0;
  std::vector<double> tokens(batch.size(), 0.0);
  std::vector<std::vector<LoadBalanceStats>> stats(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ModelOutput out = model.forward(*batch[i].image, batch[i].text_tokens);
    regressive +=
        autoregressive_loss_fast(model, out, batch[i]).value() / bsz;
    tokens[i] = out.visual_len + out.text_len;
    total_tokens += tokens[i];
    for (auto& d : out.routing) stats[i].push_back(std::move(d.stats));
  }
  if (stats[0].empty() || alpha == 0.0) return regressive;
  const std::size_t layers = stats[0].size();
  double aux_mean = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t experts = stats[0][l].fraction.size();
    std::vector<double> f(experts, 0.0), g(experts, 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double share = tokens[i] / total_tokens;
      for (std::size_t e = 0; e < experts; ++e) {
        f[e] += share * stats[i][l].fraction[e];
        g[e] += share * stats[i][l].mean_prob.at(static_cast<int>(e));
      }
    }
    double loss = 0.0;
    for (std::size_t e = 0; e < experts; ++e) loss += f[e] * g[e];
    aux_mean += loss * static_cast<double>(experts);
  }
  aux_mean /= static_cast<double>(layers);
  return regressive + alpha * aux_mean;
}

double routing_tie_margin(const Model& model,
                          const std::vector<SequenceExample>& batch) {
  NoGradGuard no_grad;
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& ex : batch) {
    ModelOutput out = model.forward(*ex.image, ex.text_tokens);
    std::size_t moe_idx = 0;
    for (const auto& blk : model.blocks) {
      if (!blk.is_moe()) continue;
      const auto& decision = out.routing[moe_idx++];
      const int experts = decision.probs.dim(1);
      const int k = blk.moe->top_k;
      for (int t = 0; t < decision.probs.dim(0); ++t) {
        std::vector<double> row(static_cast<std::size_t>(experts));
        for (int e = 0; e < experts; ++e) row[static_cast<std::size_t>(e)] =
            decision.probs.at(t, e);
        std::sort(row.begin(), row.end(), std::greater<double>());
        if (experts > 1) margin = std::min(margin, row[0] - row[1]);
        if (k < experts)
          margin = std::min(margin, row[static_cast<std::size_t>(k - 1)] -
                                        row[static_cast<std::size_t>(k)]);
      }
    }
  }
  return margin;
}

std::vector<GradCheckReport> grad_check(
    const Model& model, const std::vector<SequenceExample>& batch,
    int n_coords, double eps, double alpha, uint64_t seed) {
  if (batch.empty()) throw ValueError("grad_check: empty batch");
  if (n_coords < 1) throw ValueError("grad_check: n_coords must be >= 1");

  // an eps perturbation of a router weight moves a routing probability by
  // roughly 2 * eps * |x|; a margin one order above that cannot flip top-k
  const double min_margin = std::max(1e-4, 10.0 * eps);
  const double margin = routing_tie_margin(model, batch);
  if (margin < min_margin)
    throw NumericError("grad_check: routing tie margin " +
                       std::to_string(margin) + " below " +
                       std::to_string(min_margin) + "; resample the batch");

  // analytic pass, assembled exactly like one trainer step
  const int bsz = static_cast<int>(batch.size());
  std::vector<ExampleWork> work(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& w = work[i];
    w.tape = std::make_unique<Tape>();
    TapeScope scope(w.tape.get());
    ModelOutput out = model.forward(*batch[i].image, batch[i].text_tokens);
    w.ce = autoregressive_loss_fast(model, out, batch[i]);
    w.tokens = out.visual_len + out.text_len;
    for (auto& d : out.routing) w.stats.push_back(std::move(d.stats));
  }
  const BatchAux agg = aggregate_batch_stats(work);
  const std::size_t moe_layers = agg.load_loss.size();
  for (auto& w : work) {
    TapeScope scope(w.tape.get());
    Tensor loss = scale(w.ce, 1.0 / bsz);
    if (alpha != 0.0 && moe_layers > 0) {
      for (std::size_t l = 0; l < moe_layers; ++l) {
        const int experts = static_cast<int>(agg.fraction[l].size());
        Tensor f = Tensor::from_data({experts}, agg.fraction[l]);
        Tensor dot = sum(mul(f, w.stats[l].mean_prob));
        const double coeff =
            alpha * experts * w.tokens /
            (agg.total_tokens * static_cast<double>(moe_layers));
        loss = add(loss, scale(dot, coeff));
      }
    }
    w.tape->backward(loss, /*flush_to_leaves=*/true);
  }

  auto params = model.named_parameters();
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string g = grad_group_of(params[i].name);
    if (!g.empty() && params[i].tensor.requires_grad()) groups[g].push_back(i);
  }

  Rng rng(hash_combine(seed, hash_string("grad-check")));
  std::vector<GradCheckReport> reports;
  for (const auto& [group, members] : groups) {
    GradCheckReport rep;
    rep.group = group;
    std::size_t total = 0;
    for (std::size_t m : members) total += params[m].tensor.numel();
    for (int c = 0; c < n_coords; ++c) {
      std::size_t pick = static_cast<std::size_t>(
          rng.next_u64() % static_cast<uint64_t>(total));
      std::size_t member = 0;
      while (pick >= params[members[member]].tensor.numel()) {
        pick -= params[members[member]].tensor.numel();
        ++member;
      }
      auto& p = params[members[member]];
      const std::vector<double>* g = p.tensor.grad();
      const double analytic = g ? (*g)[pick] : 0.0;

      auto& data = const_cast<Tensor&>(p.tensor).mutable_data();
      const double saved = data[pick];
      data[pick] = saved + eps;
      const double lp = batch_loss_value(model, batch, alpha);
      data[pick] = saved - eps;
      const double lm = batch_loss_value(model, batch, alpha);
      data[pick] = saved;
      const double numeric = (lp - lm) / (2.0 * eps);

      // the 1e-4 floor keeps sub-noise coordinates (|g| below the central
      // difference roundoff of ~1e-10 absolute) from dominating the report
      const double rel = std::abs(analytic - numeric) /
                         std::max(std::abs(analytic) + std::abs(numeric),
                                  1e-4);
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = p.name;
        rep.worst_index = pick;
        rep.analytic = analytic;
        rep.numeric = numeric;
      }
      ++rep.coords;
    }
    reports.push_back(std::move(rep));
  }
  for (auto& p : params) const_cast<Tensor&>(p.tensor).drop_grad();
  return reports;
}

}  // namespace vlmoe
