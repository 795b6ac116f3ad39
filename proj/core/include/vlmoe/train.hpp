// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vlmoe/model.hpp"
#include "vlmoe/synthdata.hpp"

namespace vlmoe {

// lr_min + 0.5 * (lr_max - lr_min) * (1 + cos(pi * step / total)); the
// endpoints and midpoint are returned exactly.
double cosine_lr(uint64_t step, uint64_t total_steps, double lr_max,
                 double lr_min);

struct AdamWParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam with bias-corrected moments. Parameters whose
// requires_grad is off are never touched; a missing gradient buffer counts
// as zero.
class AdamW {
 public:
  explicit AdamW(AdamWParams params) : params_(params) {}

  void step(const std::vector<NamedParam>& params, double lr);

  uint64_t steps() const { return t_; }
  void set_steps(uint64_t t) { t_ = t; }

  struct Moments {
    std::vector<double> m, v;
  };
  const std::map<std::string, Moments>& state() const { return state_; }
  std::map<std::string, Moments>& state() { return state_; }
  const AdamWParams& params() const { return params_; }

 private:
  AdamWParams params_;
  std::map<std::string, Moments> state_;
  uint64_t t_ = 0;
};

struct TrainConfig {
  int stage = 1;
  double lr_max = 3e-4;
  double lr_min = 3e-5;
  int epochs = 30;
  int batch_size = 32;
  double aux_alpha = 0.01;
  uint64_t seed = 0;
  AdamWParams adam;
  double grad_clip = 1.0;
  // stage 1: fraction of steps during which the base network trains before
  // the freeze leaves only adapters, embeddings and head trainable
  double warmstart_frac = 0.2;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

struct TrainLogRow {
  uint64_t step = 0;
  double lr = 0.0;
  double regressive = 0.0;
  std::vector<double> aux;  // one entry per MoE layer
  double total = 0.0;
};

struct EpochLoadStats {
  int epoch = 0;
  // per MoE layer: mean F, mean G, load loss over the epoch's batches
  std::vector<std::vector<double>> fraction;
  std::vector<std::vector<double>> mean_prob;
  std::vector<double> load_loss;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogRow> log;
  std::vector<double> epoch_loss;
  std::vector<EpochLoadStats> load_stats;  // stage 2
  uint64_t steps = 0;
};

SequenceExample build_example(const InstructionRecord& rec, const Image& image,
                              const Tokenizer& tokenizer,
                              const ModelConfig& cfg);

// Stage I: dense model trained from scratch; the whole network warm-starts
// for warmstart_frac of the steps, after which the base transformer, patch
// encoder and projection freeze and only LoRA adapters, embeddings and the
// output head keep training.
TrainResult train_stage1(const ModelConfig& cfg, const Corpus& corpus,
                         const TrainConfig& tc);

// Stage II: sparsify the stage-I model (FFN clones as experts, fresh
// routers), then optimize MoE parameters and adapters under the total loss.
TrainResult train_stage2(const Model& stage1, const Corpus& corpus,
                         const TrainConfig& tc);

// Parameter-group names used by freezing and gradient checks.
bool stage1_trainable_after_warmstart(const std::string& name);
bool stage2_trainable(const std::string& name);
std::string grad_group_of(const std::string& name);  // "" when ungrouped

struct GradCheckReport {
  std::string group;
  int coords = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central finite differences against analytic gradients at n_coords random
// coordinates per parameter group. Throws NumericError when the batch sits
// too close to a routing tie (caller resamples with a new seed).
std::vector<GradCheckReport> grad_check(const Model& model,
                                        const std::vector<SequenceExample>& batch,
                                        int n_coords, double eps,
                                        double alpha, uint64_t seed);

// Batch loss with the auxiliary term aggregated over all tokens of the batch
// per MoE layer (the value the trainer optimizes).
double batch_loss_value(const Model& model,
                        const std::vector<SequenceExample>& batch,
                        double alpha);

double routing_tie_margin(const Model& model,
                          const std::vector<SequenceExample>& batch);

}  // namespace vlmoe
