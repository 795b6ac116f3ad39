// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "vlmoe/metrics.hpp"
#include "vlmoe/model.hpp"
#include "vlmoe/synthdata.hpp"

namespace vlmoe {

struct EvalResult {
  std::string task;
  std::string metric;
  double value = 0.0;  // [0, 1]
  int samples = 0;
};

struct EvalOutputs {
  std::vector<EvalResult> results;
  // mean of the per-task primary metrics (VG @0.5, OC, IC BLEU-4, VQA, SC)
  double aggregate = 0.0;
  int tasks_covered = 0;
};

// task_filter: "all" or one of IC VQA VG OC SC. detail_path, when non-empty,
// receives one JSON line per record with the prediction and score.
EvalOutputs evaluate_model(const Model& model, const Corpus& corpus,
                           const std::string& task_filter,
                           const std::string& detail_path = "",
                           int max_tokens = 16, int threads = 0);

std::string eval_summary_csv(const EvalOutputs& out);

// Routing observability: per-layer expert fractions, mean probabilities,
// utilization entropy and load loss; optionally conditioned on the records'
// granularity tag.
struct RouteReport {
  struct Layer {
    int block_index = 0;
    std::vector<double> fraction;
    std::vector<double> mean_prob;
    double entropy = 0.0;
    double load_loss = 0.0;
    // granularity tag -> per-expert argmax fraction (rows sum to 1)
    std::vector<std::pair<std::string, std::vector<double>>> by_granularity;
  };
  std::vector<Layer> layers;
  long tokens = 0;
};

RouteReport collect_route_stats(const Model& model, const Corpus& corpus,
                                bool by_granularity, int threads = 0);

std::string route_report_csv(const RouteReport& report);

}  // namespace vlmoe
