// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/evaluate.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"
#include "vlmoe/errors.hpp"
#include "vlmoe/parallel.hpp"

using nlohmann::json;

namespace vlmoe {

namespace {

struct RecordEval {
  std::string prediction;
  double score = 0.0;       // primary metric contribution
  double score_07 = 0.0;    // VG only
  double rouge = 0.0;       // IC only
};

}  // namespace

EvalOutputs evaluate_model(const Model& model, const Corpus& corpus,
                           const std::string& task_filter,
                           const std::string& detail_path, int max_tokens,
                           int threads) {
  const std::vector<std::string> known_tasks = {"IC", "VQA", "VG", "OC", "SC"};
  if (task_filter != "all" &&
      std::find(known_tasks.begin(), known_tasks.end(), task_filter) ==
          known_tasks.end())
    throw ValueError("unknown task filter: " + task_filter);

  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    if (task_filter == "all" || corpus.records[i].task == task_filter)
      selected.push_back(i);
  }
  if (selected.empty()) throw DataError("no records match task " + task_filter);

  std::vector<RecordEval> evals(selected.size());
  parallel_for(static_cast<int>(selected.size()), threads, [&](int i) {
    const InstructionRecord& rec =
        corpus.records[selected[static_cast<std::size_t>(i)]];
    auto img_it = corpus.images.find(rec.image_id);
    if (img_it == corpus.images.end())
      throw DataError("missing image: " + rec.image_id);
    const std::vector<int> inst = corpus.tokenizer.tokenize(rec.instruction);
    const std::vector<int> out_ids =
        model.generate(img_it->second, inst, max_tokens,
                       corpus.tokenizer.bos_id(), corpus.tokenizer.eos_id());
    RecordEval& ev = evals[static_cast<std::size_t>(i)];
    ev.prediction = corpus.tokenizer.detokenize(out_ids);
    if (rec.task == "VG") {
      auto pred = parse_bbox(ev.prediction, corpus.image_size);
      if (pred && rec.bbox) {
        const double v = iou(*pred, *rec.bbox);
        ev.score = v >= 0.5 ? 1.0 : 0.0;
        ev.score_07 = v >= 0.7 ? 1.0 : 0.0;
      }
    } else if (rec.task == "IC") {
      auto cand = split_tokens(ev.prediction);
      auto ref = split_tokens(rec.target);
      ev.score = cand.empty() ? 0.0 : bleu4(cand, {ref});
      ev.rouge = cand.empty() ? 0.0 : rouge_l(cand, ref);
    } else if (rec.task == "OC") {
      ev.score = exact_match({ev.prediction}, {rec.target}, MatchNorm::Integer);
    } else {
      ev.score = exact_match({ev.prediction}, {rec.target}, MatchNorm::Text);
    }
  });

  std::map<std::string, std::pair<double, int>> primary;  // task -> (sum, n)
  std::map<std::string, double> vg07_sum, ic_rouge_sum;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const auto& rec = corpus.records[selected[i]];
    auto& acc = primary[rec.task];
    acc.first += evals[i].score;
    acc.second += 1;
    if (rec.task == "VG") vg07_sum[rec.task] += evals[i].score_07;
    if (rec.task == "IC") ic_rouge_sum[rec.task] += evals[i].rouge;
  }

  EvalOutputs out;
  double agg = 0.0;
  for (const auto& task : known_tasks) {
    auto it = primary.find(task);
    if (it == primary.end()) continue;
    const double mean = it->second.first / it->second.second;
    const int n = it->second.second;
    if (task == "VG") {
      out.results.push_back({task, "grounding_acc@0.5", mean, n});
      out.results.push_back(
          {task, "grounding_acc@0.7", vg07_sum[task] / n, n});
    } else if (task == "IC") {
      out.results.push_back({task, "bleu4", mean, n});
      out.results.push_back({task, "rouge_l", ic_rouge_sum[task] / n, n});
    } else {
      out.results.push_back({task, "exact_match", mean, n});
    }
    agg += mean;
    ++out.tasks_covered;
  }
  out.aggregate = out.tasks_covered > 0 ? agg / out.tasks_covered : 0.0;

  if (!detail_path.empty()) {
    std::ofstream os(detail_path);
    if (!os) throw DataError("cannot write eval detail: " + detail_path);
    for (std::size_t i = 0; i < selected.size(); ++i) {
      const auto& rec = corpus.records[selected[i]];
      json j;
      j["image_id"] = rec.image_id;
      j["task"] = rec.task;
      j["instruction"] = rec.instruction;
      j["target"] = rec.target;
      j["prediction"] = evals[i].prediction;
      j["score"] = evals[i].score;
      os << j.dump() << "\n";
    }
  }
  return out;
}

std::string eval_summary_csv(const EvalOutputs& out) {
  std::ostringstream os;
  os << "task,metric,percent,samples\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : out.results)
    os << r.task << "," << r.metric << "," << 100.0 * r.value << ","
       << r.samples << "\n";
  os << "all,aggregate," << 100.0 * out.aggregate << ","
     << out.tasks_covered << "\n";
  return os.str();
}

RouteReport collect_route_stats(const Model& model, const Corpus& corpus,
                                bool by_granularity, int threads) {
  if (!model.is_sparse())
    throw ValueError("route-stats: model has no MoE layers");
  std::vector<int> moe_blocks;
  for (std::size_t b = 0; b < model.blocks.size(); ++b)
    if (model.blocks[b].is_moe()) moe_blocks.push_back(static_cast<int>(b));
  const int layers = static_cast<int>(moe_blocks.size());
  const int experts = model.cfg.experts;

  struct Accum {
    std::vector<double> argmax_counts, prob_sums;
    std::map<std::string, std::vector<double>> gran_counts;
    std::map<std::string, double> gran_tokens;
    double tokens = 0.0;
  };
  std::vector<std::vector<Accum>> per_record(corpus.records.size());

  parallel_for(static_cast<int>(corpus.records.size()), threads, [&](int i) {
    const auto& rec = corpus.records[static_cast<std::size_t>(i)];
    auto img_it = corpus.images.find(rec.image_id);
    if (img_it == corpus.images.end())
      throw DataError("missing image: " + rec.image_id);
    NoGradGuard no_grad;
    std::vector<int> text;
    text.push_back(corpus.tokenizer.bos_id());
    for (int id : corpus.tokenizer.tokenize(rec.instruction))
      text.push_back(id);
    for (int id : corpus.tokenizer.tokenize(rec.target)) text.push_back(id);
    text.push_back(corpus.tokenizer.eos_id());
    ModelOutput out = model.forward(img_it->second, text);
    auto& accums = per_record[static_cast<std::size_t>(i)];
    accums.resize(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
      const auto& d = out.routing[static_cast<std::size_t>(l)];
      auto& acc = accums[static_cast<std::size_t>(l)];
      acc.argmax_counts.assign(static_cast<std::size_t>(experts), 0.0);
      acc.prob_sums.assign(static_cast<std::size_t>(experts), 0.0);
      const int tokens = d.probs.dim(0);
      acc.tokens = tokens;
      for (int t = 0; t < tokens; ++t) {
        acc.argmax_counts[static_cast<std::size_t>(d.topk_idx
            [static_cast<std::size_t>(t)][0])] += 1.0;
        for (int e = 0; e < experts; ++e)
          acc.prob_sums[static_cast<std::size_t>(e)] += d.probs.at(t, e);
      }
      if (by_granularity) {
        acc.gran_counts[rec.granularity] = acc.argmax_counts;
        acc.gran_tokens[rec.granularity] = tokens;
      }
    }
  });

  RouteReport report;
  report.layers.resize(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    auto& layer = report.layers[static_cast<std::size_t>(l)];
    layer.block_index = moe_blocks[static_cast<std::size_t>(l)];
    layer.fraction.assign(static_cast<std::size_t>(experts), 0.0);
    layer.mean_prob.assign(static_cast<std::size_t>(experts), 0.0);
    double tokens = 0.0;
    std::map<std::string, std::vector<double>> gran;
    std::map<std::string, double> gran_tokens;
    for (const auto& rec_acc : per_record) {
      const auto& acc = rec_acc[static_cast<std::size_t>(l)];
      tokens += acc.tokens;
      for (int e = 0; e < experts; ++e) {
        layer.fraction[static_cast<std::size_t>(e)] +=
            acc.argmax_counts[static_cast<std::size_t>(e)];
        layer.mean_prob[static_cast<std::size_t>(e)] +=
            acc.prob_sums[static_cast<std::size_t>(e)];
      }
      for (const auto& [tag, counts] : acc.gran_counts) {
        auto& dst = gran[tag];
        if (dst.empty()) dst.assign(static_cast<std::size_t>(experts), 0.0);
        for (int e = 0; e < experts; ++e)
          dst[static_cast<std::size_t>(e)] +=
              counts[static_cast<std::size_t>(e)];
        gran_tokens[tag] += acc.gran_tokens.at(tag);
      }
    }
    for (int e = 0; e < experts; ++e) {
      layer.fraction[static_cast<std::size_t>(e)] /= tokens;
      layer.mean_prob[static_cast<std::size_t>(e)] /= tokens;
    }
    layer.entropy = entropy(layer.fraction);
    double loss = 0.0;
    for (int e = 0; e < experts; ++e)
      loss += layer.fraction[static_cast<std::size_t>(e)] *
              layer.mean_prob[static_cast<std::size_t>(e)];
    layer.load_loss = loss * experts;
    for (auto& [tag, counts] : gran) {
      for (auto& v : counts) v /= gran_tokens.at(tag);
      layer.by_granularity.emplace_back(tag, counts);
    }
    report.tokens = static_cast<long>(tokens);
  }
  return report;
}

std::string route_report_csv(const RouteReport& report) {
  std::ostringstream os;
  os << "layer,expert,fraction,mean_prob,entropy,load_loss,granularity\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& layer : report.layers) {
    for (std::size_t e = 0; e < layer.fraction.size(); ++e) {
      os << layer.block_index << "," << e << "," << layer.fraction[e] << ","
         << layer.mean_prob[e] << "," << layer.entropy << ","
         << layer.load_loss << ",all\n";
    }
    for (const auto& [tag, counts] : layer.by_granularity) {
      for (std::size_t e = 0; e < counts.size(); ++e) {
        os << layer.block_index << "," << e << "," << counts[e] << ",,,,"
           << tag << "\n";
      }
    }
  }
  return os.str();
}

}  // namespace vlmoe
