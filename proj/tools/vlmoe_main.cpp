// SPDX-License-Identifier: Apache-2.0
//
// Operator surface: dataset generation, augmentation, two-stage training,
// evaluation, gradient checks, routing reports, greedy generation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vlmoe/augment.hpp"
#include "vlmoe/checkpoint.hpp"
#include "vlmoe/config.hpp"
#include "vlmoe/errors.hpp"
#include "vlmoe/evaluate.hpp"
#include "vlmoe/model.hpp"
#include "vlmoe/synthdata.hpp"
#include "vlmoe/train.hpp"

namespace fs = std::filesystem;
using namespace vlmoe;

namespace {

std::vector<std::string> known_keys() {
  auto keys = model_config_keys();
  for (const char* k :
       {"train.stage", "train.lr_max", "train.lr_min", "train.epochs",
        "train.batch_size", "train.alpha", "train.beta1", "train.beta2",
        "train.adam_eps", "train.weight_decay", "train.grad_clip",
        "train.warmstart_frac", "train.threads", "data.train_per_task",
        "data.test_per_task", "data.image_size", "augment.cutout_scenes",
        "augment.relocate_scenes", "augment.recolor_scenes"})
    keys.push_back(k);
  return keys;
}

KeyValueConfig resolve_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  KeyValueConfig kv;
  if (!config_path.empty()) kv = KeyValueConfig::parse_file(config_path);
  for (const auto& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ValueError("--set expects key=value, got '" + ov + "'");
    std::string key = ov.substr(0, eq), value = ov.substr(eq + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
    };
    trim(key);
    trim(value);
    kv.set(key, value);
  }
  kv.require_known(known_keys());
  return kv;
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig tc;
  tc.stage = kv.get_int("train.stage", tc.stage);
  tc.lr_max = kv.get_double("train.lr_max", tc.lr_max);
  tc.lr_min = kv.get_double("train.lr_min", tc.lr_min);
  tc.epochs = kv.get_int("train.epochs", tc.epochs);
  tc.batch_size = kv.get_int("train.batch_size", tc.batch_size);
  tc.aux_alpha = kv.get_double("train.alpha", tc.aux_alpha);
  tc.adam.beta1 = kv.get_double("train.beta1", tc.adam.beta1);
  tc.adam.beta2 = kv.get_double("train.beta2", tc.adam.beta2);
  tc.adam.eps = kv.get_double("train.adam_eps", tc.adam.eps);
  tc.adam.weight_decay = kv.get_double("train.weight_decay",
                                       tc.adam.weight_decay);
  tc.grad_clip = kv.get_double("train.grad_clip", tc.grad_clip);
  tc.warmstart_frac = kv.get_double("train.warmstart_frac", tc.warmstart_frac);
  tc.threads = kv.get_int("train.threads", tc.threads);
  return tc;
}

void dump_train_config(const TrainConfig& tc, KeyValueConfig& kv) {
  auto fd = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv.set("train.stage", std::to_string(tc.stage));
  kv.set("train.lr_max", fd(tc.lr_max));
  kv.set("train.lr_min", fd(tc.lr_min));
  kv.set("train.epochs", std::to_string(tc.epochs));
  kv.set("train.batch_size", std::to_string(tc.batch_size));
  kv.set("train.alpha", fd(tc.aux_alpha));
  kv.set("train.beta1", fd(tc.adam.beta1));
  kv.set("train.beta2", fd(tc.adam.beta2));
  kv.set("train.adam_eps", fd(tc.adam.eps));
  kv.set("train.weight_decay", fd(tc.adam.weight_decay));
  kv.set("train.grad_clip", fd(tc.grad_clip));
  kv.set("train.warmstart_frac", fd(tc.warmstart_frac));
  kv.set("train.threads", std::to_string(tc.threads));
}

// every run leaves the fully-resolved configuration beside its outputs
void echo_config(const std::string& out_dir, const std::string& command,
                 uint64_t seed, const KeyValueConfig& kv) {
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "config_resolved.txt");
  if (!os) throw DataError("cannot write config echo in " + out_dir);
  os << "# command = " << command << "\n";
  os << "# seed = " << seed << "\n";
  os << kv.to_text();
}

void write_train_log(const TrainResult& result, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write training log: " + path);
  const std::size_t aux_n = result.log.empty() ? 0 : result.log[0].aux.size();
  os << "step,lr,regressive_loss";
  for (std::size_t l = 0; l < aux_n; ++l) os << ",aux_layer" << l;
  os << ",total\n";
  os.precision(17);
  for (const auto& row : result.log) {
    os << row.step << "," << row.lr << "," << row.regressive;
    for (double a : row.aux) os << "," << a;
    os << "," << row.total << "\n";
  }
}

void write_load_stats(const TrainResult& result, const std::string& path) {
  if (result.load_stats.empty()) return;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write load stats: " + path);
  os << "epoch,layer,expert,fraction,mean_prob,load_loss\n";
  os.precision(10);
  for (const auto& ls : result.load_stats) {
    for (std::size_t l = 0; l < ls.load_loss.size(); ++l) {
      for (std::size_t e = 0; e < ls.fraction[l].size(); ++e) {
        os << ls.epoch << "," << l << "," << e << "," << ls.fraction[l][e]
           << "," << ls.mean_prob[l][e] << "," << ls.load_loss[l] << "\n";
      }
    }
  }
}

std::vector<SequenceExample> synthetic_batch(
    const ModelConfig& cfg, const Tokenizer& tokenizer, uint64_t seed,
    std::vector<SceneAnnotation>& keep_alive) {
  keep_alive.clear();
  for (int i = 0; i < 2; ++i) {
    SceneSpec spec =
        make_sparse_spec(cfg.image_size, hash_combine(seed, 1000 + i));
    keep_alive.push_back(generate_scene(spec));
    keep_alive.back().id = "gradcheck_" + std::to_string(i);
  }
  std::vector<SequenceExample> batch;
  std::vector<InstructionRecord> records;
  Rng rng(hash_combine(seed, hash_string("gradcheck-records")));
  records.push_back(to_instruction(keep_alive[0], "OC", rng));
  records.push_back(to_instruction(keep_alive[1], "SC", rng));
  for (std::size_t i = 0; i < records.size(); ++i)
    batch.push_back(build_example(records[i], keep_alive[i].image, tokenizer,
                                  cfg));
  return batch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale sparse mixture-of-experts vision-language model"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, init_ckpt, ckpt_path;
  std::string in_dir, ops_csv = "cutout,relocate,recolor";
  std::string task = "all", image_path, prompt;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  int stage = 1, n_coords = 20, max_tokens = 16;
  double eps = 1e-5, tol = 1e-5;
  bool fresh = false, by_granularity = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--config", config_path);
  gen->add_option("--seed", seed)->required();
  gen->add_option("--out", out_dir)->required();
  gen->add_option("--set", overrides, "override: key=value");

  auto* aug = app.add_subcommand("augment", "context-disentangled augmentation");
  aug->add_option("--in", in_dir)->required();
  aug->add_option("--ops", ops_csv, "comma list: cutout,relocate,recolor");
  aug->add_option("--seed", seed)->required();
  aug->add_option("--out", out_dir)->required();
  aug->add_option("--config", config_path);
  aug->add_option("--set", overrides);

  auto* train = app.add_subcommand("train", "stage 1 (dense) or stage 2 (MoE)");
  train->add_option("--stage", stage)->required();
  train->add_option("--config", config_path);
  train->add_option("--data", data_dir)->required();
  train->add_option("--init", init_ckpt, "stage-1 checkpoint (stage 2)");
  train->add_option("--seed", seed)->required();
  train->add_option("--out", out_dir)->required();
  train->add_option("--set", overrides);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--task", task, "all|IC|VQA|VG|OC|SC");
  eval->add_option("--out", out_dir)->required();
  eval->add_option("--max-tokens", max_tokens);

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  gc->add_option("--ckpt", ckpt_path);
  gc->add_flag("--fresh", fresh, "check a freshly initialized sparse model");
  gc->add_option("--config", config_path);
  gc->add_option("--n-coords", n_coords);
  gc->add_option("--eps", eps);
  gc->add_option("--tol", tol);
  gc->add_option("--seed", seed);
  gc->add_option("--set", overrides);

  auto* rs = app.add_subcommand("route-stats", "per-layer routing report");
  rs->add_option("--ckpt", ckpt_path)->required();
  rs->add_option("--data", data_dir)->required();
  rs->add_flag("--by-granularity", by_granularity);
  rs->add_option("--out", out_dir)->required();

  auto* genr = app.add_subcommand("generate", "greedy decode one prompt");
  genr->add_option("--ckpt", ckpt_path)->required();
  genr->add_option("--image", image_path)->required();
  genr->add_option("--prompt", prompt)->required();
  genr->add_option("--max-tokens", max_tokens);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors exit 1, --help exits 0
  }

  try {
    if (gen->parsed()) {
      KeyValueConfig kv = resolve_config(config_path, overrides);
      CorpusConfig cc;
      cc.train_per_task = kv.get_int("data.train_per_task", cc.train_per_task);
      cc.test_per_task = kv.get_int("data.test_per_task", cc.test_per_task);
      cc.image_size = kv.get_int("data.image_size", cc.image_size);
      cc.seed = seed;
      kv.set("data.train_per_task", std::to_string(cc.train_per_task));
      kv.set("data.test_per_task", std::to_string(cc.test_per_task));
      kv.set("data.image_size", std::to_string(cc.image_size));
      echo_config(out_dir, "gen-data", seed, kv);
      build_corpus(cc, out_dir);
      std::cout << "corpus written to " << out_dir << "\n";
    } else if (aug->parsed()) {
      KeyValueConfig kv = resolve_config(config_path, overrides);
      AugmentConfig ac;
      ac.seed = seed;
      ac.cutout_scenes = kv.get_int("augment.cutout_scenes", ac.cutout_scenes);
      ac.relocate_scenes =
          kv.get_int("augment.relocate_scenes", ac.relocate_scenes);
      ac.recolor_scenes =
          kv.get_int("augment.recolor_scenes", ac.recolor_scenes);
      ac.ops.clear();
      std::stringstream ss(ops_csv);
      std::string op;
      while (std::getline(ss, op, ',')) {
        if (op != "cutout" && op != "relocate" && op != "recolor")
          throw ValueError("unknown augmentation op: " + op);
        ac.ops.push_back(op);
      }
      echo_config(out_dir, "augment", seed, kv);
      AugmentSummary s = augment_corpus(in_dir, ac, out_dir);
      std::cout << "cutout sets: " << s.cutout_sets
                << "  relocations: " << s.relocations
                << "  recolors: " << s.recolors << "  skipped: " << s.skipped
                << "\n";
    } else if (train->parsed()) {
      if (stage == 2 && init_ckpt.empty())
        throw ValueError(
            "train --stage 2 requires --init with a stage-1 checkpoint");
      KeyValueConfig kv = resolve_config(config_path, overrides);
      TrainConfig tc = train_config_from(kv);
      tc.stage = stage;
      tc.seed = seed;
      Corpus corpus = load_corpus(data_dir, "train");
      fs::create_directories(out_dir);
      TrainResult result;
      if (stage == 1) {
        ModelConfig mc;
        apply_model_config(kv, mc);
        mc.vocab = corpus.tokenizer.vocab_size();
        mc.image_size = corpus.image_size;
        mc.aux_alpha = tc.aux_alpha;
        dump_model_config(mc, kv);
        dump_train_config(tc, kv);
        echo_config(out_dir, "train", seed, kv);
        result = train_stage1(mc, corpus, tc);
      } else if (stage == 2) {
        Model base = load_checkpoint(init_ckpt);
        if (kv.has("model.experts"))
          base.cfg.experts = kv.get_int("model.experts", base.cfg.experts);
        if (kv.has("model.top_k"))
          base.cfg.top_k = kv.get_int("model.top_k", base.cfg.top_k);
        if (kv.has("model.moe_period"))
          base.cfg.moe_period =
              kv.get_int("model.moe_period", base.cfg.moe_period);
        base.cfg.top_k = std::min(base.cfg.top_k, base.cfg.experts);
        base.cfg.aux_alpha = tc.aux_alpha;
        dump_model_config(base.cfg, kv);
        dump_train_config(tc, kv);
        echo_config(out_dir, "train", seed, kv);
        result = train_stage2(base, corpus, tc);
      } else {
        throw ValueError("train --stage must be 1 or 2");
      }
      const std::string ckpt_out =
          (fs::path(out_dir) / ("stage" + std::to_string(stage) + ".ckpt"))
              .string();
      save_checkpoint(result.model, ckpt_out, nullptr,
                      {result.steps, Rng(seed).state()});
      write_train_log(result,
                      (fs::path(out_dir) / "train_log.csv").string());
      write_load_stats(result,
                       (fs::path(out_dir) / "load_stats.csv").string());
      std::cout << "final epoch mean loss: " << result.epoch_loss.back()
                << "\ncheckpoint: " << ckpt_out << "\n";
    } else if (eval->parsed()) {
      Model model = load_checkpoint(ckpt_path);
      Corpus corpus = load_corpus(data_dir, "test");
      fs::create_directories(out_dir);
      KeyValueConfig kv;
      dump_model_config(model.cfg, kv);
      echo_config(out_dir, "eval", 0, kv);
      EvalOutputs out = evaluate_model(
          model, corpus, task,
          (fs::path(out_dir) / "eval_detail.jsonl").string(), max_tokens);
      const std::string csv = eval_summary_csv(out);
      std::ofstream os(fs::path(out_dir) / "eval_summary.csv");
      os << csv;
      std::cout << csv;
    } else if (gc->parsed()) {
      KeyValueConfig kv = resolve_config(config_path, overrides);
      Model model = [&]() {
        if (!ckpt_path.empty()) return load_checkpoint(ckpt_path);
        if (!fresh)
          throw ValueError("grad-check needs --ckpt or --fresh");
        ModelConfig mc;
        mc.hidden_size = 32;
        mc.layers = 2;
        mc.ffn_hidden = 64;
        mc.heads = 4;
        mc.lora_rank = 4;
        apply_model_config(kv, mc);
        Tokenizer tk = Tokenizer::build_default();
        mc.vocab = tk.vocab_size();
        Model dense = Model::init(mc, seed);
        Rng rng = Rng(seed).fork("fresh-router");
        return sparsify(dense, mc.experts, mc.top_k, mc.moe_period, 0.01,
                        rng);
      }();
      Tokenizer tokenizer = Tokenizer::build_default();
      if (tokenizer.vocab_size() != model.cfg.vocab)
        throw DataError("checkpoint vocabulary differs from the tokenizer");
      std::vector<GradCheckReport> reports;
      bool done = false;
      for (uint64_t attempt = 0; attempt < 16 && !done; ++attempt) {
        std::vector<SceneAnnotation> scenes;
        auto batch = synthetic_batch(model.cfg, tokenizer,
                                     hash_combine(seed, attempt), scenes);
        try {
          reports = grad_check(model, batch, n_coords, eps,
                               model.cfg.aux_alpha,
                               hash_combine(seed, attempt));
          done = true;
        } catch (const NumericError& e) {
          std::cerr << "resampling batch: " << e.what() << "\n";
        }
      }
      if (!done) throw NumericError("grad-check: no tie-free batch found");
      double worst = 0.0;
      for (const auto& r : reports) {
        std::cout << "group " << r.group << ": max rel error "
                  << r.max_rel_error << " over " << r.coords
                  << " coords (worst " << r.worst_param << "[" << r.worst_index
                  << "] analytic " << r.analytic << " numeric " << r.numeric
                  << ")\n";
        worst = std::max(worst, r.max_rel_error);
      }
      if (worst > tol) {
        std::cerr << "grad-check FAILED: " << worst << " > " << tol << "\n";
        return 3;
      }
      std::cout << "grad-check passed: " << worst << " <= " << tol << "\n";
    } else if (rs->parsed()) {
      Model model = load_checkpoint(ckpt_path);
      Corpus corpus = load_corpus(data_dir, "test");
      fs::create_directories(out_dir);
      KeyValueConfig kv;
      dump_model_config(model.cfg, kv);
      echo_config(out_dir, "route-stats", 0, kv);
      RouteReport report = collect_route_stats(model, corpus, by_granularity);
      const std::string csv = route_report_csv(report);
      std::ofstream os(fs::path(out_dir) / "route_stats.csv");
      os << csv;
      std::cout << csv;
    } else if (genr->parsed()) {
      Model model = load_checkpoint(ckpt_path);
      Tokenizer tokenizer = Tokenizer::build_default();
      if (tokenizer.vocab_size() != model.cfg.vocab)
        throw DataError("checkpoint vocabulary differs from the tokenizer");
      Image img = load_image(image_path);
      std::vector<int> out_ids =
          model.generate(img, tokenizer.tokenize(prompt), max_tokens,
                         tokenizer.bos_id(), tokenizer.eos_id());
      std::cout << tokenizer.detokenize(out_ids) << "\n";
    }
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ValueError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
