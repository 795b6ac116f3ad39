// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests of the command line binary (path injected at build time).
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string out_file =
      (fs::temp_directory_path() / "vlmoe_cli_out.txt").string();
  const std::string cmd =
      std::string(VLMOE_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(status);
  std::ifstream is(out_file);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  return r;
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "vlmoe_cli_work";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli pipeline") {
  const fs::path base = work_dir();
  const fs::path data = base / "data";
  const fs::path aug = base / "aug";
  const fs::path run1 = base / "run1";

  SUBCASE("usage errors exit with code 1") {
    CHECK(run_cli("train --stage 1").exit_code == 1);  // missing required
    RunResult r = run_cli("train --stage 2 --data x --seed 1 --out " +
                          (base / "x").string());
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("--init") != std::string::npos);
  }

  SUBCASE("unknown config keys are rejected with their names") {
    RunResult r = run_cli("gen-data --seed 1 --out " + (base / "y").string() +
                          " --set data.twain_per_task=5");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("data.twain_per_task") != std::string::npos);
  }

  SUBCASE("gen, augment, train both stages, eval, reports") {
    RunResult gen = run_cli(
        "gen-data --seed 11 --out " + data.string() +
        " --set data.train_per_task=6 --set data.test_per_task=3");
    CHECK(gen.exit_code == 0);
    CHECK(fs::exists(data / "train.jsonl"));
    CHECK(fs::exists(data / "manifest.json"));
    CHECK(fs::exists(data / "config_resolved.txt"));

    RunResult a = run_cli("augment --in " + data.string() + " --seed 12" +
                          " --ops cutout,relocate,recolor --out " +
                          aug.string() +
                          " --set augment.cutout_scenes=2"
                          " --set augment.relocate_scenes=2"
                          " --set augment.recolor_scenes=2");
    CHECK(a.exit_code == 0);
    CHECK(fs::exists(aug / "train.jsonl"));

    RunResult t1 = run_cli(
        "train --stage 1 --data " + data.string() + " --seed 13 --out " +
        (run1 / "s1").string() +
        " --set model.hidden_size=32 --set model.layers=2"
        " --set model.patch_size=8 --set model.patch_channels=12"
        " --set model.ffn_hidden=48 --set model.lora_rank=4"
        " --set train.epochs=1 --set train.batch_size=8");
    CHECK(t1.exit_code == 0);
    const fs::path ckpt1 = run1 / "s1" / "stage1.ckpt";
    CHECK(fs::exists(ckpt1));
    CHECK(fs::exists(run1 / "s1" / "train_log.csv"));
    CHECK(fs::exists(run1 / "s1" / "config_resolved.txt"));

    RunResult t2 = run_cli(
        "train --stage 2 --data " + aug.string() + " --init " +
        ckpt1.string() + " --seed 14 --out " + (run1 / "s2").string() +
        " --set model.experts=2 --set model.top_k=1"
        " --set train.epochs=1 --set train.batch_size=8");
    CHECK(t2.exit_code == 0);
    const fs::path ckpt2 = run1 / "s2" / "stage2.ckpt";
    CHECK(fs::exists(ckpt2));
    CHECK(fs::exists(run1 / "s2" / "load_stats.csv"));

    RunResult ev = run_cli("eval --ckpt " + ckpt2.string() + " --data " +
                           data.string() + " --task VG --out " +
                           (run1 / "eval").string());
    CHECK(ev.exit_code == 0);
    const std::string summary = read_file(run1 / "eval" / "eval_summary.csv");
    CHECK(summary.find("grounding_acc@0.5") != std::string::npos);
    CHECK(summary.find("grounding_acc@0.7") != std::string::npos);
    CHECK(fs::exists(run1 / "eval" / "eval_detail.jsonl"));

    RunResult rs = run_cli("route-stats --ckpt " + ckpt2.string() +
                           " --data " + data.string() + " --by-granularity" +
                           " --out " + (run1 / "routes").string());
    CHECK(rs.exit_code == 0);
    const std::string routes = read_file(run1 / "routes" / "route_stats.csv");
    CHECK(routes.find("fraction") != std::string::npos);
    CHECK(routes.find("local") != std::string::npos);

    // generate prints to stdout
    std::string image_id;
    {
      std::ifstream is(data / "test.jsonl");
      std::string line;
      std::getline(is, line);
      const auto pos = line.find("\"image_id\":\"");
      image_id = line.substr(pos + 12, line.find('"', pos + 12) - pos - 12);
    }
    RunResult g = run_cli("generate --ckpt " + ckpt2.string() + " --image " +
                          (data / "images" / (image_id + ".vimg")).string() +
                          " --prompt \"Which scene does this image belong "
                          "to?\" --max-tokens 4");
    CHECK(g.exit_code == 0);

    // grad-check on a fresh sparse model
    RunResult gc = run_cli(
        "grad-check --fresh --n-coords 6 --eps 1e-5 --seed 3"
        " --set model.patch_size=8 --set model.patch_channels=12");
    CHECK(gc.exit_code == 0);
    CHECK(gc.output.find("grad-check passed") != std::string::npos);
  }
}
