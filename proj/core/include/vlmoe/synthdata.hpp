// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlmoe/rng.hpp"
#include "vlmoe/scene.hpp"
#include "vlmoe/tokenizer.hpp"

namespace vlmoe {

struct PaletteColor {
  std::string name;
  int r = 0, g = 0, b = 0;
};

// Named object colors. All entries share the same channel sum, so palette
// transfer between any two entries is luminance-neutral.
const std::vector<PaletteColor>& palette();
const PaletteColor& palette_color(const std::string& name);

const std::vector<std::string>& background_classes();  // >= 8 scene types
const std::vector<std::string>& object_classes();
std::string plural_of(const std::string& class_name);

struct PlannedObject {
  std::string class_name;
  std::string color;
  int size = 8;  // bbox side
};

struct SceneSpec {
  int image_size = 32;
  std::string background_class;
  std::vector<PlannedObject> objects;
  uint64_t seed = 0;
};

// Deterministic per seed. Objects are placed with >= 2 px bbox separation
// (pairwise bbox IoU is 0, satisfying the < 0.1 bound) and a 1 px border
// margin so every object keeps a blending ring.
SceneAnnotation generate_scene(const SceneSpec& spec);

// Scene profiles used by the corpus builder.
//   sparse: 2-4 objects, sizes 8-13, pairwise-distinct (color, class)
//   dense:  one (color, class) group of 7-12 small objects
SceneSpec make_sparse_spec(int image_size, uint64_t seed);
SceneSpec make_dense_spec(int image_size, uint64_t seed);

struct InstructionRecord {
  std::string image_id;
  std::string task;  // IC VQA VG OC SC
  std::string instruction;
  std::string target;
  std::optional<BBox> bbox;  // VG ground truth
  std::string granularity;   // "local" or "global"
  // provenance, set on augmented records
  std::string source_id;
  std::string edit_type;
  uint64_t edit_seed = 0;
  std::string edit_params;
};

// Instruction templating. Throws ValueError when the scene cannot support
// the task (e.g. grounding without a uniquely referable object).
InstructionRecord to_instruction(const SceneAnnotation& scene,
                                 const std::string& task, Rng& rng);

// "the <color> <class> at the <cell>" for a uniquely identified object
std::string referring_expression(const ObjectInstance& obj);

// Coordinates scaled to 0-99 and emitted as "{<x1><y1><x2><y2>}".
std::string serialize_bbox(const BBox& box, int image_size);
std::optional<BBox> parse_bbox(const std::string& text, int image_size);

struct CorpusConfig {
  int train_per_task = 2000;
  int test_per_task = 200;
  int image_size = 32;
  uint64_t seed = 0;
};

void build_corpus(const CorpusConfig& cfg, const std::string& out_dir);

// On-disk corpus access -------------------------------------------------

void write_records(const std::vector<InstructionRecord>& records,
                   const std::string& path);
std::vector<InstructionRecord> read_records(const std::string& path);

void save_scene(const SceneAnnotation& scene, const std::string& corpus_dir);
SceneAnnotation load_scene(const std::string& corpus_dir,
                           const std::string& image_id);
std::vector<std::string> scene_ids_in_order(
    const std::vector<InstructionRecord>& records);

struct Corpus {
  std::vector<InstructionRecord> records;
  std::unordered_map<std::string, Image> images;
  Tokenizer tokenizer = Tokenizer::build_default();
  int image_size = 32;
};

// split: "train" or "test"
Corpus load_corpus(const std::string& dir, const std::string& split);

}  // namespace vlmoe
