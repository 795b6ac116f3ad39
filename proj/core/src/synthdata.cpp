// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "vlmoe/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vlmoe {

const std::vector<PaletteColor>& palette() {
  // constant channel sum (280) across entries
  static const std::vector<PaletteColor> kPalette = {
      {"red", 200, 40, 40},     {"green", 40, 200, 40},
      {"blue", 40, 40, 200},    {"yellow", 120, 120, 40},
      {"cyan", 40, 120, 120},   {"magenta", 120, 40, 120},
      {"orange", 160, 80, 40},  {"purple", 100, 40, 140},
  };
  return kPalette;
}

const PaletteColor& palette_color(const std::string& name) {
  for (const auto& c : palette())
    if (c.name == name) return c;
  throw ValueError("unknown color name: " + name);
}

const std::vector<std::string>& background_classes() {
  static const std::vector<std::string> kBackgrounds = {
      "farmland", "ocean",    "desert", "forest",
      "urban",    "mountain", "runway", "harbor"};
  return kBackgrounds;
}

const std::vector<std::string>& object_classes() {
  static const std::vector<std::string> kClasses = {"square", "disk", "cross",
                                                    "bar"};
  return kClasses;
}

std::string plural_of(const std::string& class_name) {
  if (class_name == "cross") return "crosses";
  return class_name + "s";
}

// --- scene rendering -----------------------------------------------------

namespace {

void set_px(Image& img, int y, int x, int r, int g, int b) {
  img.at(y, x, 0) = r;
  img.at(y, x, 1) = g;
  img.at(y, x, 2) = b;
}

Image render_background(const std::string& cls, int size, Rng& rng) {
  Image img(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      int r = 0, g = 0, b = 0;
      const int n = rng.uniform_int(-8, 8);
      if (cls == "farmland") {
        const bool band = (y / 4) % 2 == 0;
        r = band ? 60 : 90;
        g = band ? 120 : 150;
        b = band ? 50 : 70;
      } else if (cls == "ocean") {
        const int wave =
            static_cast<int>(12.0 * std::sin(x * 0.8 + y * 0.3));
        r = 30 + wave / 2;
        g = 60 + wave;
        b = 150 + wave;
      } else if (cls == "desert") {
        r = 190;
        g = 160;
        b = 110;
      } else if (cls == "forest") {
        const bool dot = ((x * 7 + y * 13) % 11) == 0;
        r = dot ? 20 : 30;
        g = dot ? 70 : 95;
        b = dot ? 25 : 40;
      } else if (cls == "urban") {
        const bool line = (x % 8 == 0) || (y % 8 == 0);
        r = g = line ? 90 : 125;
        b = line ? 95 : 130;
      } else if (cls == "mountain") {
        const bool band = ((x + y) / 5) % 2 == 0;
        r = band ? 110 : 140;
        g = band ? 90 : 120;
        b = band ? 70 : 100;
      } else if (cls == "runway") {
        const bool stripe = x >= size / 2 - 2 && x < size / 2 + 2 &&
                            (y / 3) % 2 == 0;
        r = g = stripe ? 200 : 70;
        b = stripe ? 205 : 75;
      } else if (cls == "harbor") {
        const bool water = x < size / 2;
        r = water ? 40 : 150;
        g = water ? 70 : 140;
        b = water ? 140 : 120;
      } else {
        throw ValueError("unknown background class: " + cls);
      }
      // keep every channel strictly positive so zero-fill is unambiguous
      set_px(img, y, x, std::clamp(r + n, 8, 247), std::clamp(g + n, 8, 247),
             std::clamp(b + n, 8, 247));
    }
  }
  return img;
}

std::vector<uint8_t> shape_mask(const std::string& cls, int s) {
  std::vector<uint8_t> m(static_cast<std::size_t>(s) * s, 0);
  auto at = [&m, s](int y, int x) -> uint8_t& {
    return m[static_cast<std::size_t>(y) * s + x];
  };
  const double c = s / 2.0;
  const int t = std::max(1, s / 3);
  const int lo = (s - t) / 2, hi = lo + t;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      bool on = false;
      if (cls == "square") {
        on = true;
      } else if (cls == "disk") {
        const double dx = x + 0.5 - c, dy = y + 0.5 - c;
        on = dx * dx + dy * dy <= c * c;
      } else if (cls == "cross") {
        on = (x >= lo && x < hi) || (y >= lo && y < hi);
      } else if (cls == "bar") {
        on = y >= lo && y < hi;
      } else {
        throw ValueError("unknown object class: " + cls);
      }
      if (on) at(y, x) = 1;
    }
  }
  return m;
}

bool rects_too_close(const PixelRect& a, const PixelRect& b, int gap) {
  return a.x2 + gap > b.x1 && b.x2 + gap > a.x1 && a.y2 + gap > b.y1 &&
         b.y2 + gap > a.y1;
}

}  // namespace

SceneAnnotation generate_scene(const SceneSpec& spec) {
  if (spec.image_size < 16)
    throw ValueError("generate_scene: image too small");
  Rng rng(spec.seed);
  Rng bg_rng = rng.fork("background");
  Rng place_rng = rng.fork("placement");
  Rng tex_rng = rng.fork("texture");

  SceneAnnotation scene;
  scene.background_class = spec.background_class;
  scene.seed = spec.seed;
  scene.image = render_background(spec.background_class, spec.image_size,
                                  bg_rng);

  std::vector<PixelRect> placed;
  for (const auto& planned : spec.objects) {
    const int s = planned.size;
    if (s + 2 > spec.image_size)
      throw ValueError("generate_scene: object too large for image");
    PixelRect rect;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      rect.x1 = place_rng.uniform_int(1, spec.image_size - s - 1);
      rect.y1 = place_rng.uniform_int(1, spec.image_size - s - 1);
      rect.x2 = rect.x1 + s;
      rect.y2 = rect.y1 + s;
      ok = true;
      for (const auto& other : placed)
        if (rects_too_close(rect, other, 2)) {
          ok = false;
          break;
        }
    }
    if (!ok)
      throw ValueError("generate_scene: placement infeasible, spec too dense");
    placed.push_back(rect);

    ObjectInstance obj;
    obj.class_name = planned.class_name;
    obj.color_attr = planned.color;
    obj.bbox = rect;
    obj.mask = shape_mask(planned.class_name, s);
    obj.position_phrase = derive_position_phrase(rect, spec.image_size);
    const PaletteColor& col = palette_color(planned.color);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        if (!obj.mask[static_cast<std::size_t>(y) * s + x]) continue;
        // luminance-only texture: same offset on all channels keeps every
        // object pixel exactly at the palette chroma
        const int n = tex_rng.uniform_int(-20, 20);
        set_px(scene.image, rect.y1 + y, rect.x1 + x, col.r + n, col.g + n,
               col.b + n);
      }
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

SceneSpec make_sparse_spec(int image_size, uint64_t seed) {
  Rng rng(hash_combine(seed, hash_string("sparse-spec")));
  SceneSpec spec;
  spec.image_size = image_size;
  spec.seed = seed;
  spec.background_class = background_classes()[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int>(background_classes().size()) - 1))];
  const int n = rng.uniform_int(2, 4);
  // pairwise-distinct (color, class) pairs so every object is uniquely
  // referable
  std::vector<std::pair<int, int>> combos;
  for (std::size_t c = 0; c < palette().size(); ++c)
    for (std::size_t k = 0; k < object_classes().size(); ++k)
      combos.emplace_back(static_cast<int>(c), static_cast<int>(k));
  rng.shuffle(combos);
  // larger object sets use smaller sizes so placement stays feasible
  const int max_size = 14 - n;
  for (int i = 0; i < n; ++i) {
    PlannedObject obj;
    obj.color = palette()[static_cast<std::size_t>(combos[i].first)].name;
    obj.class_name =
        object_classes()[static_cast<std::size_t>(combos[i].second)];
    obj.size = rng.uniform_int(7, max_size);
    spec.objects.push_back(std::move(obj));
  }
  return spec;
}

SceneSpec make_dense_spec(int image_size, uint64_t seed) {
  Rng rng(hash_combine(seed, hash_string("dense-spec")));
  SceneSpec spec;
  spec.image_size = image_size;
  spec.seed = seed;
  spec.background_class = background_classes()[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int>(background_classes().size()) - 1))];
  const std::string color = palette()[static_cast<std::size_t>(rng.uniform_int(
      0, static_cast<int>(palette().size()) - 1))].name;
  const std::string cls = object_classes()[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int>(object_classes().size()) - 1))];
  const int count = rng.uniform_int(7, 12);
  const int size = rng.uniform_int(3, 4);
  for (int i = 0; i < count; ++i)
    spec.objects.push_back({cls, color, size});
  return spec;
}

// --- instruction templating ----------------------------------------------

namespace {

struct Group {
  std::string class_name, color;
  int count = 0;
  int first_idx = -1;
};

std::vector<Group> scene_groups(const SceneAnnotation& scene) {
  std::vector<Group> groups;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& obj = scene.objects[i];
    auto it = std::find_if(groups.begin(), groups.end(), [&obj](const Group& g) {
      return g.class_name == obj.class_name && g.color == obj.color_attr;
    });
    if (it == groups.end()) {
      groups.push_back({obj.class_name, obj.color_attr, 1,
                        static_cast<int>(i)});
    } else {
      ++it->count;
    }
  }
  std::sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    if (a.class_name != b.class_name) return a.class_name < b.class_name;
    return a.color < b.color;
  });
  return groups;
}

std::string group_phrase(const Group& g) {
  return std::to_string(g.count) + " " + g.color + " " +
         (g.count == 1 ? g.class_name : plural_of(g.class_name));
}

std::string caption_of(const SceneAnnotation& scene) {
  auto groups = scene_groups(scene);
  std::string cap = "a " + scene.background_class + " scene";
  if (!groups.empty()) {
    cap += " with " + group_phrase(groups[0]);
    if (groups.size() > 1) cap += " and " + group_phrase(groups[1]);
  }
  return cap;
}

std::pair<std::string, std::string> absent_combo(const SceneAnnotation& scene,
                                                 Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto& color = palette()[static_cast<std::size_t>(rng.uniform_int(
        0, static_cast<int>(palette().size()) - 1))].name;
    const auto& cls = object_classes()[static_cast<std::size_t>(rng.uniform_int(
        0, static_cast<int>(object_classes().size()) - 1))];
    bool present = false;
    for (const auto& obj : scene.objects)
      if (obj.class_name == cls && obj.color_attr == color) present = true;
    if (!present) return {color, cls};
  }
  throw ValueError("no absent (color, class) combination found");
}

}  // namespace

std::string referring_expression(const ObjectInstance& obj) {
  return "the " + obj.color_attr + " " + obj.class_name + " at the " +
         obj.position_phrase;
}

InstructionRecord to_instruction(const SceneAnnotation& scene,
                                 const std::string& task, Rng& rng) {
  InstructionRecord rec;
  rec.image_id = scene.id;
  rec.task = task;
  auto groups = scene_groups(scene);

  if (task == "SC") {
    rec.instruction = "Which scene does this image belong to?";
    rec.target = scene.background_class;
    rec.granularity = "global";
  } else if (task == "IC") {
    rec.instruction = rng.uniform() < 0.5
                          ? "describe the image."
                          : "give a short caption for this image.";
    rec.target = caption_of(scene);
    rec.granularity = "global";
  } else if (task == "OC") {
    if (groups.empty()) throw ValueError("OC: scene has no countable objects");
    const Group& g = groups[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(groups.size()) - 1))];
    const bool by_color = rng.uniform() < 0.5;
    if (by_color) {
      rec.instruction = rng.uniform() < 0.5
                            ? "how many " + g.color + " " +
                                  plural_of(g.class_name) + " are there?"
                            : "count the " + g.color + " " +
                                  plural_of(g.class_name) + ".";
      rec.target = std::to_string(g.count);
    } else {
      rec.instruction =
          "how many " + plural_of(g.class_name) + " are there?";
      rec.target = std::to_string(scene.count_class(g.class_name));
    }
    rec.granularity = "local";
  } else if (task == "VG") {
    std::vector<int> unique;
    for (const auto& g : groups)
      if (g.count == 1) unique.push_back(g.first_idx);
    if (unique.empty())
      throw ValueError("VG: scene has no uniquely referable object");
    const auto& obj = scene.objects[static_cast<std::size_t>(
        unique[static_cast<std::size_t>(rng.uniform_int(
            0, static_cast<int>(unique.size()) - 1))])];
    rec.instruction =
        "[refer] Where is <p> " + referring_expression(obj) + " </p>?";
    rec.bbox = obj.bbox.to_bbox();
    rec.target = serialize_bbox(*rec.bbox, scene.image.width);
    rec.granularity = "local";
  } else if (task == "VQA") {
    std::vector<int> unique;
    for (const auto& g : groups)
      if (g.count == 1) unique.push_back(g.first_idx);
    const int kind = unique.empty() ? rng.uniform_int(0, 1)
                                    : rng.uniform_int(0, 2);
    if (kind == 0) {  // presence
      const bool positive = rng.uniform() < 0.5 && !groups.empty();
      if (positive) {
        const Group& g = groups[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(groups.size()) - 1))];
        rec.instruction =
            "is there a " + g.color + " " + g.class_name + " in the image?";
        rec.target = "yes";
      } else {
        auto [color, cls] = absent_combo(scene, rng);
        rec.instruction =
            "is there a " + color + " " + cls + " in the image?";
        rec.target = "no";
      }
      rec.granularity = "global";
    } else if (kind == 1) {  // comparison
      if (groups.empty()) throw ValueError("VQA: empty scene");
      const Group& g1 = groups[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(groups.size()) - 1))];
      std::string c2, k2;
      int n2 = 0;
      if (groups.size() > 1 && rng.uniform() < 0.5) {
        const Group* g2 = &g1;
        while (g2 == &g1)
          g2 = &groups[static_cast<std::size_t>(
              rng.uniform_int(0, static_cast<int>(groups.size()) - 1))];
        c2 = g2->color;
        k2 = g2->class_name;
        n2 = g2->count;
      } else {
        auto [color, cls] = absent_combo(scene, rng);
        c2 = color;
        k2 = cls;
      }
      rec.instruction = "are there more " + g1.color + " " +
                        plural_of(g1.class_name) + " than " + c2 + " " +
                        plural_of(k2) + "?";
      rec.target = g1.count > n2 ? "yes" : "no";
      rec.granularity = "local";
    } else {  // direction
      const auto& obj = scene.objects[static_cast<std::size_t>(
          unique[static_cast<std::size_t>(rng.uniform_int(
              0, static_cast<int>(unique.size()) - 1))])];
      rec.instruction = "which part of the image contains the " +
                        obj.color_attr + " " + obj.class_name + "?";
      rec.target = obj.position_phrase;
      rec.granularity = "local";
    }
  } else {
    throw ValueError("unknown task: " + task);
  }
  return rec;
}

// --- bbox serialization ----------------------------------------------------

std::string serialize_bbox(const BBox& box, int image_size) {
  if (box.x1 < 0 || box.y1 < 0 || box.x2 > image_size || box.y2 > image_size)
    throw ValueError("serialize_bbox: box out of image bounds");
  auto q = [image_size](double v) {
    int s = static_cast<int>(std::floor(v * 100.0 / image_size));
    return std::clamp(s, 0, 99);
  };
  std::ostringstream os;
  os << "{<" << q(box.x1) << "><" << q(box.y1) << "><" << q(box.x2) << "><"
     << q(box.y2) << ">}";
  return os.str();
}

std::optional<BBox> parse_bbox(const std::string& text, int image_size) {
  std::size_t pos = 0;
  auto expect = [&text, &pos](char c) {
    if (pos >= text.size() || text[pos] != c) return false;
    ++pos;
    return true;
  };
  if (!expect('{')) return std::nullopt;
  double vals[4];
  for (double& val : vals) {
    if (!expect('<')) return std::nullopt;
    int v = 0;
    std::size_t digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      v = v * 10 + (text[pos] - '0');
      ++pos;
      ++digits;
    }
    if (digits == 0 || digits > 2 || v > 99) return std::nullopt;
    if (!expect('>')) return std::nullopt;
    val = v * image_size / 100.0;
  }
  if (!expect('}') || pos != text.size()) return std::nullopt;
  BBox box{vals[0], vals[1], vals[2], vals[3]};
  if (box.x2 <= box.x1 || box.y2 <= box.y1) return std::nullopt;
  return box;
}

// --- record and scene persistence ------------------------------------------

namespace {

json record_to_json(const InstructionRecord& r) {
  json j;
  j["image_id"] = r.image_id;
  j["task"] = r.task;
  j["instruction"] = r.instruction;
  j["target"] = r.target;
  if (r.bbox)
    j["bbox"] = {r.bbox->x1, r.bbox->y1, r.bbox->x2, r.bbox->y2};
  else
    j["bbox"] = nullptr;
  j["granularity"] = r.granularity;
  if (!r.edit_type.empty()) {
    j["provenance"] = {{"source_id", r.source_id},
                       {"edit_type", r.edit_type},
                       {"seed", r.edit_seed},
                       {"params", r.edit_params}};
  }
  return j;
}

InstructionRecord record_from_json(const json& j) {
  InstructionRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.instruction = j.at("instruction").get<std::string>();
  r.target = j.at("target").get<std::string>();
  if (!j.at("bbox").is_null()) {
    auto v = j.at("bbox");
    r.bbox = BBox{v.at(0).get<double>(), v.at(1).get<double>(),
                  v.at(2).get<double>(), v.at(3).get<double>()};
  }
  r.granularity = j.at("granularity").get<std::string>();
  if (j.contains("provenance")) {
    const auto& p = j.at("provenance");
    r.source_id = p.at("source_id").get<std::string>();
    r.edit_type = p.at("edit_type").get<std::string>();
    r.edit_seed = p.at("seed").get<uint64_t>();
    r.edit_params = p.at("params").get<std::string>();
  }
  return r;
}

}  // namespace

void write_records(const std::vector<InstructionRecord>& records,
                   const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write records file: " + path);
  for (const auto& r : records) os << record_to_json(r).dump() << "\n";
}

std::vector<InstructionRecord> read_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open records file: " + path);
  std::vector<InstructionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("bad record at " + path + ":" + std::to_string(lineno) +
                      ": " + e.what());
    }
  }
  return out;
}

void save_scene(const SceneAnnotation& scene, const std::string& corpus_dir) {
  fs::create_directories(fs::path(corpus_dir) / "images");
  fs::create_directories(fs::path(corpus_dir) / "annotations");
  save_image(scene.image,
             (fs::path(corpus_dir) / "images" / (scene.id + ".vimg")).string());
  json j;
  j["id"] = scene.id;
  j["background"] = scene.background_class;
  j["seed"] = scene.seed;
  json objs = json::array();
  for (const auto& obj : scene.objects) {
    std::string mask(obj.mask.size(), '0');
    for (std::size_t i = 0; i < obj.mask.size(); ++i)
      if (obj.mask[i]) mask[i] = '1';
    objs.push_back({{"class", obj.class_name},
                    {"color", obj.color_attr},
                    {"position", obj.position_phrase},
                    {"bbox", {obj.bbox.x1, obj.bbox.y1, obj.bbox.x2,
                              obj.bbox.y2}},
                    {"mask", mask}});
  }
  j["objects"] = objs;
  std::ofstream os(
      (fs::path(corpus_dir) / "annotations" / (scene.id + ".json")).string());
  if (!os) throw DataError("cannot write annotation for " + scene.id);
  os << j.dump() << "\n";
}

SceneAnnotation load_scene(const std::string& corpus_dir,
                           const std::string& image_id) {
  SceneAnnotation scene;
  scene.image = load_image(
      (fs::path(corpus_dir) / "images" / (image_id + ".vimg")).string());
  const std::string apath =
      (fs::path(corpus_dir) / "annotations" / (image_id + ".json")).string();
  std::ifstream is(apath);
  if (!is) throw DataError("cannot open annotation: " + apath);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("bad annotation " + apath + ": " + e.what());
  }
  scene.id = j.at("id").get<std::string>();
  scene.background_class = j.at("background").get<std::string>();
  scene.seed = j.at("seed").get<uint64_t>();
  for (const auto& o : j.at("objects")) {
    ObjectInstance obj;
    obj.class_name = o.at("class").get<std::string>();
    obj.color_attr = o.at("color").get<std::string>();
    obj.position_phrase = o.at("position").get<std::string>();
    const auto& b = o.at("bbox");
    obj.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                b.at(3).get<int>()};
    const std::string mask = o.at("mask").get<std::string>();
    obj.mask.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
      obj.mask[i] = mask[i] == '1' ? 1 : 0;
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

std::vector<std::string> scene_ids_in_order(
    const std::vector<InstructionRecord>& records) {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (std::find(ids.begin(), ids.end(), r.image_id) == ids.end())
      ids.push_back(r.image_id);
  }
  return ids;
}

// --- corpus builder ---------------------------------------------------------

void build_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
  if (cfg.train_per_task < 1 || cfg.test_per_task < 1)
    throw ValueError("build_corpus: per-task quotas must be >= 1");
  fs::create_directories(out_dir);
  Tokenizer tokenizer = Tokenizer::build_default();
  tokenizer.save((fs::path(out_dir) / "vocab.txt").string());

  const std::vector<std::string> tasks = {"SC", "IC", "VQA", "OC", "VG"};
  json manifest;
  manifest["format_version"] = 1;
  manifest["image_size"] = cfg.image_size;
  manifest["seed"] = cfg.seed;
  manifest["train_per_task"] = cfg.train_per_task;
  manifest["test_per_task"] = cfg.test_per_task;
  manifest["tasks"] = tasks;

  for (const std::string split : {"train", "test"}) {
    const int quota_per_task =
        split == "train" ? cfg.train_per_task : cfg.test_per_task;
    std::vector<int> quota(tasks.size(), quota_per_task);
    const uint64_t split_seed =
        hash_combine(cfg.seed, hash_string(split + "-scenes"));
    std::vector<InstructionRecord> records;
    int scene_idx = 0, scenes_used = 0;
    const int scene_cap = 40 * quota_per_task + 1000;
    while (std::any_of(quota.begin(), quota.end(),
                       [](int q) { return q > 0; })) {
      if (scene_idx > scene_cap)
        throw DataError("build_corpus: could not satisfy task quotas");
      const uint64_t scene_seed =
          hash_combine(split_seed, static_cast<uint64_t>(scene_idx));
      SceneSpec spec = (scene_idx % 2 == 0)
                           ? make_sparse_spec(cfg.image_size, scene_seed)
                           : make_dense_spec(cfg.image_size, scene_seed);
      SceneAnnotation scene;
      try {
        scene = generate_scene(spec);
      } catch (const ValueError&) {
        ++scene_idx;  // rare infeasible placement, skip the seed
        continue;
      }
      {
        std::ostringstream id;
        id << split << "_" << std::setw(6) << std::setfill('0') << scene_idx;
        scene.id = id.str();
      }
      bool used = false;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (quota[t] <= 0) continue;
        Rng rec_rng(hash_combine(scene_seed, hash_string("rec-" + tasks[t])));
        InstructionRecord rec;
        try {
          rec = to_instruction(scene, tasks[t], rec_rng);
        } catch (const ValueError&) {
          continue;  // task not applicable to this scene profile
        }
        records.push_back(std::move(rec));
        --quota[t];
        used = true;
      }
      if (used) {
        save_scene(scene, out_dir);
        ++scenes_used;
      }
      ++scene_idx;
    }
    write_records(records, (fs::path(out_dir) / (split + ".jsonl")).string());
    manifest[split + "_records"] = records.size();
    manifest[split + "_scenes"] = scenes_used;
  }
  std::ofstream os((fs::path(out_dir) / "manifest.json").string());
  if (!os) throw DataError("cannot write manifest");
  os << manifest.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir, const std::string& split) {
  Corpus c;
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  std::ifstream ms(mpath);
  if (!ms) throw DataError("cannot open manifest: " + mpath);
  json manifest;
  try {
    ms >> manifest;
  } catch (const json::exception& e) {
    throw DataError("bad manifest: " + std::string(e.what()));
  }
  c.image_size = manifest.at("image_size").get<int>();
  c.tokenizer = Tokenizer::load((fs::path(dir) / "vocab.txt").string());
  c.records = read_records((fs::path(dir) / (split + ".jsonl")).string());
  for (const auto& id : scene_ids_in_order(c.records)) {
    c.images.emplace(
        id, load_image((fs::path(dir) / "images" / (id + ".vimg")).string()));
  }
  return c;
}

}  // namespace vlmoe
