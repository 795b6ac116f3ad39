// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/augment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vlmoe/errors.hpp"

namespace fs = std::filesystem;

namespace vlmoe {

CutoutFeasibility cutout_feasibility(int class_count) {
  CutoutFeasibility f;
  if (class_count < 1) return f;
  const double n = class_count;
  for (int m = 1; m <= class_count; ++m) {
    // legal iff (m-1, m] intersects [0.15*N, 0.30*N)
    const double lo = std::max(static_cast<double>(m - 1), 0.15 * n);
    const double hi = std::min(static_cast<double>(m), 0.30 * n);
    if (lo < hi || 0.15 * n == static_cast<double>(m)) f.legal_m.push_back(m);
  }
  if (f.legal_m.empty()) return f;
  const int span = f.legal_m.back() - f.legal_m.front();
  f.max_distinct = std::min(4, static_cast<int>(f.legal_m.size()));
  f.required_spread = std::min(
      static_cast<int>(std::ceil(0.1 * n)), span);
  f.feasible = true;
  return f;
}

std::vector<CutoutVariant> count_varying_cutout(const SceneAnnotation& scene,
                                                const std::string& class_name,
                                                Rng& rng) {
  std::vector<int> members;
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    if (scene.objects[i].class_name == class_name)
      members.push_back(static_cast<int>(i));
  const int n_c = static_cast<int>(members.size());
  if (n_c < 7) throw AugmentSkip("scene-too-sparse");

  const CutoutFeasibility feas = cutout_feasibility(n_c);
  std::array<double, 4> ratios{};
  std::array<int, 4> removed{};
  bool accepted = false;
  for (int round = 0; round < 100 && !accepted; ++round) {
    std::set<int> distinct;
    int mmin = n_c, mmax = 0;
    for (int j = 0; j < 4; ++j) {
      ratios[static_cast<std::size_t>(j)] = rng.uniform(0.15, 0.30);
      removed[static_cast<std::size_t>(j)] = static_cast<int>(
          std::ceil(ratios[static_cast<std::size_t>(j)] * n_c));
      distinct.insert(removed[static_cast<std::size_t>(j)]);
      mmin = std::min(mmin, removed[static_cast<std::size_t>(j)]);
      mmax = std::max(mmax, removed[static_cast<std::size_t>(j)]);
    }
    accepted = static_cast<int>(distinct.size()) == feas.max_distinct &&
               (mmax - mmin) >= feas.required_spread;
  }
  if (!accepted) throw AugmentSkip("constraint-unsatisfiable");

  std::vector<CutoutVariant> variants;
  for (int j = 0; j < 4; ++j) {
    CutoutVariant v;
    v.ratio = ratios[static_cast<std::size_t>(j)];
    v.removed = removed[static_cast<std::size_t>(j)];
    v.new_count = n_c - v.removed;
    std::vector<int> pool = members;
    rng.shuffle(pool);
    v.removed_ids.assign(pool.begin(), pool.begin() + v.removed);
    std::sort(v.removed_ids.begin(), v.removed_ids.end());
    v.image = scene.image;
    for (int id : v.removed_ids) {
      const auto& obj = scene.objects[static_cast<std::size_t>(id)];
      for (int y = 0; y < obj.bbox.h(); ++y)
        for (int x = 0; x < obj.bbox.w(); ++x)
          if (obj.mask_at(y, x))
            for (int ch = 0; ch < v.image.channels; ++ch)
              v.image.at(obj.bbox.y1 + y, obj.bbox.x1 + x, ch) = 0.0;
    }
    variants.push_back(std::move(v));
  }
  return variants;
}

namespace {

bool rect_hits_object_pixels(const PixelRect& rect,
                             const ObjectInstance& other) {
  const int x1 = std::max(rect.x1, other.bbox.x1);
  const int y1 = std::max(rect.y1, other.bbox.y1);
  const int x2 = std::min(rect.x2, other.bbox.x2);
  const int y2 = std::min(rect.y2, other.bbox.y2);
  for (int y = y1; y < y2; ++y)
    for (int x = x1; x < x2; ++x)
      if (other.mask_at(y - other.bbox.y1, x - other.bbox.x1)) return true;
  return false;
}

}  // namespace

SceneAnnotation relocate_object(const SceneAnnotation& scene, int obj_id,
                                int target_cell, Rng& rng) {
  if (obj_id < 0 || obj_id >= static_cast<int>(scene.objects.size()))
    throw ValueError("relocate_object: object index out of range");
  if (target_cell < 0 || target_cell >= 9)
    throw ValueError("relocate_object: target cell out of range");
  const ObjectInstance& obj =
      scene.objects[static_cast<std::size_t>(obj_id)];
  const int size = scene.image.width;
  const int w = obj.bbox.w(), h = obj.bbox.h();

  // feasible top-left range keeping the bbox center inside the target cell
  // and a 1 px ring inside the image
  const double third = size / 3.0;
  const int col = target_cell % 3, row = target_cell / 3;
  const auto span = [third](int idx, int extent, int img) {
    const double lo_c = idx * third, hi_c = (idx + 1) * third;
    int lo = static_cast<int>(std::ceil(lo_c - extent / 2.0));
    int hi = static_cast<int>(std::floor(hi_c - extent / 2.0));
    lo = std::max(lo, 1);
    hi = std::min(hi, img - extent - 1);
    return std::pair<int, int>(lo, hi);
  };
  auto [x_lo, x_hi] = span(col, w, size);
  auto [y_lo, y_hi] = span(row, h, size);
  if (x_lo > x_hi || y_lo > y_hi) throw AugmentSkip("placement-infeasible");

  PixelRect placed;
  bool ok = false;
  for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
    placed.x1 = rng.uniform_int(x_lo, x_hi);
    placed.y1 = rng.uniform_int(y_lo, y_hi);
    placed.x2 = placed.x1 + w;
    placed.y2 = placed.y1 + h;
    if (derive_position_phrase(placed, size) !=
        kCellNames[static_cast<std::size_t>(target_cell)])
      continue;
    const PixelRect ring{placed.x1 - 1, placed.y1 - 1, placed.x2 + 1,
                         placed.y2 + 1};
    ok = true;
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      if (static_cast<int>(o) == obj_id) continue;
      const auto& other = scene.objects[o];
      if (iou(placed.to_bbox(), other.bbox.to_bbox()) >= 0.1 ||
          rect_hits_object_pixels(ring, other)) {
        ok = false;
        break;
      }
    }
  }
  if (!ok) throw AugmentSkip("placement-infeasible");

  // source patch with a 1 px ring; mask centered inside it
  Image patch(h + 2, w + 2, scene.image.channels);
  for (int y = 0; y < h + 2; ++y)
    for (int x = 0; x < w + 2; ++x)
      for (int ch = 0; ch < patch.channels; ++ch)
        patch.at(y, x, ch) =
            scene.image.at(obj.bbox.y1 - 1 + y, obj.bbox.x1 - 1 + x, ch);
  std::vector<uint8_t> pmask(static_cast<std::size_t>(h + 2) * (w + 2), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (obj.mask_at(y, x))
        pmask[static_cast<std::size_t>(y + 1) * (w + 2) + (x + 1)] = 1;

  SceneAnnotation out = scene;
  // smooth in-fill of the vacated pixels from their boundary
  poisson_solve_region(out.image, obj.bbox.x1, obj.bbox.y1, obj.mask, h, w,
                       nullptr);
  // seamless re-composite at the new site
  out.image = poisson_blend(patch, out.image, pmask, placed.x1 - 1,
                            placed.y1 - 1);

  ObjectInstance& moved = out.objects[static_cast<std::size_t>(obj_id)];
  moved.bbox = placed;
  moved.position_phrase = derive_position_phrase(placed, size);
  return out;
}

namespace {

// opponent chroma coordinates; the channel sum is the luminance axis
std::pair<double, double> mean_chroma(const SceneAnnotation& scene,
                                      const ObjectInstance& obj) {
  double c1 = 0.0, c2 = 0.0;
  int n = 0;
  for (int y = 0; y < obj.bbox.h(); ++y) {
    for (int x = 0; x < obj.bbox.w(); ++x) {
      if (!obj.mask_at(y, x)) continue;
      const double r = scene.image.at(obj.bbox.y1 + y, obj.bbox.x1 + x, 0);
      const double g = scene.image.at(obj.bbox.y1 + y, obj.bbox.x1 + x, 1);
      const double b = scene.image.at(obj.bbox.y1 + y, obj.bbox.x1 + x, 2);
      c1 += r - g;
      c2 += r + g - 2.0 * b;
      ++n;
    }
  }
  if (n == 0) throw ValueError("recolor: empty object mask");
  return {c1 / n, c2 / n};
}

}  // namespace

SceneAnnotation recolor_object(const SceneAnnotation& scene, int obj_id,
                               const std::string& new_color) {
  if (obj_id < 0 || obj_id >= static_cast<int>(scene.objects.size()))
    throw ValueError("recolor_object: object index out of range");
  const PaletteColor& target = palette_color(new_color);
  SceneAnnotation out = scene;
  ObjectInstance& obj = out.objects[static_cast<std::size_t>(obj_id)];

  auto [c1, c2] = mean_chroma(scene, obj);
  const double t1 = target.r - target.g;
  const double t2 = target.r + target.g - 2.0 * target.b;
  const double d1 = t1 - c1, d2 = t2 - c2;
  // integer offsets with zero channel sum: the per-pixel channel sum (and so
  // the luminance) is carried through unchanged
  const long dr = std::llround((3.0 * d1 + d2) / 6.0);
  const long dg = std::llround((-3.0 * d1 + d2) / 6.0);
  const long db = -dr - dg;
  for (int y = 0; y < obj.bbox.h(); ++y) {
    for (int x = 0; x < obj.bbox.w(); ++x) {
      if (!obj.mask_at(y, x)) continue;
      out.image.at(obj.bbox.y1 + y, obj.bbox.x1 + x, 0) += dr;
      out.image.at(obj.bbox.y1 + y, obj.bbox.x1 + x, 1) += dg;
      out.image.at(obj.bbox.y1 + y, obj.bbox.x1 + x, 2) += db;
    }
  }
  obj.color_attr = new_color;
  return out;
}

double chroma_distance(const SceneAnnotation& scene, int obj_id,
                       const std::string& color_name) {
  const PaletteColor& target = palette_color(color_name);
  const ObjectInstance& obj =
      scene.objects[static_cast<std::size_t>(obj_id)];
  auto [c1, c2] = mean_chroma(scene, obj);
  const double o1 = c1 / std::sqrt(2.0);
  const double o2 = c2 / std::sqrt(6.0);
  const double to1 = (target.r - target.g) / std::sqrt(2.0);
  const double to2 = (target.r + target.g - 2.0 * target.b) / std::sqrt(6.0);
  return std::hypot(o1 - to1, o2 - to2);
}

std::string rewrite_expression(const std::string& expr,
                               const std::string& old_term,
                               const std::string& new_term) {
  if (old_term.empty()) throw ValueError("rewrite_expression: empty term");
  std::size_t count = 0, pos = 0, found = std::string::npos;
  while ((pos = expr.find(old_term, pos)) != std::string::npos) {
    ++count;
    found = pos;
    pos += old_term.size();
  }
  if (count != 1)
    throw ValueError("ambiguous-expression: '" + old_term + "' occurs " +
                     std::to_string(count) + " times in '" + expr + "'");
  std::string out = expr;
  out.replace(found, old_term.size(), new_term);
  return out;
}

// --- corpus-level pipeline ---------------------------------------------------

namespace {

std::string format_ratio(double r) {
  std::ostringstream os;
  os.precision(17);
  os << r;
  return os.str();
}

}  // namespace

AugmentSummary augment_corpus(const std::string& in_dir,
                              const AugmentConfig& cfg,
                              const std::string& out_dir) {
  AugmentSummary summary;
  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "annotations");
  for (const char* f : {"manifest.json", "vocab.txt", "test.jsonl"}) {
    fs::copy_file(fs::path(in_dir) / f, fs::path(out_dir) / f,
                  fs::copy_options::overwrite_existing);
  }
  for (const char* d : {"images", "annotations"}) {
    fs::copy(fs::path(in_dir) / d, fs::path(out_dir) / d,
             fs::copy_options::overwrite_existing | fs::copy_options::recursive);
  }

  auto base_records =
      read_records((fs::path(in_dir) / "train.jsonl").string());
  const auto scene_ids = scene_ids_in_order(base_records);
  std::vector<InstructionRecord> augmented;

  const bool do_cutout = std::find(cfg.ops.begin(), cfg.ops.end(), "cutout") !=
                         cfg.ops.end();
  const bool do_relocate =
      std::find(cfg.ops.begin(), cfg.ops.end(), "relocate") != cfg.ops.end();
  const bool do_recolor =
      std::find(cfg.ops.begin(), cfg.ops.end(), "recolor") != cfg.ops.end();

  if (do_cutout) {
    int used = 0;
    for (const auto& id : scene_ids) {
      if (used >= cfg.cutout_scenes) break;
      SceneAnnotation scene = load_scene(in_dir, id);
      // densest class is the cutout target
      std::string cls;
      int best = 0;
      for (const auto& [name, count] : scene.class_counts())
        if (count > best) {
          best = count;
          cls = name;
        }
      if (best < 7) continue;
      const uint64_t seed = hash_combine(cfg.seed, hash_string("cutout-" + id));
      Rng rng(seed);
      std::vector<CutoutVariant> variants;
      try {
        variants = count_varying_cutout(scene, cls, rng);
      } catch (const AugmentSkip&) {
        ++summary.skipped;
        continue;
      }
      for (std::size_t j = 0; j < variants.size(); ++j) {
        const auto& v = variants[j];
        SceneAnnotation vs;
        vs.id = id + "-cv" + std::to_string(j);
        vs.background_class = scene.background_class;
        vs.seed = seed;
        vs.image = v.image;
        for (std::size_t o = 0; o < scene.objects.size(); ++o)
          if (!std::binary_search(v.removed_ids.begin(), v.removed_ids.end(),
                                  static_cast<int>(o)))
            vs.objects.push_back(scene.objects[o]);
        save_scene(vs, out_dir);
        Rng rec_rng(hash_combine(seed, static_cast<uint64_t>(j)));
        InstructionRecord rec = to_instruction(vs, "OC", rec_rng);
        rec.source_id = id;
        rec.edit_type = "cutout";
        rec.edit_seed = seed;
        rec.edit_params = "class=" + cls + ";r=" + format_ratio(v.ratio) +
                          ";m=" + std::to_string(v.removed);
        augmented.push_back(std::move(rec));
      }
      ++summary.cutout_sets;
      ++used;
    }
  }

  if (do_relocate) {
    int used = 0;
    for (const auto& id : scene_ids) {
      if (used >= cfg.relocate_scenes) break;
      SceneAnnotation scene = load_scene(in_dir, id);
      std::vector<int> unique;
      for (std::size_t o = 0; o < scene.objects.size(); ++o) {
        int same = 0;
        for (const auto& other : scene.objects)
          if (other.class_name == scene.objects[o].class_name &&
              other.color_attr == scene.objects[o].color_attr)
            ++same;
        if (same == 1) unique.push_back(static_cast<int>(o));
      }
      if (unique.empty()) continue;
      const uint64_t seed =
          hash_combine(cfg.seed, hash_string("relocate-" + id));
      Rng rng(seed);
      const int obj_id = unique[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(unique.size()) - 1))];
      const std::string old_cell =
          scene.objects[static_cast<std::size_t>(obj_id)].position_phrase;
      std::vector<int> cells;
      for (int c = 0; c < 9; ++c)
        if (kCellNames[static_cast<std::size_t>(c)] != old_cell)
          cells.push_back(c);
      rng.shuffle(cells);
      bool done = false;
      for (int cell : cells) {
        SceneAnnotation moved;
        try {
          moved = relocate_object(scene, obj_id, cell, rng);
        } catch (const AugmentSkip&) {
          continue;
        }
        moved.id = id + "-rl";
        moved.seed = seed;
        save_scene(moved, out_dir);
        const auto& obj = moved.objects[static_cast<std::size_t>(obj_id)];
        const std::string expr = rewrite_expression(
            referring_expression(
                scene.objects[static_cast<std::size_t>(obj_id)]),
            old_cell, obj.position_phrase);
        InstructionRecord rec;
        rec.image_id = moved.id;
        rec.task = "VG";
        rec.instruction = "[refer] Where is <p> " + expr + " </p>?";
        rec.bbox = obj.bbox.to_bbox();
        rec.target = serialize_bbox(*rec.bbox, moved.image.width);
        rec.granularity = "local";
        rec.source_id = id;
        rec.edit_type = "relocate";
        rec.edit_seed = seed;
        rec.edit_params = "from=" + old_cell + ";to=" + obj.position_phrase;
        augmented.push_back(std::move(rec));
        done = true;
        break;
      }
      if (!done) {
        ++summary.skipped;
        continue;
      }
      ++summary.relocations;
      ++used;
    }
  }

  if (do_recolor) {
    int used = 0;
    for (const auto& id : scene_ids) {
      if (used >= cfg.recolor_scenes) break;
      SceneAnnotation scene = load_scene(in_dir, id);
      std::vector<int> unique;
      for (std::size_t o = 0; o < scene.objects.size(); ++o) {
        int same = 0;
        for (const auto& other : scene.objects)
          if (other.class_name == scene.objects[o].class_name &&
              other.color_attr == scene.objects[o].color_attr)
            ++same;
        if (same == 1) unique.push_back(static_cast<int>(o));
      }
      if (unique.empty()) continue;
      const uint64_t seed =
          hash_combine(cfg.seed, hash_string("recolor-" + id));
      Rng rng(seed);
      const int obj_id = unique[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(unique.size()) - 1))];
      const auto& src_obj = scene.objects[static_cast<std::size_t>(obj_id)];
      std::vector<std::string> candidates;
      for (const auto& col : palette()) {
        if (col.name == src_obj.color_attr) continue;
        bool taken = false;
        for (const auto& other : scene.objects)
          if (other.class_name == src_obj.class_name &&
              other.color_attr == col.name)
            taken = true;  // keep the referent unique after the swap
        if (!taken) candidates.push_back(col.name);
      }
      if (candidates.empty()) {
        ++summary.skipped;
        continue;
      }
      const std::string new_color = candidates[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(candidates.size()) - 1))];
      SceneAnnotation recolored = recolor_object(scene, obj_id, new_color);
      recolored.id = id + "-rc";
      recolored.seed = seed;
      save_scene(recolored, out_dir);
      const std::string expr = rewrite_expression(
          referring_expression(src_obj), src_obj.color_attr, new_color);
      const auto& obj = recolored.objects[static_cast<std::size_t>(obj_id)];
      InstructionRecord rec;
      rec.image_id = recolored.id;
      rec.task = "VG";
      rec.instruction = "[refer] Where is <p> " + expr + " </p>?";
      rec.bbox = obj.bbox.to_bbox();
      rec.target = serialize_bbox(*rec.bbox, recolored.image.width);
      rec.granularity = "local";
      rec.source_id = id;
      rec.edit_type = "recolor";
      rec.edit_seed = seed;
      rec.edit_params = "from=" + src_obj.color_attr + ";to=" + new_color;
      augmented.push_back(std::move(rec));
      ++summary.recolors;
      ++used;
    }
  }

  std::vector<InstructionRecord> merged = base_records;
  merged.insert(merged.end(), augmented.begin(), augmented.end());
  write_records(merged, (fs::path(out_dir) / "train.jsonl").string());
  return summary;
}

}  // namespace vlmoe
