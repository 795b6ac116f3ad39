// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "vlmoe/poisson.hpp"
#include "vlmoe/rng.hpp"
#include "vlmoe/scene.hpp"
#include "vlmoe/synthdata.hpp"

namespace vlmoe {

// Raised when an edit cannot be applied to a particular scene; corpus-level
// augmentation skips the scene and continues.
struct AugmentSkip : std::runtime_error {
  explicit AugmentSkip(const std::string& reason)
      : std::runtime_error(reason) {}
};

struct CutoutVariant {
  Image image;
  std::vector<int> removed_ids;  // indices into the source object list
  int new_count = 0;             // N_new = N_c - m
  double ratio = 0.0;            // sampled r
  int removed = 0;               // m = ceil(r * N_c)
};

// Four cutout variants of one class. Each variant removes m = ceil(r * N_c)
// uniformly chosen objects with an independently sampled r ~ U(0.15, 0.30),
// zero-filling their mask pixels. The variant set is rejection-sampled (100
// rounds) for maximal count diversity: as many distinct counts as the legal
// m range admits, with a count spread of at least ceil(0.1 * N_c).
// Throws AugmentSkip("scene-too-sparse") when N_c < 7 and
// AugmentSkip("constraint-unsatisfiable") when sampling fails.
std::vector<CutoutVariant> count_varying_cutout(const SceneAnnotation& scene,
                                                const std::string& class_name,
                                                Rng& rng);

// Distinct counts and minimum spread achievable for the legal m range of a
// given class count (exposed for the feasibility oracle in tests).
struct CutoutFeasibility {
  std::vector<int> legal_m;
  int max_distinct = 0;
  int required_spread = 0;  // ceil(0.1 * N_c), capped at the legal span
  bool feasible = false;
};
CutoutFeasibility cutout_feasibility(int class_count);

// Moves one object into a target grid cell (index into kCellNames): the
// vacated pixels are Laplace in-filled from their boundary, the object is
// re-composited by Poisson blending, and bbox/mask/position_phrase are
// updated. Candidate placements must keep bbox IoU < 0.1 against every other
// object and may not touch other objects' pixels (50 attempts, then
// AugmentSkip("placement-infeasible")).
SceneAnnotation relocate_object(const SceneAnnotation& scene, int obj_id,
                                int target_cell, Rng& rng);

// Palette transfer restricted to the object mask: integer chroma offsets with
// zero channel sum shift the mask's mean chroma onto the target palette
// entry, leaving per-pixel luminance (channel sum) unchanged.
SceneAnnotation recolor_object(const SceneAnnotation& scene, int obj_id,
                               const std::string& new_color);

// Distance between the mask's mean chroma and a palette entry in the
// opponent-color plane ((R-G)/sqrt(2), (R+G-2B)/sqrt(6)).
double chroma_distance(const SceneAnnotation& scene, int obj_id,
                       const std::string& color_name);

// Single-occurrence term substitution; anything else is an error.
std::string rewrite_expression(const std::string& expr,
                               const std::string& old_term,
                               const std::string& new_term);

// --- corpus-level pipeline -------------------------------------------------

struct AugmentConfig {
  std::vector<std::string> ops = {"cutout", "relocate", "recolor"};
  int cutout_scenes = 400;    // source-scene caps per op
  int relocate_scenes = 400;
  int recolor_scenes = 400;
  uint64_t seed = 0;
};

struct AugmentSummary {
  int cutout_sets = 0;
  int relocations = 0;
  int recolors = 0;
  int skipped = 0;
};

// Reads a corpus directory, writes a self-contained augmented corpus to
// out_dir (base records plus augmented records, images copied).
AugmentSummary augment_corpus(const std::string& in_dir,
                              const AugmentConfig& cfg,
                              const std::string& out_dir);

}  // namespace vlmoe
