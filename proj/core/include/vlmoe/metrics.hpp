// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vlmoe/scene.hpp"

namespace vlmoe {

std::vector<std::string> split_tokens(const std::string& text);

// Geometric mean of modified n-gram precisions (n = 1..4) with brevity
// penalty; zero counts floored at 1e-9.
double bleu4(const std::vector<std::string>& candidate,
             const std::vector<std::vector<std::string>>& references);

// LCS-based F-score, recall-weighted (beta defaults to 1.2).
double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference, double beta = 1.2);

// Fraction of records whose predicted box reaches IoU >= thresh; missing or
// unparseable predictions score 0.
double grounding_accuracy(const std::vector<std::optional<BBox>>& preds,
                          const std::vector<BBox>& gts, double thresh);

enum class MatchNorm { Text, Integer };

// Case-folded, whitespace-trimmed string equality; Integer mode compares
// parsed integers instead.
double exact_match(const std::vector<std::string>& preds,
                   const std::vector<std::string>& gts, MatchNorm norm);

// Shannon entropy of a distribution (natural log; 0 log 0 = 0).
double entropy(const std::vector<double>& dist);

}  // namespace vlmoe
