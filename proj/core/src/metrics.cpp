// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "vlmoe/errors.hpp"

namespace vlmoe {

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream iss(text);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

namespace {

std::map<std::string, int> ngram_counts(const std::vector<std::string>& toks,
                                        int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += toks[i + static_cast<std::size_t>(j)];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

double bleu4(const std::vector<std::string>& candidate,
             const std::vector<std::vector<std::string>>& references) {
  if (candidate.empty()) throw ValueError("bleu4: empty candidate");
  if (references.empty()) throw ValueError("bleu4: empty reference set");
  constexpr double kEps = 1e-9;
  const int clen = static_cast<int>(candidate.size());

  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    auto cand = ngram_counts(candidate, n);
    std::map<std::string, int> best_ref;
    for (const auto& ref : references) {
      for (const auto& [key, cnt] : ngram_counts(ref, n))
        best_ref[key] = std::max(best_ref[key], cnt);
    }
    double clipped = 0.0, total = 0.0;
    for (const auto& [key, cnt] : cand) {
      total += cnt;
      auto it = best_ref.find(key);
      if (it != best_ref.end()) clipped += std::min(cnt, it->second);
    }
    const double p = total > 0.0 ? std::max(clipped, kEps) / total : kEps;
    log_sum += std::log(p);
  }

  // closest reference length, ties to the shorter
  int rlen = static_cast<int>(references[0].size());
  for (const auto& ref : references) {
    const int rl = static_cast<int>(ref.size());
    if (std::abs(rl - clen) < std::abs(rlen - clen) ||
        (std::abs(rl - clen) == std::abs(rlen - clen) && rl < rlen))
      rlen = rl;
  }
  const double bp =
      clen >= rlen ? 1.0
                   : std::exp(1.0 - static_cast<double>(rlen) / clen);
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference, double beta) {
  if (candidate.empty() || reference.empty())
    throw ValueError("rouge_l: empty input");
  const std::size_t n = candidate.size(), m = reference.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1]
                   ? prev[j - 1] + 1
                   : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[m]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(n);
  const double r = lcs / static_cast<double>(m);
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double grounding_accuracy(const std::vector<std::optional<BBox>>& preds,
                          const std::vector<BBox>& gts, double thresh) {
  if (preds.size() != gts.size())
    throw ValueError("grounding_accuracy: prediction/ground-truth length mismatch");
  if (preds.empty()) throw ValueError("grounding_accuracy: empty input");
  int hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] && iou(*preds[i], gts[i]) >= thresh) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

namespace {

std::string normalize_text(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out = s.substr(b, e - b);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::optional<long> parse_integer(const std::string& s) {
  const std::string t = normalize_text(s);
  if (t.empty()) return std::nullopt;
  std::size_t i = t[0] == '-' ? 1 : 0;
  if (i == t.size()) return std::nullopt;
  long v = 0;
  for (; i < t.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(t[i]))) return std::nullopt;
    v = v * 10 + (t[i] - '0');
  }
  return t[0] == '-' ? -v : v;
}

}  // namespace

double exact_match(const std::vector<std::string>& preds,
                   const std::vector<std::string>& gts, MatchNorm norm) {
  if (preds.size() != gts.size())
    throw ValueError("exact_match: prediction/ground-truth length mismatch");
  if (preds.empty()) throw ValueError("exact_match: empty input");
  int hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (norm == MatchNorm::Integer) {
      auto a = parse_integer(preds[i]);
      auto b = parse_integer(gts[i]);
      if (a && b && *a == *b) ++hits;
    } else {
      if (normalize_text(preds[i]) == normalize_text(gts[i])) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double entropy(const std::vector<double>& dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace vlmoe
