// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace vlmoe {

// Word-level tokenizer over the closed corpus vocabulary: specials, braces,
// punctuation, digit tokens, 100 coordinate tokens <0>..<99>, and the task
// template words. detokenize(tokenize(s)) == s for every corpus string.
class Tokenizer {
 public:
  static Tokenizer build_default();
  static Tokenizer load(const std::string& path);
  void save(const std::string& path) const;

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  int pad_id() const { return 0; }
  int bos_id() const { return 1; }
  int eos_id() const { return 2; }

  bool has(const std::string& token) const;
  int id_of(const std::string& token) const;  // DataError when unknown
  const std::string& token(int id) const;

  int coord_id(int value) const;  // value in [0, 99]
  bool is_coord(int id) const;
  int coord_value(int id) const;  // -1 when not a coordinate token

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

 private:
  Tokenizer() = default;
  void index();
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int coord_base_ = -1;  // id of "<0>"
};

}  // namespace vlmoe
