// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/tokenizer.hpp"

#include <fstream>
#include <sstream>

#include "vlmoe/errors.hpp"

namespace vlmoe {

namespace {

const char* kWords[] = {
    // shared glue
    "the", "a", "an", "is", "are", "there", "in", "at", "of", "to", "and",
    "with", "for", "this", "image", "scene",
    // scene classification (template as printed, capitalized)
    "Which", "does", "belong",
    // grounding
    "[refer]", "Where", "<p>", "</p>",
    // counting
    "how", "many", "count",
    // captioning
    "describe", "give", "short", "caption",
    // vqa
    "which", "more", "than", "part", "contains", "yes", "no",
    // position grid
    "top", "bottom", "left", "right", "center",
    // backgrounds
    "farmland", "ocean", "desert", "forest", "urban", "mountain", "runway",
    "harbor",
    // object classes, singular and plural
    "square", "squares", "disk", "disks", "cross", "crosses", "bar", "bars",
    // colors
    "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple",
};

bool is_digit_token(const std::string& t) {
  return t.size() == 1 && t[0] >= '0' && t[0] <= '9';
}

}  // namespace

Tokenizer Tokenizer::build_default() {
  Tokenizer tk;
  tk.tokens_ = {"<pad>", "<bos>", "<eos>", "?", ".", "{", "}"};
  for (int d = 0; d <= 9; ++d) tk.tokens_.push_back(std::string(1, '0' + d));
  tk.coord_base_ = static_cast<int>(tk.tokens_.size());
  for (int v = 0; v <= 99; ++v)
    tk.tokens_.push_back("<" + std::to_string(v) + ">");
  for (const char* w : kWords) tk.tokens_.push_back(w);
  tk.index();
  return tk;
}

void Tokenizer::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    ids_[tokens_[i]] = static_cast<int>(i);
  auto it = ids_.find("<0>");
  coord_base_ = it == ids_.end() ? -1 : it->second;
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open vocabulary file: " + path);
  Tokenizer tk;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) tk.tokens_.push_back(line);
  }
  if (tk.tokens_.size() < 4) throw DataError("vocabulary file too small: " + path);
  tk.index();
  return tk;
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write vocabulary file: " + path);
  for (const auto& t : tokens_) os << t << "\n";
}

bool Tokenizer::has(const std::string& token) const {
  return ids_.count(token) > 0;
}

int Tokenizer::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw DataError("unknown token: '" + token + "'");
  return it->second;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || id >= vocab_size())
    throw DataError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

int Tokenizer::coord_id(int value) const {
  if (value < 0 || value > 99)
    throw ValueError("coordinate value out of range: " + std::to_string(value));
  return coord_base_ + value;
}

bool Tokenizer::is_coord(int id) const {
  return coord_base_ >= 0 && id >= coord_base_ && id < coord_base_ + 100;
}

int Tokenizer::coord_value(int id) const {
  return is_coord(id) ? id - coord_base_ : -1;
}

std::vector<int> Tokenizer::tokenize(const std::string& text) const {
  std::vector<int> out;
  std::istringstream iss(text);
  std::string piece;
  while (iss >> piece) {
    auto direct = ids_.find(piece);
    if (direct != ids_.end()) {
      out.push_back(direct->second);
      continue;
    }
    // greedy longest-prefix decomposition ("there?", "{<1><2><3><4>}", "12")
    std::size_t pos = 0;
    while (pos < piece.size()) {
      std::size_t best = 0;
      int best_id = -1;
      for (std::size_t len = piece.size() - pos; len >= 1; --len) {
        auto it = ids_.find(piece.substr(pos, len));
        if (it != ids_.end()) {
          best = len;
          best_id = it->second;
          break;
        }
      }
      if (best_id < 0)
        throw DataError("unknown token while lexing '" + piece + "' at offset " +
                        std::to_string(pos));
      out.push_back(best_id);
      pos += best;
    }
  }
  return out;
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string& t = token(ids[i]);
    if (i > 0) {
      const std::string& prev = token(ids[i - 1]);
      bool glue = t == "?" || t == "." || t == "}";
      if (prev == "{") glue = true;
      if (is_coord(ids[i]) && (prev == "{" || is_coord(ids[i - 1])))
        glue = true;
      if (is_digit_token(t) && is_digit_token(prev)) glue = true;
      if (!glue) out += ' ';
    }
    out += t;
  }
  return out;
}

}  // namespace vlmoe
