// SPDX-License-Identifier: Apache-2.0
#include <filesystem>

#include "doctest.h"
#include "vlmoe/tokenizer.hpp"
#include "vlmoe/errors.hpp"

using namespace vlmoe;

TEST_CASE("vocabulary basics") {
  Tokenizer tk = Tokenizer::build_default();
  CHECK(tk.vocab_size() > 100);
  CHECK(tk.token(tk.pad_id()) == "<pad>");
  CHECK(tk.token(tk.bos_id()) == "<bos>");
  CHECK(tk.token(tk.eos_id()) == "<eos>");
  CHECK(tk.coord_value(tk.coord_id(42)) == 42);
  CHECK_FALSE(tk.is_coord(tk.id_of("the")));
  CHECK_THROWS_AS(tk.id_of("zebra"), DataError);
  CHECK_THROWS_AS(tk.coord_id(100), ValueError);
}

TEST_CASE("round trips over template strings") {
  Tokenizer tk = Tokenizer::build_default();
  const std::vector<std::string> samples = {
      "Which scene does this image belong to?",
      "[refer] Where is <p> the red square at the top left </p>?",
      "how many blue disks are there?",
      "count the green crosses.",
      "a farmland scene with 3 red squares and 1 blue disk",
      "are there more red squares than blue disks?",
      "which part of the image contains the purple bar?",
      "is there a cyan disk in the image?",
      "bottom right",
      "{<0><0><99><99>}",
      "{<25><25><50><50>}",
      "12",
      "7",
  };
  for (const auto& s : samples) {
    CAPTURE(s);
    CHECK(tk.detokenize(tk.tokenize(s)) == s);
  }
}

TEST_CASE("bbox text lexes into brace and coordinate tokens") {
  Tokenizer tk = Tokenizer::build_default();
  auto ids = tk.tokenize("{<25><25><50><50>}");
  REQUIRE(ids.size() == 6);
  CHECK(tk.token(ids[0]) == "{");
  CHECK(tk.coord_value(ids[1]) == 25);
  CHECK(tk.coord_value(ids[4]) == 50);
  CHECK(tk.token(ids[5]) == "}");
}

TEST_CASE("unknown words are rejected, not mangled") {
  Tokenizer tk = Tokenizer::build_default();
  CHECK_THROWS_AS(tk.tokenize("the quick zebra"), DataError);
}

TEST_CASE("save and load reproduce the vocabulary") {
  Tokenizer tk = Tokenizer::build_default();
  const std::string path =
      (std::filesystem::temp_directory_path() / "vlmoe_vocab_test.txt")
          .string();
  tk.save(path);
  Tokenizer loaded = Tokenizer::load(path);
  CHECK(loaded.vocab_size() == tk.vocab_size());
  for (int i = 0; i < tk.vocab_size(); ++i)
    CHECK(loaded.token(i) == tk.token(i));
  std::filesystem::remove(path);
}
