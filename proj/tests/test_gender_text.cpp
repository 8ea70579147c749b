#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "fairsearch/gender_text.hpp"
#include "support.hpp"

using namespace fairsearch;

namespace {

const GenderLexicon& lex() {
  static const GenderLexicon l = default_lexicon();
  return l;
}

// Random captions mixing lexicon words, filler and punctuation.
std::string random_caption(std::mt19937_64& rng) {
  static const std::vector<std::string> words = {
      "man",    "men",     "woman",   "women", "male",   "female",    "boy",     "girl",   "lady",
      "father", "mother",  "mom",     "son",   "wife",   "husband",   "sister",  "brother", "gentleman",
      "girlfriend", "boyfriend", "daughter", "a", "the", "and", "with", "of", "is", "on", "person",
      "dog",    "surfer",  "riding",  "red",   "table",  "young",     "group",   "people", "child",
      "MAN",    "Woman",   "Female",  "MEN",   "crowd",  "baby",      "bike"};
  static const std::vector<std::string> seps = {" ", " ", " ", ", ", ". ", "'s ", "-", "  ", "! "};
  std::uniform_int_distribution<std::size_t> nw(1, 12), pw(0, words.size() - 1), ps(0, seps.size() - 1);
  std::string s;
  const auto n = nw(rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += seps[ps(rng)];
    s += words[pw(rng)];
  }
  if (rng() % 2) s += ".";
  return s;
}

}  // namespace

TEST_CASE("default lexicon matches the published word lists") {
  const auto& l = lex();
  CHECK(l.feminine.size() == 11);
  CHECK(l.masculine.size() == 10);
  CHECK(l.neutral.size() == 11);
  CHECK(l.feminine.count("girlfriend"));
  CHECK(l.masculine.count("gentleman"));
  CHECK(l.neutral.count("teenage"));
  CHECK_NOTHROW(l.validate());
  for (const auto& w : l.masculine) CHECK(l.replacement.count(w));
  for (const auto& w : l.feminine) CHECK(l.replacement.count(w));
}

TEST_CASE("tokenize lowercases and splits on non-letters") {
  CHECK(tokenize("A man's  RED-helmet, 2 dogs") ==
        std::vector<std::string>{"a", "man", "s", "red", "helmet", "dogs"});
  CHECK(tokenize("").empty());
}

TEST_CASE("caption_gender on the table captions") {
  CHECK(caption_gender("A man with a red helmet on a small moped", lex()) == CaptionGender::HasMasc);
  CHECK(caption_gender("A female surfboarder dressed in black", lex()) == CaptionGender::HasFem);
  CHECK(caption_gender("A group of young men and women sitting", lex()) == CaptionGender::HasBoth);
  CHECK(caption_gender("A dog on a beach", lex()) == CaptionGender::None);
  CHECK(caption_gender("The woman's bag", lex()) == CaptionGender::HasFem);
  CHECK(caption_gender("A mandolin and a womanizer", lex()) == CaptionGender::None);
}

TEST_CASE("image_gender rules") {
  using CG = CaptionGender;
  CHECK(image_gender(std::vector<CG>{CG::HasMasc, CG::None}) == Gender::Male);
  CHECK(image_gender(std::vector<CG>{CG::HasMasc, CG::HasFem}) == Gender::Neutral);
  CHECK(image_gender(std::vector<CG>{CG::None, CG::None}) == Gender::Neutral);
  CHECK(image_gender(std::vector<CG>{CG::HasFem}) == Gender::Female);
  CHECK(image_gender(std::vector<CG>{CG::HasMasc, CG::HasBoth}) == Gender::Neutral);
  CHECK_THROWS_AS(image_gender(std::vector<CG>{}), ValidationError);

  std::vector<Caption> mixed{{"c1", "i", "a man"}, {"c2", "j", "a dog"}};
  CHECK_THROWS_AS(image_gender(mixed, lex()), ValidationError);
}

TEST_CASE("image_gender is invariant to caption order") {
  using CG = CaptionGender;
  std::mt19937_64 rng(5);
  const std::vector<CG> all{CG::None, CG::HasMasc, CG::HasFem, CG::HasBoth};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<CG> gs(1 + rng() % 6);
    for (auto& g : gs) g = all[rng() % 4];
    const auto expected = image_gender(gs);
    std::shuffle(gs.begin(), gs.end(), rng);
    CHECK(image_gender(gs) == expected);
  }
}

TEST_CASE("label_images groups captions by image") {
  std::vector<Caption> caps{{"1", "img1", "A man with a red helmet"},
                            {"2", "img1", "Someone on a moped"},
                            {"3", "img2", "A man and a lady"},
                            {"4", "img3", "A girl with a cake"},
                            {"5", "img4", "A dog"}};
  auto labels = label_images(caps, lex());
  CHECK(labels == LabelMap{{"img1", Gender::Male}, {"img2", Gender::Neutral}, {"img3", Gender::Female},
                           {"img4", Gender::Neutral}});
  CHECK(label_images(std::vector<Caption>{}, lex()).empty());
}

TEST_CASE("neutralize reproduces the published examples") {
  CHECK(neutralize("A man with a red helmet on a small moped on a dirt road.", lex()) ==
        "A person with a red helmet on a small moped on a dirt road.");
  CHECK(neutralize("A little girl is getting ready to blow out a candle on a small dessert.", lex()) ==
        "A little child is getting ready to blow out a candle on a small dessert.");
  CHECK(neutralize("A female surfboarder dressed in black holding a white surfboard.", lex()) ==
        "A surfboarder dressed in black holding a white surfboard.");
  CHECK(neutralize("A group of young men and women sitting at a table.", lex()) ==
        "A group of young people sitting at a table.");
}

TEST_CASE("neutralize edge cases") {
  CHECK(neutralize("Man riding a horse.", lex()) == "Person riding a horse.");
  CHECK(neutralize("Female surfer in the sea.", lex()) == "Surfer in the sea.");
  CHECK(neutralize("A MAN on a bike", lex()) == "A PERSON on a bike");
  CHECK(neutralize("Women and men at a bus stop", lex()) == "People at a bus stop");
  CHECK(neutralize("The surfer is female.", lex()) == "The surfer is person.");
  CHECK(neutralize("female", lex()) == "person");
  CHECK(neutralize("A female with a dog", lex()) == "A person with a dog");
  CHECK(neutralize("A man's hat", lex()) == "A person's hat");
  CHECK(neutralize("mother and son", lex()) == "parent and child");
  CHECK(neutralize("", lex()).empty());
  CHECK(neutralize("No people here", lex()) == "No people here");
}

TEST_CASE("neutralize is complete and idempotent on a fuzz corpus") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const auto c = random_caption(rng);
    const auto once = neutralize(c, lex());
    INFO(c);
    CHECK(caption_gender(once, lex()) == CaptionGender::None);
    CHECK(neutralize(once, lex()) == once);
  }
}

TEST_CASE("lexicon validation catches overlaps and gendered targets") {
  auto l = default_lexicon();
  l.feminine.insert("man");
  CHECK_THROWS_AS(l.validate(), ValidationError);

  l = default_lexicon();
  l.replacement["man"] = "woman";
  CHECK_THROWS_AS(l.validate(), ValidationError);

  l = default_lexicon();
  l.replacement["dog"] = "cat";
  CHECK_THROWS_AS(l.validate(), ValidationError);

  l = default_lexicon();
  l.neutral.insert("boy");
  CHECK_THROWS_AS(l.validate(), ValidationError);
}

TEST_CASE("load_lexicon reads a custom word list") {
  TempDir dir;
  write_text_file(dir.file("lex.json"), R"({
    "masculine": ["king"], "feminine": ["Queen"], "neutral": ["monarch"],
    "replacement": {"king": "monarch", "queen": null}
  })");
  auto l = load_lexicon(dir.file("lex.json"));
  CHECK(l.feminine.count("queen"));
  CHECK(l.replacement.at("queen").empty());
  CHECK(l.phrases.empty());
  CHECK(neutralize("The king and the queen", l) == "The monarch and the person");
  CHECK(neutralize("A queen bee", l) == "A bee");

  write_text_file(dir.file("bad.json"), R"({"masculine": ["king"], "feminine": ["king"], "neutral": [],
                                            "replacement": {}})");
  CHECK_THROWS_AS(load_lexicon(dir.file("bad.json")), ValidationError);
  write_text_file(dir.file("nomap.json"), R"({"masculine": [], "feminine": [], "neutral": []})");
  CHECK_THROWS_AS(load_lexicon(dir.file("nomap.json")), ValidationError);
  write_text_file(dir.file("broken.json"), "{");
  CHECK_THROWS_AS(load_lexicon(dir.file("broken.json")), ValidationError);
}

TEST_CASE("captions round-trip and reject empty text") {
  TempDir dir;
  std::vector<Caption> caps{{"c1", "i1", "A \"quoted\" man"}, {"c2", "i1", "unicode caf\xc3\xa9"}};
  save_captions(caps, dir.file("c.jsonl"));
  auto back = load_captions(dir.file("c.jsonl"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].text == caps[0].text);
  CHECK(back[1].text == caps[1].text);

  write_text_file(dir.file("e.jsonl"), "{\"id\":\"c\",\"image_id\":\"i\",\"text\":\"\"}\n");
  CHECK_THROWS_AS(load_captions(dir.file("e.jsonl")), ValidationError);
}
