#include "support.hpp"

#include "bapt/data.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace {

using namespace bapt;
using namespace bapt::testing;

const char* kLine =
    R"({"sentence": "There is a black block.", "label": "true", "identifier": "12-3", "structured_rep": )"
    R"([[{"x_loc": 20, "y_loc": 80, "size": 20, "type": "square", "color": "Black"}], )"
    R"([{"x_loc": 0, "y_loc": 100, "size": 30, "type": "circle", "color": "#0099ff"}, )"
    R"({"x_loc": 50, "y_loc": 50, "size": 10, "type": "triangle", "color": "Yellow"}], []]})";

TEST(Parse, FieldsPassThrough) {
  RawExample ex = parse_structured_json(kLine);
  EXPECT_EQ(ex.identifier, "12-3");
  EXPECT_EQ(ex.sentence, "There is a black block.");
  EXPECT_TRUE(ex.label);
  ASSERT_EQ(ex.boxes[0].size(), 1u);
  EXPECT_EQ(ex.boxes[0][0], (RawObject{20, 80, 20, ObjectShape::square, ObjectColor::black}));
  EXPECT_EQ(ex.boxes[1][0].color, ObjectColor::blue);
  EXPECT_EQ(ex.boxes[1][1].color, ObjectColor::yellow);
  EXPECT_TRUE(ex.boxes[2].empty());
}

TEST(Parse, LabelIsCaseInsensitive) {
  std::string line = kLine;
  line.replace(line.find("\"true\""), 6, "\"FALSE\"");
  EXPECT_FALSE(parse_structured_json(line).label);
}

TEST(Parse, Errors) {
  std::string two_boxes = kLine;
  two_boxes.replace(two_boxes.find(", []]}"), 6, "]}");
  try {
    parse_structured_json(two_boxes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 3 sub-images"), std::string::npos);
    EXPECT_EQ(e.identifier(), "12-3");
  }

  std::string bad_shape = kLine;
  bad_shape.replace(bad_shape.find("\"square\""), 8, "\"hexagon\"");
  EXPECT_THROW(parse_structured_json(bad_shape), ParseError);

  std::string bad_size = kLine;
  bad_size.replace(bad_size.find("\"size\": 20"), 10, "\"size\": 15");
  EXPECT_THROW(parse_structured_json(bad_size), ParseError);

  std::string bad_pos = kLine;
  bad_pos.replace(bad_pos.find("\"x_loc\": 20"), 11, "\"x_loc\": 101");
  EXPECT_THROW(parse_structured_json(bad_pos), ParseError);

  std::string missing = kLine;
  missing.replace(missing.find("\"sentence\""), 10, "\"sentenc\"");
  EXPECT_THROW(parse_structured_json(missing), ParseError);

  EXPECT_THROW(parse_structured_json("{not json"), ParseError);
}

TEST(Tokenize, Rules) {
  EXPECT_EQ(tokenize("There is a black block."),
            (std::vector<std::string>{"there", "is", "a", "black", "block", "."}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("A A a"), (std::vector<std::string>{"a", "a", "a"}));
  EXPECT_EQ(tokenize("  yes,  no "), (std::vector<std::string>{"yes", ",", "no"}));
}

TEST(Vocabulary, MinimumCountBoundary) {
  std::vector<std::vector<std::string>> streams{{"a", "b", "c"}, {"a", "b", "c"}, {"a", "c"}};
  Vocabulary v = Vocabulary::build(streams);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_TRUE(v.contains("c"));
  EXPECT_FALSE(v.contains("b"));
  EXPECT_EQ(v.id("b"), Vocabulary::kUnk);
  EXPECT_EQ(v.id("a"), 2u);
  EXPECT_EQ(v.id("c"), 3u);
  EXPECT_EQ(Vocabulary::build({}).size(), 2u);
}

TEST(Vocabulary, SerializationRoundTrip) {
  Vocabulary v = Vocabulary::build({{"x", "y", "x", "x", "y", "y"}}, 3);
  EXPECT_EQ(Vocabulary::deserialize(v.serialize()), v);
  EXPECT_THROW(Vocabulary::deserialize("x\t0\n"), std::exception);
}

TEST(EncodeObject, Normalization) {
  const ObjectFeature f = encode_object({20, 80, 20, ObjectShape::square, ObjectColor::black});
  const ObjectFeature expect{-0.6, 0.6, 20.0 / 30.0, 1, 0, 0, 1, 0, 0};
  for (std::size_t i = 0; i < kObjectFeatureDim; ++i) EXPECT_NEAR(f[i], expect[i], 1e-15);
  EXPECT_NEAR(f[2], 0.6667, 1e-4);
  const ObjectFeature mid = encode_object({50, 50, 10, ObjectShape::circle, ObjectColor::blue});
  EXPECT_EQ(mid[0], 0.0);
  EXPECT_EQ(mid[1], 0.0);
  EXPECT_EQ(mid[5], 1.0);
  EXPECT_EQ(mid[8], 1.0);
  const ObjectFeature edge = encode_object({0, 100, 30, ObjectShape::triangle, ObjectColor::yellow});
  EXPECT_EQ(edge[0], -1.0);
  EXPECT_EQ(edge[1], 1.0);
  EXPECT_EQ(edge[2], 1.0);
  EXPECT_THROW(encode_object({-1, 0, 10, ObjectShape::square, ObjectColor::black}), ParseError);
  EXPECT_THROW(encode_object({0, 0, 25, ObjectShape::square, ObjectColor::black}), ParseError);
}

TEST(EncodeExample, UnknownTokensAndEmptyBoxes) {
  RawExample raw = parse_structured_json(kLine);
  Vocabulary empty;
  EncodedExample ex = encode_example(raw, empty);
  for (auto id : ex.token_ids) EXPECT_EQ(id, Vocabulary::kUnk);
  EXPECT_EQ(ex.token_ids.size(), 6u);
  EXPECT_TRUE(ex.sub_images[2].empty());
  EXPECT_EQ(ex.label, 1);

  Vocabulary v = Vocabulary::build({tokenize(raw.sentence), tokenize(raw.sentence), tokenize(raw.sentence)});
  EncodedExample known = encode_example(raw, v);
  EXPECT_EQ(v.decode(known.token_ids), tokenize(raw.sentence));
}

TEST(Batching, SizesRoundTripAndDeterminism) {
  Rng rng(1);
  std::vector<EncodedExample> examples;
  for (int i = 0; i < 10; ++i) {
    auto ex = random_example(rng, 7, 1 + i % 4, {std::size_t(i % 3), 2, std::size_t(1 + i % 5)}, i % 2);
    ex.identifier = "ex" + std::to_string(i);
    examples.push_back(ex);
  }
  Rng order(3);
  auto batches = make_batches(examples, 4, false, order);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size, 4u);
  EXPECT_EQ(batches[1].size, 4u);
  EXPECT_EQ(batches[2].size, 2u);
  std::vector<EncodedExample> recovered;
  for (const auto& b : batches) {
    for (auto& ex : b.unbatch()) recovered.push_back(ex);
  }
  EXPECT_EQ(recovered, examples);

  Rng s1(9), s2(9);
  auto a = make_batches(examples, 3, true, s1);
  auto b = make_batches(examples, 3, true, s2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].identifiers, b[i].identifiers);
  EXPECT_THROW(make_batches(examples, 0, false, s1), std::invalid_argument);
}

TEST(Corpus, FixtureLoads) {
  auto train = load_corpus(data_dir() + "/train.json");
  EXPECT_EQ(train.size(), 200u);
  EXPECT_THROW(load_corpus(data_dir() + "/missing.json"), std::runtime_error);
  const auto tmp = std::filesystem::temp_directory_path() / "bapt_blank_lines.json";
  {
    std::ofstream f(tmp);
    f << "\n" << kLine << "\n\n";
  }
  EXPECT_EQ(load_corpus(tmp.string()).size(), 1u);
  std::filesystem::remove(tmp);
}

}  // namespace
