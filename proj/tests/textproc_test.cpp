#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "setrank/textproc.hpp"

using namespace setrank;

TEST(Discretize, FixedConstants) {
  FeatureSpec spec;  // 165..190, 100 buckets
  EXPECT_EQ(discretize_feature(165.0, spec), 0);
  EXPECT_EQ(discretize_feature(190.0, spec), 100);
  EXPECT_EQ(discretize_feature(177.5, spec), 50);
  EXPECT_EQ(discretize_feature(200.0, spec), 100);
  EXPECT_EQ(discretize_feature(-3.0, spec), 0);
}

TEST(Discretize, DegenerateRangeIsZero) {
  EXPECT_EQ(discretize_feature(5.0, FeatureSpec{3.0, 3.0, 100}), 0);
}

TEST(Discretize, MonotoneAndBounded) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(150.0, 200.0);
  FeatureSpec spec;
  for (int t = 0; t < 1000; ++t) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    const int fa = discretize_feature(a, spec), fb = discretize_feature(b, spec);
    EXPECT_LE(fa, fb);
    EXPECT_GE(fa, 0);
    EXPECT_LE(fb, 100);
  }
}

TEST(Template, WithAndWithoutFeature) {
  EXPECT_EQ(render_template("what is x", "Doc", 42, "x is y"),
            "Query: what is x Title: Doc Feature: 42 Passage: x is y Relevant:");
  EXPECT_EQ(render_template("q", "", std::nullopt, "p"), "Query: q Title: [none] Passage: p Relevant:");
}

TEST(Vocab, ReservedLayout) {
  Vocab v;
  EXPECT_EQ(v.id("[PAD]"), Vocab::kPad);
  EXPECT_EQ(v.id("[CLS]"), Vocab::kCls);
  EXPECT_EQ(v.id("true"), Vocab::kTrue);
  EXPECT_EQ(v.id("false"), Vocab::kFalse);
  EXPECT_EQ(v.id("relevant:"), Vocab::kRelevant);
  EXPECT_EQ(v.id("0"), Vocab::feature_id(0));
  EXPECT_EQ(v.id("100"), Vocab::feature_id(100));
  EXPECT_EQ(v.id("[none]"), Vocab::kNone);
  EXPECT_EQ(v.size(), static_cast<std::size_t>(Vocab::kReservedCount));
  EXPECT_EQ(v.id("zebra"), Vocab::kUnk);
}

TEST(Vocab, BuildOrdersByFrequencyThenAlphabet) {
  std::vector<std::string> texts = {"b a b", "c a b"};
  auto v = Vocab::build(texts);
  const auto base = static_cast<int>(Vocab::kReservedCount);
  EXPECT_EQ(v.id("b"), base);
  EXPECT_EQ(v.id("a"), base + 1);
  EXPECT_EQ(v.id("c"), base + 2);
}

TEST(Vocab, SaveLoadByteIdentical) {
  std::vector<std::string> texts = {"Alpha beta, gamma: delta [x] Émile"};
  auto v = Vocab::build(texts);
  auto dir = std::filesystem::temp_directory_path() / "setrank_vocab_test";
  std::filesystem::create_directories(dir);
  v.save((dir / "a.txt").string());
  auto w = Vocab::load((dir / "a.txt").string());
  w.save((dir / "b.txt").string());
  std::ifstream a(dir / "a.txt", std::ios::binary), b(dir / "b.txt", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(w.size(), v.size());
  std::filesystem::remove_all(dir);
}

TEST(Tokenize, KeywordsAndPunctuation) {
  Vocab v;
  auto ids = tokenize("Query: Title: [none] Relevant:", v);
  EXPECT_EQ(ids, (std::vector<int>{Vocab::kQuery, Vocab::kTitle, Vocab::kNone, Vocab::kRelevant}));
  auto plain = split_words("Hello, World! a:b", [](const std::string&) { return false; });
  EXPECT_EQ(plain, (std::vector<std::string>{"hello", "world", "a", "b"}));
}

TEST(BuildInput, LayoutAndPadding) {
  std::vector<std::string> texts = {"cats sleep a lot"};
  auto v = Vocab::build(texts);
  auto in = build_input("cats", "", 7, "cats sleep a lot", v, 20);
  ASSERT_EQ(in.ids.size(), 20u);
  EXPECT_EQ(in.ids[0], Vocab::kCls);
  EXPECT_EQ(in.ids[in.length - 1], Vocab::kRelevant);
  EXPECT_EQ(in.ids[in.length], Vocab::kPad);
  // [CLS] query: cats title: [none] feature: 7 passage: cats sleep a lot relevant:
  EXPECT_EQ(in.length, 13u);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(in.mask[i], i < in.length ? 1 : 0);
}

TEST(BuildInput, TruncatesPassageOnly) {
  std::vector<std::string> texts = {"one two three four five six"};
  auto v = Vocab::build(texts);
  auto in = build_input("one", "two", std::nullopt, "one two three four five six", v, 10);
  EXPECT_EQ(in.length, 10u);
  EXPECT_EQ(in.ids[9], Vocab::kRelevant);
  EXPECT_EQ(in.ids[8], v.id("three"));
}

TEST(BuildInput, HeadTooLongThrows) {
  Vocab v;
  EXPECT_THROW(build_input("a b c d e f g h", "t", 1, "p", v, 8), InputTooLong);
}
