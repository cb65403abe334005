#include "relprompt/error.hpp"
#include "relprompt/vocab.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace relprompt;
using testing_support::TempDir;

TEST(SplitWords, LowercasesAndDetachesPunctuation) {
  EXPECT_EQ(split_words("Hello, World!"), (std::vector<std::string>{"hello", ",", "world", "!"}));
  EXPECT_EQ(split_words("  \"quoted\"?! "), (std::vector<std::string>{"\"", "quoted", "\"", "?", "!"}));
  EXPECT_EQ(split_words("don't"), (std::vector<std::string>{"don't"}));
  EXPECT_TRUE(split_words("").empty());
  EXPECT_TRUE(split_words("   ").empty());
}

TEST(Vocabulary, FrequencyOrder) {
  const std::vector<std::string> texts{"a b a"};
  const auto v = Vocabulary::build(texts, 100, 1);
  EXPECT_EQ(v.size(), special::kCount + 2);
  EXPECT_EQ(v.id("a"), special::kCount);
  EXPECT_EQ(v.id("b"), special::kCount + 1);
}

TEST(Vocabulary, MinFrequencyThreshold) {
  const std::vector<std::string> texts{"x y", "x"};
  const auto v = Vocabulary::build(texts, 100, 2);
  EXPECT_EQ(v.id("y"), special::kUnk);
  EXPECT_NE(v.id("x"), special::kUnk);
  EXPECT_EQ(v.encode("x y"), (std::vector<TokenId>{v.id("x"), special::kUnk}));
}

TEST(Vocabulary, TiesBrokenLexicographically) {
  const std::vector<std::string> texts{"pear apple fig"};
  const auto v = Vocabulary::build(texts, 100, 1);
  EXPECT_EQ(v.regular_tokens(), (std::vector<std::string>{"apple", "fig", "pear"}));
}

TEST(Vocabulary, MaxSizeCapsRegularTokens) {
  const std::vector<std::string> texts{"a a a b b c"};
  const auto v = Vocabulary::build(texts, special::kCount + 2, 1);
  EXPECT_EQ(v.regular_tokens(), (std::vector<std::string>{"a", "b"}));
  EXPECT_THROW(Vocabulary::build(texts, 5, 1), Error);
}

TEST(Vocabulary, SpecialLayout) {
  const std::vector<std::string> texts{"a"};
  const auto v = Vocabulary::build(texts, 100, 1);
  EXPECT_EQ(v.token(special::kPad), "[PAD]");
  EXPECT_EQ(v.token(special::kUnk), "[UNK]");
  EXPECT_EQ(v.token(special::kCls), "[CLS]");
  EXPECT_EQ(v.token(special::kSep), "[SEP]");
  EXPECT_EQ(v.token(special::kMask), "[MASK]");
}

TEST(Vocabulary, EncodeEmptyAndRoundTrip) {
  const std::vector<std::string> texts{"fix my loop please"};
  const auto v = Vocabulary::build(texts, 100, 1);
  EXPECT_TRUE(v.encode("").empty());
  EXPECT_EQ(v.decode(v.encode("Fix  my LOOP please")), "fix my loop please");
}

TEST(Vocabulary, OneUnknownWordAtItsPosition) {
  const auto v = Vocabulary::load(TEST_DATA_DIR "/golden_vocab.txt");
  const auto ids = v.encode("w3 unseen w40");
  ASSERT_EQ(ids.size(), 3u);
  // golden_vocab.txt assigns w<i> the id i + 5.
  EXPECT_EQ(ids[0], 8);
  EXPECT_EQ(ids[1], special::kUnk);
  EXPECT_EQ(ids[2], 45);
}

// Expected file written by tests/oracles/vocab_count.py (max_size 150, min_freq 2).
TEST(Vocabulary, MatchesWordCountScript) {
  std::ifstream in(TEST_DATA_DIR "/sentences_1k.txt");
  std::vector<std::string> texts;
  for (std::string line; std::getline(in, line);) texts.push_back(line);
  ASSERT_EQ(texts.size(), 1000u);
  TempDir dir;
  Vocabulary::build(texts, 150, 2).save(dir / "v.txt");
  EXPECT_EQ(testing_support::read_file(dir / "v.txt"),
            testing_support::read_file(TEST_DATA_DIR "/vocab_1k_expected.txt"));
}

TEST(Vocabulary, SaveLoadDigest) {
  TempDir dir;
  const std::vector<std::string> texts{"alpha beta beta gamma"};
  const auto v = Vocabulary::build(texts, 100, 1);
  v.save(dir / "v.txt");
  const auto w = Vocabulary::load(dir / "v.txt");
  EXPECT_EQ(w.regular_tokens(), v.regular_tokens());
  EXPECT_EQ(w.digest(), v.digest());
  EXPECT_EQ(v.digest().size(), 64u);
}

TEST(Vocabulary, RejectsMalformedFiles) {
  TempDir dir;
  testing_support::write_file(dir / "a.txt", "[PAD]\t0\n[UNK]\t2\n");
  EXPECT_THROW(Vocabulary::load(dir / "a.txt"), Error);
  testing_support::write_file(dir / "b.txt", "[UNK]\t0\n");
  EXPECT_THROW(Vocabulary::load(dir / "b.txt"), Error);
  EXPECT_THROW(Vocabulary::load(dir / "missing.txt"), Error);
  EXPECT_THROW(Vocabulary::from_tokens({"a", "a"}), Error);
  EXPECT_THROW(Vocabulary::from_tokens({"[CLS]"}), Error);
}

TEST(Vocabulary, EmptyTextsRejected) {
  const std::vector<std::string> none;
  EXPECT_THROW(Vocabulary::build(none, 100, 1), Error);
}
