#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "bnasr/alphabet.hpp"

namespace bnasr {
namespace {

TEST(Alphabet, BuildsSortedInventoryWithBlankReserved) {
  const std::vector<std::string> corpus{"ab", "ba"};
  const Alphabet a = build_alphabet(corpus);
  EXPECT_EQ(a.symbols(), (std::vector<char32_t>{U'a', U'b'}));
  EXPECT_EQ(a.size(), 2u);
  EXPECT_EQ(a.num_classes(), 3u);
  EXPECT_EQ(a.label_of(U'a'), 1);
}

TEST(Alphabet, SpaceIsAnOrdinarySymbol) {
  const Alphabet a = build_alphabet(std::vector<std::string>{"a a"});
  EXPECT_EQ(a.symbols(), (std::vector<char32_t>{U' ', U'a'}));
  EXPECT_EQ(a.space_label(), 1);
}

TEST(Alphabet, BengaliCodepointsIncludingCombiningMarks) {
  // "আমি ভালো" : vowel signs are separate codepoints.
  const std::vector<std::string> corpus{"আমি ভালো"};
  const Alphabet a = build_alphabet(corpus);
  std::set<char32_t> oracle;
  for (char32_t cp : utf8::decode(corpus[0])) oracle.insert(cp);
  EXPECT_EQ(a.size(), oracle.size());
  EXPECT_EQ(a.decode(a.encode(corpus[0])), corpus[0]);
  EXPECT_EQ(build_alphabet(corpus), a);
}

TEST(Alphabet, EmptyCorpusRejected) {
  EXPECT_THROW(build_alphabet(std::vector<std::string>{}), DataError);
  EXPECT_THROW(build_alphabet(std::vector<std::string>{"", ""}), DataError);
}

TEST(Alphabet, EncodeDecodeExamples) {
  const Alphabet a(std::vector<char32_t>{U'b', U'a'});
  EXPECT_EQ(a.encode("aba"), (Labels{1, 2, 1}));
  EXPECT_EQ(a.decode({}), "");
  EXPECT_EQ(a.decode({0, 1, 0, 2}), "ab");
}

TEST(Alphabet, UnknownCodepointNamedInError) {
  const Alphabet a(std::vector<char32_t>{U'a'});
  try {
    a.encode("ax", "utt7");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("U+0078"), std::string::npos);
    EXPECT_NE(msg.find("utt7"), std::string::npos);
  }
  EXPECT_EQ(a.encode_lenient("axa", "utt7"), (Labels{1, 1}));
}

TEST(Alphabet, RoundTripProperty) {
  const Alphabet a(std::vector<char32_t>{U' ', U'a', U'z', 0x0995, 0x09cd, 0x1F600});
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(0, 30), pick(0, a.size() - 1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::u32string s;
    for (std::size_t n = len(rng); n > 0; --n) s.push_back(a.symbols()[pick(rng)]);
    const std::string text = utf8::encode(s);
    const Labels l = a.encode(text);
    for (int v : l) ASSERT_GE(v, 1);
    ASSERT_EQ(a.decode(l), text);
  }
}

TEST(Alphabet, FileRoundTrip) {
  const Alphabet a(std::vector<char32_t>{U' ', U'a', 0x0995});
  const auto p = std::filesystem::temp_directory_path() / "bnasr_alphabet.txt";
  write_alphabet(p, a);
  const Alphabet b = read_alphabet(p);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), Alphabet(std::vector<char32_t>{U'a'}).hash());
}

TEST(Utf8, RejectsMalformedInput) {
  EXPECT_THROW(utf8::decode("\xc0\x80"), DataError);  // overlong
  EXPECT_THROW(utf8::decode("\xe0\xa4"), DataError);  // truncated
  EXPECT_THROW(utf8::decode("\xff"), DataError);
}

}  // namespace
}  // namespace bnasr
