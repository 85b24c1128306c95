#include <gtest/gtest.h>

#include <sstream>

#include "rppd/textstats.hpp"
#include "support/fixtures.hpp"

using namespace rppd;
using rppd::testing::make_item;

using Tokens = std::vector<std::string>;

TEST(Tokenize, English) {
  EXPECT_EQ(tokenize("Renal cell carcinoma", Language::en), (Tokens{"renal", "cell", "carcinoma"}));
  EXPECT_EQ(tokenize("  CD10-positive, (x40)!", Language::en), (Tokens{"cd10", "positive", "x40"}));
  EXPECT_EQ(tokenize("", Language::en), Tokens{});
}

TEST(Tokenize, ChineseSplitsEveryIdeograph) {
  EXPECT_EQ(tokenize("肾小球", Language::zh), (Tokens{"肾", "小", "球"}));
  EXPECT_EQ(tokenize("IgA肾病", Language::zh), (Tokens{"iga", "肾", "病"}));
  EXPECT_EQ(tokenize("系膜细胞，增生。", Language::zh), (Tokens{"系", "膜", "细", "胞", "增", "生"}));
}

TEST(Tokenize, EnglishModeKeepsHanRunsTogether) {
  EXPECT_EQ(tokenize("IgA 肾病", Language::en), (Tokens{"iga", "肾病"}));
}

TEST(Tokenize, LowercasesBeyondAscii) {
  EXPECT_EQ(tokenize("ÉCOLE Ωmega ＡＢ", Language::en), (Tokens{"école", "ωmega", "ａｂ"}));
}

TEST(Tokenize, InvalidUtf8Separates) {
  EXPECT_EQ(tokenize("ab\xff" "cd", Language::en), (Tokens{"ab", "cd"}));
  EXPECT_EQ(tokenize("ab\xe8\x82", Language::zh), (Tokens{"ab"}));
}

TEST(TermFrequencies, Examples) {
  CorpusManifest m;
  m.items = {make_item(1, "a b"), make_item(2, "b c")};
  EXPECT_EQ(term_frequencies(m, std::nullopt), (std::vector<TermCount>{{"b", 2}, {"a", 1}, {"c", 1}}));
  EXPECT_EQ(term_frequencies(CorpusManifest{}, std::nullopt), std::vector<TermCount>{});
  EXPECT_EQ(term_frequencies(m, std::nullopt, {"b"}), (std::vector<TermCount>{{"a", 1}, {"c", 1}}));
}

TEST(TermFrequencies, LanguageFilterUsesThatLanguagesRule) {
  CorpusManifest m;
  m.items = {make_item(1, "肾病 kidney", Language::zh), make_item(2, "kidney stone", Language::en)};
  EXPECT_EQ(term_frequencies(m, Language::zh),
            (std::vector<TermCount>{{"kidney", 1}, {"病", 1}, {"肾", 1}}));
  EXPECT_EQ(term_frequencies(m, Language::en), (std::vector<TermCount>{{"kidney", 1}, {"stone", 1}}));
}

TEST(Stopwords, LoadSkipsCommentsAndLowercases) {
  std::istringstream in("# list\nThe\n\n  of  \n");
  auto s = load_stopwords(in);
  EXPECT_EQ(s, (StopwordSet{"of", "the"}));
}

TEST(TermCsv, Format) {
  std::ostringstream out;
  write_term_csv({{"b", 2}, {"肾", 1}}, out);
  EXPECT_EQ(out.str(), "term,count\nb,2\n肾,1\n");
}
