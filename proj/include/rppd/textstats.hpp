#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rppd/corpus.hpp"

namespace rppd {

struct TermCount {
  std::string term;
  std::size_t count;

  friend bool operator==(const TermCount&, const TermCount&) = default;
};

// en: lowercase, split on anything that is not a letter or digit; runs of
// Han ideographs count as letters.
// zh: every Han ideograph is its own token; the text between them is
// tokenized with the en rule.
// Invalid UTF-8 bytes act as separators.
std::vector<std::string> tokenize(std::string_view text, Language language);

using StopwordSet = std::set<std::string, std::less<>>;

// One stopword per line; blank lines and '#' comments are skipped. Entries
// are lowercased the same way tokens are.
StopwordSet load_stopwords(std::istream& source);

// Counts tokens over items of the selected language (all items when
// language is empty), minus stopwords. Sorted by count descending, then term
// ascending (bytewise).
std::vector<TermCount> term_frequencies(const CorpusManifest& manifest, std::optional<Language> language,
                                        const StopwordSet& stopwords = {});

// CSV "term,count". Tokens never contain commas, so fields are unquoted.
void write_term_csv(const std::vector<TermCount>& terms, std::ostream& sink);

}  // namespace rppd
