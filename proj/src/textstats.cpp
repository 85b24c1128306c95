#include "rppd/textstats.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>

#include "rppd/error.hpp"

namespace rppd {

namespace {

constexpr char32_t kInvalid = 0xFFFFFFFF;

// Decodes one codepoint at text[pos], advancing pos. Malformed sequences
// consume one byte and yield kInvalid.
char32_t next_codepoint(std::string_view text, std::size_t& pos) {
  const auto lead = static_cast<unsigned char>(text[pos]);
  std::size_t len = 0;
  char32_t cp = 0;
  if (lead < 0x80) {
    ++pos;
    return lead;
  } else if ((lead & 0xE0) == 0xC0) {
    len = 2;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4;
    cp = lead & 0x07;
  } else {
    ++pos;
    return kInvalid;
  }
  if (pos + len > text.size()) {
    ++pos;
    return kInvalid;
  }
  for (std::size_t i = 1; i < len; ++i) {
    const auto cont = static_cast<unsigned char>(text[pos + i]);
    if ((cont & 0xC0) != 0x80) {
      ++pos;
      return kInvalid;
    }
    cp = (cp << 6) | (cont & 0x3F);
  }
  static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    ++pos;
    return kInvalid;
  }
  pos += len;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool in(char32_t cp, char32_t lo, char32_t hi) { return cp >= lo && cp <= hi; }

bool is_han(char32_t cp) {
  return in(cp, 0x3400, 0x4DBF) || in(cp, 0x4E00, 0x9FFF) || in(cp, 0xF900, 0xFAFF) || in(cp, 0x20000, 0x2FA1F) ||
         in(cp, 0x30000, 0x3134F);
}

// Punctuation, symbol, and space blocks outside ASCII.
bool is_non_ascii_separator(char32_t cp) {
  if (in(cp, 0x80, 0xBF)) return cp != 0xAA && cp != 0xB5 && cp != 0xBA;
  return cp == 0xD7 || cp == 0xF7 || in(cp, 0x2000, 0x2BFF) || in(cp, 0x2E00, 0x2E7F) || in(cp, 0x3000, 0x303F) ||
         in(cp, 0xFE10, 0xFE1F) || in(cp, 0xFE30, 0xFE6F) || in(cp, 0xFF00, 0xFF0F) || in(cp, 0xFF1A, 0xFF20) ||
         in(cp, 0xFF3B, 0xFF40) || in(cp, 0xFF5B, 0xFF65) || in(cp, 0xFFF0, 0xFFFF) || in(cp, 0x1F000, 0x1FAFF);
}

bool is_word_char(char32_t cp) {
  if (cp == kInvalid) return false;
  if (cp < 0x80) return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9');
  return !is_non_ascii_separator(cp);
}

char32_t to_lower(char32_t cp) {
  if (in(cp, 'A', 'Z')) return cp + 0x20;
  if (in(cp, 0xC0, 0xDE) && cp != 0xD7) return cp + 0x20;
  if (in(cp, 0x391, 0x3A9) && cp != 0x3A2) return cp + 0x20;
  if (in(cp, 0x410, 0x42F)) return cp + 0x20;
  if (in(cp, 0xFF21, 0xFF3A)) return cp + 0x20;
  return cp;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, Language language) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };

  for (std::size_t pos = 0; pos < text.size();) {
    const char32_t cp = next_codepoint(text, pos);
    if (language == Language::zh && is_han(cp)) {
      flush();
      append_utf8(current, cp);
      flush();
    } else if (is_word_char(cp)) {
      append_utf8(current, to_lower(cp));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

StopwordSet load_stopwords(std::istream& source) {
  StopwordSet words;
  std::string line;
  while (std::getline(source, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    auto end = line.find_last_not_of(" \t");
    // Lowercase through the en tokenizer so "IgA" matches the token "iga".
    for (auto& token : tokenize(std::string_view(line).substr(start, end - start + 1), Language::en))
      words.insert(std::move(token));
  }
  return words;
}

std::vector<TermCount> term_frequencies(const CorpusManifest& manifest, std::optional<Language> language,
                                        const StopwordSet& stopwords) {
  std::map<std::string, std::size_t> counts;
  for (const auto& item : manifest.items) {
    if (language && item.language != *language) continue;
    for (auto& token : tokenize(item.text, item.language)) {
      if (stopwords.contains(token)) continue;
      ++counts[std::move(token)];
    }
  }
  std::vector<TermCount> out;
  out.reserve(counts.size());
  for (auto& [term, count] : counts) out.push_back({term, count});
  std::stable_sort(out.begin(), out.end(), [](const TermCount& a, const TermCount& b) { return a.count > b.count; });
  return out;
}

void write_term_csv(const std::vector<TermCount>& terms, std::ostream& sink) {
  sink << "term,count\n";
  for (const auto& t : terms) sink << t.term << ',' << t.count << '\n';
  if (!sink) throw Error(Errc::IoFailure, "failed writing term CSV");
}

}  // namespace rppd
