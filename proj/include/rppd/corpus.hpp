#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rppd {

// Item identifier: 'P' followed by exactly eight decimal digits.
class ItemId {
 public:
  static constexpr std::size_t kLength = 9;

  // Throws Error{MalformedId}.
  static ItemId parse(std::string_view text);
  static bool is_valid(std::string_view text) noexcept;

  const std::string& value() const noexcept { return value_; }

  friend auto operator<=>(const ItemId&, const ItemId&) = default;
  friend bool operator==(const ItemId&, const ItemId&) = default;

 private:
  explicit ItemId(std::string value) : value_(std::move(value)) {}
  std::string value_;
};

inline ItemId parse_item_id(std::string_view text) { return ItemId::parse(text); }

enum class Language : std::uint8_t { zh, en };
enum class ImageKind : std::uint8_t { histopathology, ihc };
enum class DiseaseClass : std::uint8_t { tumor, other };

std::string_view to_string(Language v) noexcept;
std::string_view to_string(ImageKind v) noexcept;
std::string_view to_string(DiseaseClass v) noexcept;

std::optional<Language> parse_language(std::string_view s) noexcept;
std::optional<ImageKind> parse_image_kind(std::string_view s) noexcept;
std::optional<DiseaseClass> parse_disease_class(std::string_view s) noexcept;

struct KnowledgeItem {
  ItemId id;
  std::string text;
  std::string image_path;
  Language language;
  ImageKind image_kind;
  DiseaseClass disease_class;
  std::string source_book;
  std::optional<std::uint32_t> page;

  friend bool operator==(const KnowledgeItem&, const KnowledgeItem&) = default;
};

// Relative path, nonempty, no ".." segments, not absolute.
bool is_safe_relative_path(std::string_view path) noexcept;

struct CorpusManifest {
  std::string name;
  std::string version;
  std::vector<KnowledgeItem> items;

  // Linear scan; manifests are small enough that callers needing repeated
  // lookups build their own index.
  const KnowledgeItem* find(const ItemId& id) const noexcept;

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

struct ManifestViolation {
  std::size_t line;  // 1-based
  std::string message;
};

// Reads the line-delimited JSON manifest. Blank lines and lines starting
// with '#' are skipped. An optional first record {"manifest": ..., "version":
// ...} names the corpus. Throws Error{ParseError} or Error{DuplicateId} on the
// first violation.
CorpusManifest load_manifest(std::istream& source);
CorpusManifest load_manifest_file(const std::string& path);

// Same grammar as load_manifest but collects every violation instead of
// stopping at the first one.
std::vector<ManifestViolation> validate_manifest(std::istream& source);

// Canonical serialization; load_manifest(write_manifest(m)) == m.
void write_manifest(const CorpusManifest& manifest, std::ostream& sink);

struct CorpusStats {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_image_kind;
  std::map<std::string, std::size_t> by_language;
  std::map<std::string, std::size_t> by_disease;
};

// Facet maps always contain every enum value, zero counts included.
CorpusStats compute_stats(const CorpusManifest& manifest);

}  // namespace rppd
