#include "rppd/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <istream>
#include <ostream>
#include <unordered_map>

#include <json.hpp>

#include "rppd/error.hpp"

namespace rppd {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 8> kItemKeys = {
    "id", "text", "image_path", "language", "image_kind", "disease_class", "source_book", "page"};

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
  });
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

bool is_comment(std::string_view line) {
  auto pos = line.find_first_not_of(" \t");
  return pos != std::string_view::npos && line[pos] == '#';
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw Error(Errc::ParseError, "line " + std::to_string(line) + ": " + what);
}

const std::string& require_string(const json& record, std::string_view key, std::size_t line) {
  auto it = record.find(key);
  if (it == record.end()) fail(line, "missing field '" + std::string(key) + "'");
  if (!it->is_string()) fail(line, "field '" + std::string(key) + "' must be a string");
  return it->get_ref<const std::string&>();
}

template <typename Enum, typename Parser>
Enum require_enum(const json& record, std::string_view key, std::size_t line, Parser parser) {
  const std::string& raw = require_string(record, key, line);
  auto parsed = parser(raw);
  if (!parsed) fail(line, "unknown " + std::string(key) + " '" + raw + "'");
  return *parsed;
}

bool is_header_record(const json& record) {
  return record.is_object() && record.contains("manifest");
}

void apply_header(const json& record, std::size_t line, CorpusManifest& out) {
  for (const auto& [key, value] : record.items()) {
    if (key != "manifest" && key != "version") fail(line, "unknown header key '" + key + "'");
    if (!value.is_string()) fail(line, "header field '" + key + "' must be a string");
  }
  out.name = record.at("manifest").get<std::string>();
  if (record.contains("version")) out.version = record.at("version").get<std::string>();
}

KnowledgeItem parse_record(const json& record, std::size_t line) {
  if (!record.is_object()) fail(line, "record must be a JSON object");
  for (const auto& [key, value] : record.items()) {
    if (std::find(kItemKeys.begin(), kItemKeys.end(), key) == kItemKeys.end())
      fail(line, "unknown key '" + key + "'");
  }

  const std::string& raw_id = require_string(record, "id", line);
  if (!ItemId::is_valid(raw_id)) fail(line, "malformed id '" + raw_id + "'");

  KnowledgeItem item{
      .id = ItemId::parse(raw_id),
      .text = require_string(record, "text", line),
      .image_path = require_string(record, "image_path", line),
      .language = require_enum<Language>(record, "language", line, parse_language),
      .image_kind = require_enum<ImageKind>(record, "image_kind", line, parse_image_kind),
      .disease_class = require_enum<DiseaseClass>(record, "disease_class", line, parse_disease_class),
      .source_book = require_string(record, "source_book", line),
      .page = std::nullopt,
  };

  if (is_blank(item.text)) fail(line, "text is empty");
  if (!is_safe_relative_path(item.image_path))
    fail(line, "image_path '" + item.image_path + "' must be a nonempty relative path without '..'");

  if (auto it = record.find("page"); it != record.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<std::int64_t>() < 1 ||
        it->get<std::int64_t>() > std::numeric_limits<std::uint32_t>::max())
      fail(line, "page must be a positive integer");
    item.page = static_cast<std::uint32_t>(it->get<std::int64_t>());
  }
  return item;
}

// Drives both load (stop at first error) and validate (collect all).
template <typename OnError>
CorpusManifest read_manifest(std::istream& source, OnError&& on_error) {
  CorpusManifest manifest;
  std::unordered_map<std::string, std::size_t> first_seen;
  std::string raw;
  std::size_t line_no = 0;
  bool seen_record = false;

  while (std::getline(source, raw)) {
    ++line_no;
    std::string_view line = strip_cr(raw);
    if (is_blank(line) || is_comment(line)) continue;
    try {
      json record;
      try {
        record = json::parse(line);
      } catch (const json::parse_error& e) {
        fail(line_no, std::string("invalid JSON: ") + e.what());
      }
      if (is_header_record(record)) {
        if (seen_record) fail(line_no, "manifest header must be the first record");
        apply_header(record, line_no, manifest);
        seen_record = true;
        continue;
      }
      seen_record = true;
      KnowledgeItem item = parse_record(record, line_no);
      auto [it, inserted] = first_seen.emplace(item.id.value(), line_no);
      if (!inserted) {
        throw Error(Errc::DuplicateId, "line " + std::to_string(line_no) + ": duplicate id " +
                                           item.id.value() + " (first seen at line " +
                                           std::to_string(it->second) + ")");
      }
      manifest.items.push_back(std::move(item));
    } catch (const Error& e) {
      on_error(line_no, e);
    }
  }
  if (source.bad()) throw Error(Errc::IoFailure, "failed reading manifest");
  return manifest;
}

}  // namespace

bool ItemId::is_valid(std::string_view text) noexcept {
  if (text.size() != kLength || text[0] != 'P') return false;
  return std::all_of(text.begin() + 1, text.end(), [](char c) { return c >= '0' && c <= '9'; });
}

ItemId ItemId::parse(std::string_view text) {
  if (!is_valid(text)) throw Error(Errc::MalformedId, "malformed item id '" + std::string(text) + "'");
  return ItemId(std::string(text));
}

std::string_view to_string(Language v) noexcept { return v == Language::zh ? "zh" : "en"; }

std::string_view to_string(ImageKind v) noexcept {
  return v == ImageKind::histopathology ? "histopathology" : "ihc";
}

std::string_view to_string(DiseaseClass v) noexcept {
  return v == DiseaseClass::tumor ? "tumor" : "other";
}

std::optional<Language> parse_language(std::string_view s) noexcept {
  if (s == "zh") return Language::zh;
  if (s == "en") return Language::en;
  return std::nullopt;
}

std::optional<ImageKind> parse_image_kind(std::string_view s) noexcept {
  if (s == "histopathology") return ImageKind::histopathology;
  if (s == "ihc") return ImageKind::ihc;
  return std::nullopt;
}

std::optional<DiseaseClass> parse_disease_class(std::string_view s) noexcept {
  if (s == "tumor") return DiseaseClass::tumor;
  if (s == "other") return DiseaseClass::other;
  return std::nullopt;
}

bool is_safe_relative_path(std::string_view path) noexcept {
  if (path.empty() || path.front() == '/' || path.front() == '\\') return false;
  if (path.find('\0') != std::string_view::npos) return false;
  if (path.size() >= 2 && path[1] == ':') return false;
  std::size_t start = 0;
  while (start <= path.size()) {
    std::size_t end = path.find_first_of("/\\", start);
    if (end == std::string_view::npos) end = path.size();
    if (path.substr(start, end - start) == "..") return false;
    start = end + 1;
  }
  return true;
}

const KnowledgeItem* CorpusManifest::find(const ItemId& id) const noexcept {
  auto it = std::find_if(items.begin(), items.end(), [&](const KnowledgeItem& item) { return item.id == id; });
  return it == items.end() ? nullptr : &*it;
}

CorpusManifest load_manifest(std::istream& source) {
  return read_manifest(source, [](std::size_t, const Error& e) { throw e; });
}

CorpusManifest load_manifest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open manifest '" + path + "'");
  return load_manifest(in);
}

std::vector<ManifestViolation> validate_manifest(std::istream& source) {
  std::vector<ManifestViolation> violations;
  read_manifest(source, [&](std::size_t line, const Error& e) {
    violations.push_back({line, std::string(to_string(e.code())) + ": " + e.what()});
  });
  return violations;
}

void write_manifest(const CorpusManifest& manifest, std::ostream& sink) {
  if (!manifest.name.empty() || !manifest.version.empty()) {
    json header = json::object();
    header["manifest"] = manifest.name;
    if (!manifest.version.empty()) header["version"] = manifest.version;
    sink << header.dump() << '\n';
  }
  for (const auto& item : manifest.items) {
    json record = {
        {"id", item.id.value()},
        {"text", item.text},
        {"image_path", item.image_path},
        {"language", to_string(item.language)},
        {"image_kind", to_string(item.image_kind)},
        {"disease_class", to_string(item.disease_class)},
        {"source_book", item.source_book},
    };
    if (item.page) record["page"] = *item.page;
    sink << record.dump() << '\n';
  }
  if (!sink) throw Error(Errc::IoFailure, "failed writing manifest");
}

CorpusStats compute_stats(const CorpusManifest& manifest) {
  CorpusStats stats;
  stats.total = manifest.items.size();
  for (auto v : {ImageKind::histopathology, ImageKind::ihc}) stats.by_image_kind[std::string(to_string(v))] = 0;
  for (auto v : {Language::zh, Language::en}) stats.by_language[std::string(to_string(v))] = 0;
  for (auto v : {DiseaseClass::tumor, DiseaseClass::other}) stats.by_disease[std::string(to_string(v))] = 0;
  for (const auto& item : manifest.items) {
    ++stats.by_image_kind[std::string(to_string(item.image_kind))];
    ++stats.by_language[std::string(to_string(item.language))];
    ++stats.by_disease[std::string(to_string(item.disease_class))];
  }
  return stats;
}

}  // namespace rppd
