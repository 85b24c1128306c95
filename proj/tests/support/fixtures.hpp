#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "rppd/corpus.hpp"
#include "rppd/embedding.hpp"
#include "rppd/store.hpp"

namespace rppd::testing {

inline ItemId make_id(std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "P%08zu", n);
  return ItemId::parse(buf);
}

inline KnowledgeItem make_item(std::size_t n, std::string text, Language lang = Language::en,
                               ImageKind kind = ImageKind::histopathology,
                               DiseaseClass disease = DiseaseClass::other) {
  return KnowledgeItem{make_id(n), std::move(text), "img/p" + std::to_string(n) + ".jpg", lang, kind, disease,
                       "Renal Pathology Atlas", static_cast<std::uint32_t>(n)};
}

// Six items: four English, two Chinese.
inline CorpusManifest six_item_manifest() {
  CorpusManifest m;
  m.name = "fixture";
  m.version = "1";
  m.items = {
      make_item(1, "Clear cell renal cell carcinoma with nests of clear cytoplasm", Language::en,
                ImageKind::histopathology, DiseaseClass::tumor),
      make_item(2, "Papillary renal cell carcinoma, type 1, foamy macrophages", Language::en,
                ImageKind::histopathology, DiseaseClass::tumor),
      make_item(3, "IgA nephropathy with mesangial hypercellularity", Language::en, ImageKind::histopathology,
                DiseaseClass::other),
      make_item(4, "CD10 immunostain highlights tumor cell membranes", Language::en, ImageKind::ihc,
                DiseaseClass::tumor),
      make_item(5, "IgA肾病，系膜细胞增生", Language::zh, ImageKind::histopathology, DiseaseClass::other),
      make_item(6, "肾小球基底膜增厚，免疫组化染色", Language::zh, ImageKind::ihc, DiseaseClass::other),
  };
  return m;
}

inline std::string manifest_text(const CorpusManifest& m) {
  std::ostringstream out;
  write_manifest(m, out);
  return out.str();
}

inline KnowledgeBase stub_kb(const CorpusManifest& m, std::size_t dim, std::uint64_t seed) {
  EmbedderDescriptor d{stub_model_name(seed), Modality::text, static_cast<std::uint32_t>(dim), PoolingMode::mean};
  return build_kb(m, [&](const std::string& text) { return stub_embed(text, dim, seed); }, d);
}

// Random KB with distinct ids and gaussian rows; varied descriptor fields.
inline KnowledgeBase random_kb(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<ItemId> ids;
  std::size_t next = 1 + rng() % 1000;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back(make_id(next));
    next += 1 + rng() % 50;
  }
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<float> matrix(n * dim);
  for (auto& v : matrix) v = dist(rng);
  EmbedderDescriptor d{"model-" + std::to_string(rng() % 100000), rng() % 2 ? Modality::text : Modality::image,
                       static_cast<std::uint32_t>(dim), rng() % 2 ? PoolingMode::mean : PoolingMode::flatten};
  return KnowledgeBase(d, std::move(ids), std::move(matrix));
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("rppd-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

  std::string write(const std::string& name, const std::string& content) const {
    auto p = path_ / name;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << content;
    return p.string();
  }

 private:
  std::filesystem::path path_;
};

}  // namespace rppd::testing
