#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rppd/corpus.hpp"
#include "rppd/embedding.hpp"

namespace rppd {

// Immutable (ids x vectors) matrix for one embedder. Row i belongs to ids[i].
class KnowledgeBase {
 public:
  // Validates every invariant: |ids| * dim == |matrix|, distinct ids, finite
  // values, descriptor.dim >= 1. Throws Error{DuplicateId / DimensionMismatch /
  // InvalidArgument}.
  KnowledgeBase(EmbedderDescriptor descriptor, std::vector<ItemId> ids, std::vector<float> matrix);

  const EmbedderDescriptor& descriptor() const noexcept { return descriptor_; }
  const std::vector<ItemId>& ids() const noexcept { return ids_; }
  std::span<const float> matrix() const noexcept { return matrix_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return descriptor_.dim; }

  std::span<const float> row(std::size_t i) const noexcept {
    return std::span<const float>(matrix_).subspan(i * dim(), dim());
  }
  // Euclidean norm of each row, computed once at construction.
  std::span<const double> row_norms() const noexcept { return norms_; }

  // Row index for id, or -1.
  std::ptrdiff_t find(const ItemId& id) const noexcept;

  // Throws Error{NotFound}.
  EmbeddingVector get_vector(const ItemId& id) const;

  friend bool operator==(const KnowledgeBase& a, const KnowledgeBase& b) {
    return a.descriptor_ == b.descriptor_ && a.ids_ == b.ids_ && a.matrix_ == b.matrix_;
  }

 private:
  EmbedderDescriptor descriptor_;
  std::vector<ItemId> ids_;
  std::vector<float> matrix_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> index_;
};

using EmbedFn = std::function<EmbeddingVector(const std::string& text)>;

// Embeds every manifest item in manifest order. Errors name the item:
// DimensionMismatch when a vector's length differs from descriptor.dim,
// EmbedFailure wrapping any other error raised by embed.
KnowledgeBase build_kb(const CorpusManifest& manifest, const EmbedFn& embed, const EmbedderDescriptor& descriptor);

// On-disk layout, little-endian, no padding:
//   "RPPD" | u32 version=1 | u32 dim | u64 count | u8 modality | u8 pooling |
//   u16 name_len | name bytes | count x 9-byte ASCII ids | count*dim float32
inline constexpr std::uint32_t kKbFormatVersion = 1;
inline constexpr std::size_t kKbFixedHeaderSize = 4 + 4 + 4 + 8 + 1 + 1 + 2;

std::size_t kb_file_size(const KnowledgeBase& kb) noexcept;

// Returns bytes written. Throws Error{IoFailure}.
std::size_t save_kb(const KnowledgeBase& kb, std::ostream& sink);
void save_kb_file(const KnowledgeBase& kb, const std::string& path);

// Throws Error{BadMagic / UnsupportedVersion / Truncated / CorruptIds /
// CorruptHeader / CorruptValues}.
KnowledgeBase load_kb(std::istream& source);
KnowledgeBase load_kb_file(const std::string& path);

}  // namespace rppd
