#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rppd/corpus.hpp"
#include "rppd/store.hpp"

namespace rppd {

struct SearchParams {
  std::size_t top_k = 5;
  double threshold = 0.5;

  // Throws Error{InvalidArgument} unless top_k >= 1 and threshold in [-1, 1].
  void validate() const;
};

struct SearchHit {
  ItemId id;
  double score;
  std::size_t rank;  // 1-based
  std::size_t row;   // row in the knowledge base
};

struct SearchResult {
  std::vector<SearchHit> hits;
  std::string model;
  double threshold_used = 0.0;
};

// dot(a, b) / (|a| |b|), accumulated in double, clamped to [-1, 1].
// Throws Error{DimensionMismatch / ZeroVector}.
double cosine_similarity(std::span<const float> a, std::span<const float> b);
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_similarity(a.values(), b.values());
}

// Optional row filter; rows for which it returns false are never hits.
using RowFilter = std::function<bool(std::size_t row)>;

// Exhaustive scan. Hits have score >= threshold, sorted by score descending
// then id ascending, truncated to top_k. Rows with zero norm never match.
// Throws Error{DimensionMismatch / ZeroVector / InvalidArgument}.
SearchResult search(const KnowledgeBase& kb, std::span<const float> query, const SearchParams& params,
                    const RowFilter& filter = {});
inline SearchResult search(const KnowledgeBase& kb, const EmbeddingVector& query, const SearchParams& params,
                           const RowFilter& filter = {}) {
  return search(kb, query.values(), params, filter);
}

}  // namespace rppd
