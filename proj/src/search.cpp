#include "rppd/search.hpp"

#include <algorithm>
#include <cmath>

#include "rppd/error.hpp"
#include "rppd/simd/kernels.hpp"

namespace rppd {

namespace {

double clamp_unit(double x) { return std::clamp(x, -1.0, 1.0); }

}  // namespace

void SearchParams::validate() const {
  if (top_k < 1) throw Error(Errc::InvalidArgument, "top_k must be at least 1");
  if (!(threshold >= -1.0 && threshold <= 1.0))
    throw Error(Errc::InvalidArgument, "threshold must lie in [-1, 1]");
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw Error(Errc::DimensionMismatch, "cosine of vectors with lengths " + std::to_string(a.size()) + " and " +
                                             std::to_string(b.size()));
  const auto& k = simd::active();
  const double na = k.squared_norm(a.data(), a.size());
  const double nb = k.squared_norm(b.data(), b.size());
  if (na == 0.0 || nb == 0.0) throw Error(Errc::ZeroVector, "cosine similarity of a zero vector");
  return clamp_unit(k.dot(a.data(), b.data(), a.size()) / (std::sqrt(na) * std::sqrt(nb)));
}

SearchResult search(const KnowledgeBase& kb, std::span<const float> query, const SearchParams& params,
                    const RowFilter& filter) {
  params.validate();
  if (query.size() != kb.dim())
    throw Error(Errc::DimensionMismatch, "query has " + std::to_string(query.size()) + " values, knowledge base dim is " +
                                             std::to_string(kb.dim()));
  const auto& kernels = simd::active();
  const double qnorm = std::sqrt(kernels.squared_norm(query.data(), query.size()));
  if (qnorm == 0.0) throw Error(Errc::ZeroVector, "query vector is zero");

  SearchResult result;
  result.model = kb.descriptor().name;
  result.threshold_used = params.threshold;

  const std::size_t n = kb.size();
  std::vector<double> dots(n);
  if (n > 0) kernels.dot_rows(kb.matrix().data(), n, kb.dim(), query.data(), dots.data());

  struct Candidate {
    double score;
    std::size_t row;
  };
  std::vector<Candidate> passing;
  const auto norms = kb.row_norms();
  for (std::size_t r = 0; r < n; ++r) {
    if (norms[r] == 0.0) continue;
    if (filter && !filter(r)) continue;
    const double score = clamp_unit(dots[r] / (qnorm * norms[r]));
    if (score >= params.threshold) passing.push_back({score, r});
  }

  const auto& ids = kb.ids();
  auto better = [&](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return ids[a.row] < ids[b.row];
  };
  const std::size_t keep = std::min(params.top_k, passing.size());
  std::partial_sort(passing.begin(), passing.begin() + static_cast<std::ptrdiff_t>(keep), passing.end(), better);

  result.hits.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i)
    result.hits.push_back({ids[passing[i].row], passing[i].score, i + 1, passing[i].row});
  return result;
}

}  // namespace rppd
