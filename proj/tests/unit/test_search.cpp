#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "rppd/error.hpp"
#include "rppd/search.hpp"
#include "rppd/simd/kernels.hpp"
#include "support/fixtures.hpp"

using namespace rppd;
using namespace rppd::testing;

namespace {

struct RefHit {
  std::string id;
  long double score;
};

// Independent oracle: long double cosine over every row, full sort.
std::vector<RefHit> reference_search(const KnowledgeBase& kb, std::span<const float> q, const SearchParams& p) {
  long double qn = 0;
  for (float x : q) qn += static_cast<long double>(x) * x;
  std::vector<RefHit> all;
  for (std::size_t r = 0; r < kb.size(); ++r) {
    long double d = 0, rn = 0;
    for (std::size_t c = 0; c < kb.dim(); ++c) {
      d += static_cast<long double>(kb.row(r)[c]) * q[c];
      rn += static_cast<long double>(kb.row(r)[c]) * kb.row(r)[c];
    }
    if (rn == 0) continue;
    long double s = std::clamp(d / std::sqrt(rn * qn), -1.0L, 1.0L);
    if (s >= p.threshold) all.push_back({kb.ids()[r].value(), s});
  }
  std::sort(all.begin(), all.end(), [](const RefHit& a, const RefHit& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (all.size() > p.top_k) all.resize(p.top_k);
  return all;
}

// Rows at angle acos(score) from e1; ids given in storage order.
KnowledgeBase engineered_kb() {
  auto row = [](double s) { return std::vector<float>{float(s), float(std::sqrt(1 - s * s)), 0.0f}; };
  std::vector<float> m;
  for (double s : {0.9, 0.4, 0.9}) {
    auto r = row(s);
    m.insert(m.end(), r.begin(), r.end());
  }
  return KnowledgeBase({"engineered", Modality::text, 3, PoolingMode::mean}, {make_id(2), make_id(3), make_id(1)},
                       std::move(m));
}

}  // namespace

TEST(Cosine, Examples) {
  std::vector<float> a{2, 1}, x{1, 0}, y{0, 1}, z{1, 1};
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-12);
  EXPECT_EQ(cosine_similarity(x, y), 0.0);
  EXPECT_NEAR(cosine_similarity(x, z), 0.7071068, 1e-6);
}

TEST(Cosine, RejectsZeroAndMismatchedVectors) {
  std::vector<float> zero{0, 0}, x{1, 0}, three{1, 2, 3};
  EXPECT_THROW(cosine_similarity(zero, x), Error);
  EXPECT_THROW(cosine_similarity(x, three), Error);
}

TEST(Cosine, SymmetricBoundedAndScaleInvariant) {
  std::mt19937_64 rng(21);
  std::normal_distribution<float> dist(0, 1);
  std::uniform_real_distribution<float> scale(0.01f, 100.0f);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<float> a(1 + rng() % 64), b(a.size());
    for (auto& v : a) v = dist(rng);
    for (auto& v : b) v = dist(rng);
    const double ab = cosine_similarity(a, b);
    ASSERT_EQ(ab, cosine_similarity(b, a));
    ASSERT_LE(std::abs(ab), 1.0);
    ASSERT_NEAR(cosine_similarity(a, a), 1.0, 1e-6);
    const float s = scale(rng);
    std::vector<float> sa(a);
    for (auto& v : sa) v *= s;
    ASSERT_NEAR(cosine_similarity(sa, b), ab, 1e-6);
  }
}

TEST(Search, TieBrokenByIdAscending) {
  auto r = search(engineered_kb(), std::vector<float>{1, 0, 0}, SearchParams{5, 0.5});
  ASSERT_EQ(r.hits.size(), 2u);
  EXPECT_EQ(r.hits[0].id, make_id(1));
  EXPECT_EQ(r.hits[1].id, make_id(2));
  EXPECT_EQ(r.hits[0].rank, 1u);
  EXPECT_EQ(r.hits[1].rank, 2u);
  EXPECT_NEAR(r.hits[0].score, 0.9, 1e-6);
  EXPECT_EQ(r.hits[0].score, r.hits[1].score);
  EXPECT_EQ(r.hits[0].row, 2u);
  EXPECT_EQ(r.model, "engineered");
  EXPECT_EQ(r.threshold_used, 0.5);
}

TEST(Search, ThresholdAboveEveryScoreIsEmpty) {
  auto r = search(engineered_kb(), std::vector<float>{1, 0, 0}, SearchParams{5, 0.95});
  EXPECT_TRUE(r.hits.empty());
  EXPECT_EQ(r.threshold_used, 0.95);
}

TEST(Search, TopOneOnTie) {
  auto r = search(engineered_kb(), std::vector<float>{1, 0, 0}, SearchParams{1, 0.5});
  ASSERT_EQ(r.hits.size(), 1u);
  EXPECT_EQ(r.hits[0].id, make_id(1));
}

TEST(Search, ThresholdIsInclusive) {
  KnowledgeBase kb({"m", Modality::text, 2, PoolingMode::mean}, {make_id(1)}, {1, 0});
  EXPECT_EQ(search(kb, std::vector<float>{1, 0}, SearchParams{5, 1.0}).hits.size(), 1u);
}

TEST(Search, SkipsZeroRows) {
  KnowledgeBase kb({"m", Modality::text, 2, PoolingMode::mean}, {make_id(1), make_id(2)}, {0, 0, 1, 1});
  auto r = search(kb, std::vector<float>{1, 0}, SearchParams{5, -1.0});
  ASSERT_EQ(r.hits.size(), 1u);
  EXPECT_EQ(r.hits[0].id, make_id(2));
}

TEST(Search, RejectsInvalidInputs) {
  auto kb = engineered_kb();
  EXPECT_THROW(search(kb, std::vector<float>{1, 0, 0}, SearchParams{0, 0.5}), Error);
  EXPECT_THROW(search(kb, std::vector<float>{1, 0, 0}, SearchParams{5, 1.5}), Error);
  EXPECT_THROW(search(kb, std::vector<float>{1, 0, 0}, SearchParams{5, std::nan("")}), Error);
  EXPECT_THROW(search(kb, std::vector<float>{1, 0}, SearchParams{}), Error);
  EXPECT_THROW(search(kb, std::vector<float>{0, 0, 0}, SearchParams{}), Error);
}

TEST(Search, FilterRestrictsRows) {
  auto kb = engineered_kb();
  auto r = search(kb, std::vector<float>{1, 0, 0}, SearchParams{5, -1.0}, [](std::size_t row) { return row != 2; });
  ASSERT_EQ(r.hits.size(), 2u);
  EXPECT_EQ(r.hits[0].id, make_id(2));
  EXPECT_EQ(r.hits[1].id, make_id(3));
}

TEST(Search, MatchesOracleOnBothBackends) {
  std::mt19937_64 rng(77);
  std::normal_distribution<float> dist(0, 1);
  for (auto backend : {simd::Backend::scalar, simd::Backend::avx2, simd::Backend::neon}) {
    if (!simd::is_available(backend)) continue;
    simd::set_active_backend(backend);
    for (int trial = 0; trial < 30; ++trial) {
      auto kb = random_kb(rng, rng() % 200, 1 + rng() % 48);
      std::vector<float> q(kb.dim());
      for (auto& v : q) v = dist(rng);
      SearchParams p{1 + rng() % 10, std::uniform_real_distribution<double>(-0.3, 0.3)(rng)};
      auto got = search(kb, q, p);
      auto want = reference_search(kb, q, p);
      ASSERT_EQ(got.hits.size(), want.size());
      for (std::size_t i = 0; i < want.size(); ++i) {
        ASSERT_EQ(got.hits[i].id.value(), want[i].id);
        ASSERT_NEAR(got.hits[i].score, static_cast<double>(want[i].score), 1e-6);
        ASSERT_EQ(got.hits[i].rank, i + 1);
      }
    }
  }
  simd::reset_active_backend();
}

TEST(Search, ResultsAreSortedCappedAndAboveThreshold) {
  std::mt19937_64 rng(13);
  std::normal_distribution<float> dist(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    auto kb = random_kb(rng, rng() % 100, 1 + rng() % 16);
    std::vector<float> q(kb.dim());
    for (auto& v : q) v = dist(rng);
    SearchParams p{1 + rng() % 8, std::uniform_real_distribution<double>(-1, 1)(rng)};
    auto r = search(kb, q, p);
    ASSERT_LE(r.hits.size(), p.top_k);
    for (std::size_t i = 0; i < r.hits.size(); ++i) {
      ASSERT_GE(r.hits[i].score, p.threshold);
      if (i) ASSERT_GE(r.hits[i - 1].score, r.hits[i].score);
    }
    // Raising the threshold never adds hits.
    SearchParams stricter{p.top_k, std::min(1.0, p.threshold + 0.1)};
    ASSERT_LE(search(kb, q, stricter).hits.size(), r.hits.size());
    // Positive rescaling of the query changes nothing but rounding.
    std::vector<float> scaled(q);
    for (auto& v : scaled) v *= 7.5f;
    auto rs = search(kb, scaled, p);
    ASSERT_EQ(rs.hits.size(), r.hits.size());
    for (std::size_t i = 0; i < r.hits.size(); ++i) ASSERT_NEAR(rs.hits[i].score, r.hits[i].score, 1e-6);
  }
}
