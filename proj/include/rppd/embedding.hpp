#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rppd {

// Per-token hidden states: rows are tokens, columns hidden dimensions.
class TokenMatrix {
 public:
  // Throws Error{InvalidArgument} on empty shape, size mismatch, or
  // non-finite values.
  TokenMatrix(std::size_t rows, std::size_t cols, std::vector<float> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row(std::size_t r) const noexcept {
    return std::span<const float>(values_).subspan(r * cols_, cols_);
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<float> values_;
};

class EmbeddingVector {
 public:
  // Throws Error{InvalidArgument} if empty or any value is non-finite.
  explicit EmbeddingVector(std::vector<float> values);

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  float operator[](std::size_t i) const noexcept { return values_[i]; }
  std::vector<float> release() && noexcept { return std::move(values_); }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<float> values_;
};

enum class PoolingMode : std::uint8_t { mean = 0, flatten = 1 };
enum class Modality : std::uint8_t { text = 0, image = 1 };

std::string_view to_string(PoolingMode mode) noexcept;
std::string_view to_string(Modality modality) noexcept;
std::optional<PoolingMode> parse_pooling(std::string_view s) noexcept;
std::optional<Modality> parse_modality(std::string_view s) noexcept;

struct EmbedderDescriptor {
  std::string name;
  Modality modality = Modality::text;
  std::uint32_t dim = 0;
  PoolingMode pooling = PoolingMode::mean;

  friend bool operator==(const EmbedderDescriptor&, const EmbedderDescriptor&) = default;
};

// Column means over the token axis, accumulated in double.
EmbeddingVector mean_pool(const TokenMatrix& m);

// Row-major concatenation; length rows * cols.
EmbeddingVector flatten_pool(const TokenMatrix& m);

EmbeddingVector pool(const TokenMatrix& m, PoolingMode mode);

// Throws Error{ZeroVector}.
EmbeddingVector l2_normalize(const EmbeddingVector& v);

// Deterministic pseudo-embedding for offline use: a seeded 64-bit hash of the
// text bytes drives a splitmix64 stream mapped to [-1, 1]. Never all-zero.
EmbeddingVector stub_embed(std::string_view text, std::size_t dim, std::uint64_t seed);

// "stub-<seed>" -> seed.
std::optional<std::uint64_t> parse_stub_model(std::string_view model) noexcept;
std::string stub_model_name(std::uint64_t seed);

struct ProviderConfig {
  // e.g. "http://127.0.0.1:8090"
  std::string base_url;
  std::chrono::milliseconds timeout{30000};
  // When set, responses of any other length raise DimensionMismatch.
  std::optional<std::size_t> expected_dim;
};

// POST {base_url}/embed with {model, input, pooling}. The provider answers
// either {model, dim, vector} or {model, tokens: [[...]]}; in the second case
// pooling is applied here.
//
// Errors: ProviderUnreachable (connection failure or 502/503/504),
// ProviderError (other non-2xx, message propagated; malformed body),
// DimensionMismatch.
EmbeddingVector remote_embed(const ProviderConfig& config, std::string_view model, std::string_view input,
                             PoolingMode pooling);

}  // namespace rppd
