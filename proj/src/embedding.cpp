#include "rppd/embedding.hpp"

#include <charconv>
#include <cmath>

#include <httplib.h>
#include <json.hpp>

#include "rppd/error.hpp"
#include "rppd/simd/kernels.hpp"

namespace rppd {

using json = nlohmann::json;

namespace {

bool all_finite(std::span<const float> values) {
  for (float v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct SplitUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = url.find('/', host_start);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

std::string error_message(const std::string& body) {
  try {
    auto parsed = json::parse(body);
    if (parsed.is_object() && parsed.contains("error") && parsed["error"].is_string())
      return parsed["error"].get<std::string>();
  } catch (const json::exception&) {
  }
  return body.substr(0, 200);
}

std::vector<float> read_float_array(const json& array, const char* what) {
  if (!array.is_array()) throw Error(Errc::ProviderError, std::string("provider '") + what + "' is not an array");
  std::vector<float> out;
  out.reserve(array.size());
  for (const auto& v : array) {
    if (!v.is_number()) throw Error(Errc::ProviderError, std::string("provider '") + what + "' holds a non-number");
    out.push_back(v.get<float>());
  }
  return out;
}

EmbeddingVector decode_response(const json& body, PoolingMode pooling) {
  if (!body.is_object()) throw Error(Errc::ProviderError, "provider response is not a JSON object");
  if (body.contains("vector")) {
    std::vector<float> values = read_float_array(body["vector"], "vector");
    if (body.contains("dim") && body["dim"].is_number_integer() &&
        body["dim"].get<std::int64_t>() != static_cast<std::int64_t>(values.size())) {
      throw Error(Errc::DimensionMismatch, "provider reported dim " + body["dim"].dump() + " but sent " +
                                               std::to_string(values.size()) + " values");
    }
    try {
      return EmbeddingVector(std::move(values));
    } catch (const Error& e) {
      throw Error(Errc::ProviderError, std::string("provider vector rejected: ") + e.what());
    }
  }
  if (body.contains("tokens")) {
    const json& tokens = body["tokens"];
    if (!tokens.is_array() || tokens.empty()) throw Error(Errc::ProviderError, "provider 'tokens' must be a nonempty array");
    std::vector<float> values;
    std::size_t cols = 0;
    for (const auto& row : tokens) {
      std::vector<float> r = read_float_array(row, "tokens");
      if (cols == 0) cols = r.size();
      if (r.size() != cols || cols == 0) throw Error(Errc::ProviderError, "provider 'tokens' rows are ragged or empty");
      values.insert(values.end(), r.begin(), r.end());
    }
    try {
      return pool(TokenMatrix(tokens.size(), cols, std::move(values)), pooling);
    } catch (const Error& e) {
      throw Error(Errc::ProviderError, std::string("provider tokens rejected: ") + e.what());
    }
  }
  throw Error(Errc::ProviderError, "provider response has neither 'vector' nor 'tokens'");
}

}  // namespace

TokenMatrix::TokenMatrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows_ == 0 || cols_ == 0) throw Error(Errc::InvalidArgument, "token matrix must have at least one row and column");
  if (values_.size() != rows_ * cols_)
    throw Error(Errc::InvalidArgument, "token matrix holds " + std::to_string(values_.size()) + " values, expected " +
                                           std::to_string(rows_ * cols_));
  if (!all_finite(values_)) throw Error(Errc::InvalidArgument, "token matrix contains non-finite values");
}

EmbeddingVector::EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) throw Error(Errc::InvalidArgument, "embedding vector must be nonempty");
  if (!all_finite(values_)) throw Error(Errc::InvalidArgument, "embedding vector contains non-finite values");
}

std::string_view to_string(PoolingMode mode) noexcept { return mode == PoolingMode::mean ? "mean" : "flatten"; }

std::string_view to_string(Modality modality) noexcept { return modality == Modality::text ? "text" : "image"; }

std::optional<PoolingMode> parse_pooling(std::string_view s) noexcept {
  if (s == "mean") return PoolingMode::mean;
  if (s == "flatten") return PoolingMode::flatten;
  return std::nullopt;
}

std::optional<Modality> parse_modality(std::string_view s) noexcept {
  if (s == "text") return Modality::text;
  if (s == "image") return Modality::image;
  return std::nullopt;
}

EmbeddingVector mean_pool(const TokenMatrix& m) {
  std::vector<double> sums(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) sums[c] += row[c];
  }
  std::vector<float> out(m.cols());
  const double n = static_cast<double>(m.rows());
  for (std::size_t c = 0; c < m.cols(); ++c) out[c] = static_cast<float>(sums[c] / n);
  return EmbeddingVector(std::move(out));
}

EmbeddingVector flatten_pool(const TokenMatrix& m) {
  auto values = m.values();
  return EmbeddingVector(std::vector<float>(values.begin(), values.end()));
}

EmbeddingVector pool(const TokenMatrix& m, PoolingMode mode) {
  return mode == PoolingMode::mean ? mean_pool(m) : flatten_pool(m);
}

EmbeddingVector l2_normalize(const EmbeddingVector& v) {
  const double norm = std::sqrt(simd::squared_norm(v.values()));
  if (norm == 0.0) throw Error(Errc::ZeroVector, "cannot normalize a zero vector");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return EmbeddingVector(std::move(out));
}

EmbeddingVector stub_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw Error(Errc::InvalidArgument, "stub_embed dim must be positive");
  std::uint64_t seed_state = seed;
  std::uint64_t state = fnv1a(text) ^ splitmix64(seed_state);
  std::vector<float> out(dim);
  bool nonzero = false;
  for (auto& v : out) {
    // 24 random bits -> exactly representable float in [-1, 1).
    const std::uint64_t bits = splitmix64(state) >> 40;
    v = static_cast<float>(static_cast<double>(bits) * 0x1.0p-23 - 1.0);
    nonzero |= v != 0.0f;
  }
  if (!nonzero) out[0] = 1.0f;
  return EmbeddingVector(std::move(out));
}

std::optional<std::uint64_t> parse_stub_model(std::string_view model) noexcept {
  constexpr std::string_view prefix = "stub-";
  if (model.size() <= prefix.size() || model.substr(0, prefix.size()) != prefix) return std::nullopt;
  auto digits = model.substr(prefix.size());
  std::uint64_t seed = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), seed);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return seed;
}

std::string stub_model_name(std::uint64_t seed) { return "stub-" + std::to_string(seed); }

EmbeddingVector remote_embed(const ProviderConfig& config, std::string_view model, std::string_view input,
                             PoolingMode pooling) {
  auto [host, prefix] = split_url(config.base_url);
  httplib::Client client(host);
  if (!client.is_valid()) throw Error(Errc::ProviderUnreachable, "invalid provider URL '" + config.base_url + "'");
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  json request = {{"model", model}, {"input", input}, {"pooling", to_string(pooling)}};
  auto result = client.Post(prefix + "/embed", request.dump(), "application/json");
  if (!result) {
    throw Error(Errc::ProviderUnreachable,
                "embedding provider " + config.base_url + " unreachable: " + httplib::to_string(result.error()));
  }
  const int status = result->status;
  if (status == 502 || status == 503 || status == 504) {
    throw Error(Errc::ProviderUnreachable, "embedding provider unavailable (HTTP " + std::to_string(status) +
                                               "): " + error_message(result->body));
  }
  if (status < 200 || status >= 300) {
    throw Error(Errc::ProviderError,
                "embedding provider error (HTTP " + std::to_string(status) + "): " + error_message(result->body));
  }

  json body;
  try {
    body = json::parse(result->body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ProviderError, std::string("embedding provider sent invalid JSON: ") + e.what());
  }
  EmbeddingVector vec = decode_response(body, pooling);
  if (config.expected_dim && vec.size() != *config.expected_dim) {
    throw Error(Errc::DimensionMismatch, "provider returned " + std::to_string(vec.size()) + " values for model '" +
                                             std::string(model) + "', expected " +
                                             std::to_string(*config.expected_dim));
  }
  return vec;
}

}  // namespace rppd
