#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rppd {

enum class Errc {
  MalformedId,
  ParseError,
  DuplicateId,
  ZeroVector,
  DimensionMismatch,
  ProviderUnreachable,
  ProviderError,
  EmbedFailure,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  CorruptIds,
  CorruptHeader,
  CorruptValues,
  IoFailure,
  NotFound,
  DegenerateInput,
  TooFewPoints,
  LengthMismatch,
  InvalidArgument,
  UnknownModel,
  EmptyQuery,
  ConfigError,
};

std::string_view to_string(Errc code) noexcept;

// Every failure raised by the library carries one of the codes above so
// callers (CLI exit codes, HTTP status mapping) can branch without parsing
// messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace rppd
