#include "rppd/error.hpp"

namespace rppd {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedId: return "MalformedId";
    case Errc::ParseError: return "ParseError";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ProviderUnreachable: return "ProviderUnreachable";
    case Errc::ProviderError: return "ProviderError";
    case Errc::EmbedFailure: return "EmbedFailure";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::Truncated: return "Truncated";
    case Errc::CorruptIds: return "CorruptIds";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::CorruptValues: return "CorruptValues";
    case Errc::IoFailure: return "IoFailure";
    case Errc::NotFound: return "NotFound";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::UnknownModel: return "UnknownModel";
    case Errc::EmptyQuery: return "EmptyQuery";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace rppd
