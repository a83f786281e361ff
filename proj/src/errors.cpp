#include "edgeai/errors.hpp"

namespace edgeai {

std::string_view to_string(Errc code) noexcept
{
  switch (code) {
    case Errc::FileNotFound: return "FileNotFound";
    case Errc::ParseError: return "ParseError";
    case Errc::ValidationError: return "ValidationError";
    case Errc::MissingRequiredField: return "MissingRequiredField";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::TypeMismatch: return "TypeMismatch";
    case Errc::UnknownField: return "UnknownField";
    case Errc::ConfigError: return "ConfigError";
    case Errc::PayloadTooLarge: return "PayloadTooLarge";
    case Errc::ColumnCountMismatch: return "ColumnCountMismatch";
    case Errc::NonNumericValue: return "NonNumericValue";
    case Errc::HeaderMismatch: return "HeaderMismatch";
    case Errc::SpecMismatch: return "SpecMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::SingularSystem: return "SingularSystem";
    case Errc::FormatVersionUnsupported: return "FormatVersionUnsupported";
    case Errc::CorruptArtifact: return "CorruptArtifact";
    case Errc::BindError: return "BindError";
    case Errc::UnboundPlaceholder: return "UnboundPlaceholder";
    case Errc::TemplateParseError: return "TemplateParseError";
    case Errc::Timeout: return "Timeout";
    case Errc::HttpError: return "HttpError";
    case Errc::MalformedResponse: return "MalformedResponse";
    case Errc::MissingApiKey: return "MissingApiKey";
    case Errc::StageFailure: return "StageFailure";
    case Errc::DeployTimeout: return "DeployTimeout";
    case Errc::TargetUnreachable: return "TargetUnreachable";
    case Errc::SchemaHashMismatch: return "SchemaHashMismatch";
    case Errc::SchemaError: return "SchemaError";
    case Errc::RowNotFound: return "RowNotFound";
    case Errc::NonFiniteTarget: return "NonFiniteTarget";
    case Errc::NoCorrections: return "NoCorrections";
    case Errc::CommandTimeout: return "CommandTimeout";
    case Errc::CommandRejected: return "CommandRejected";
    case Errc::NoSamples: return "NoSamples";
    case Errc::PathExists: return "PathExists";
  }
  return "Unknown";
}

Error::Error(Errc code, std::string subject, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      subject_(std::move(subject))
{
}

Error::Error(Errc code, const std::string& message) : Error(code, {}, message) {}

Error::Error(Errc code, std::string subject, const std::string& message, Errc cause)
    : Error(code, std::move(subject), message)
{
  cause_ = cause;
}

}  // namespace edgeai
