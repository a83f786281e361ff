#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace edgeai {

enum class Errc {
  FileNotFound,
  ParseError,
  ValidationError,
  MissingRequiredField,
  OutOfBounds,
  TypeMismatch,
  UnknownField,
  ConfigError,
  PayloadTooLarge,
  ColumnCountMismatch,
  NonNumericValue,
  HeaderMismatch,
  SpecMismatch,
  DimensionMismatch,
  NonFiniteInput,
  InsufficientData,
  SingularSystem,
  FormatVersionUnsupported,
  CorruptArtifact,
  BindError,
  UnboundPlaceholder,
  TemplateParseError,
  Timeout,
  HttpError,
  MalformedResponse,
  MissingApiKey,
  StageFailure,
  DeployTimeout,
  TargetUnreachable,
  SchemaHashMismatch,
  SchemaError,
  RowNotFound,
  NonFiniteTarget,
  NoCorrections,
  CommandTimeout,
  CommandRejected,
  NoSamples,
  PathExists,
};

[[nodiscard]] std::string_view to_string(Errc code) noexcept;

// Every failure in the library surfaces as an Error. `subject` names the
// offending field, column, stage, or file when there is one.
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string subject, const std::string& message);
  Error(Errc code, const std::string& message);
  // Wraps a lower-level failure, keeping its code as the cause.
  Error(Errc code, std::string subject, const std::string& message, Errc cause);

  [[nodiscard]] Errc code() const noexcept { return code_; }
  [[nodiscard]] const std::string& subject() const noexcept { return subject_; }
  [[nodiscard]] std::optional<Errc> cause() const noexcept { return cause_; }

 private:
  Errc code_;
  std::string subject_;
  std::optional<Errc> cause_;
};

}  // namespace edgeai
