#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace liloc {

enum class Errc {
  InvalidArgument,
  ParseError,
  ConfigError,
  IoError,
  EmptyMap,
  EmptyIndex,
  GimbalLock,
  NonMonotonicTime,
  SingularInnovationCovariance,
  InsufficientFixes,
  HeadingUnobservable,
  NonPositiveDt,
  RegionEmpty,
  NoCorrespondences,
  DegenerateConfiguration,
  RelocalizationFailed,
  ConstraintSingular,
  SingularKKT,
  ErrorTooLarge,
  InsufficientWindow,
  ExtrapolationTooFar,
  NonMonotonicEvent,
  NoAssociations,
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ParseError: return "ParseError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
    case Errc::EmptyMap: return "EmptyMap";
    case Errc::EmptyIndex: return "EmptyIndex";
    case Errc::GimbalLock: return "GimbalLock";
    case Errc::NonMonotonicTime: return "NonMonotonicTime";
    case Errc::SingularInnovationCovariance: return "SingularInnovationCovariance";
    case Errc::InsufficientFixes: return "InsufficientFixes";
    case Errc::HeadingUnobservable: return "HeadingUnobservable";
    case Errc::NonPositiveDt: return "NonPositiveDt";
    case Errc::RegionEmpty: return "RegionEmpty";
    case Errc::NoCorrespondences: return "NoCorrespondences";
    case Errc::DegenerateConfiguration: return "DegenerateConfiguration";
    case Errc::RelocalizationFailed: return "RelocalizationFailed";
    case Errc::ConstraintSingular: return "ConstraintSingular";
    case Errc::SingularKKT: return "SingularKKT";
    case Errc::ErrorTooLarge: return "ErrorTooLarge";
    case Errc::InsufficientWindow: return "InsufficientWindow";
    case Errc::ExtrapolationTooFar: return "ExtrapolationTooFar";
    case Errc::NonMonotonicEvent: return "NonMonotonicEvent";
    case Errc::NoAssociations: return "NoAssociations";
  }
  return "Unknown";
}

/// Base exception for every failure raised by the library. `code()` identifies
/// the failure class so callers can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(Errc::ParseError, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace liloc
