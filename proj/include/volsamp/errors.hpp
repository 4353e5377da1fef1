#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace volsamp {

enum class ErrorKind {
  RankDeficient,
  ZeroRow,
  IndexOutOfRange,
  NotSymmetric,
  InvalidSize,
  InvalidArgument,
  TooLarge,
  NonConvergence,
  SketchFailure,
  ParseError,
  EmptyDataset,
  CapExceeded,
  InvalidShape,
  DegenerateLoss,
  ConfigError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::ZeroRow: return "ZeroRow";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::InvalidSize: return "InvalidSize";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::SketchFailure: return "SketchFailure";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::CapExceeded: return "CapExceeded";
    case ErrorKind::InvalidShape: return "InvalidShape";
    case ErrorKind::DegenerateLoss: return "DegenerateLoss";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
/// what() is "<Kind>: <message>".
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

  /// True for errors caused by bad user input (files, shapes, configs)
  /// rather than by the numerical routines themselves.
  bool is_input_error() const noexcept {
    switch (kind_) {
      case ErrorKind::ParseError:
      case ErrorKind::EmptyDataset:
      case ErrorKind::InvalidShape:
      case ErrorKind::ConfigError:
      case ErrorKind::CapExceeded:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace volsamp
