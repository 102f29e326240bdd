#pragma once

#include <stdexcept>
#include <string>

namespace camnet {

// Error taxonomy. The CLI maps categories to exit codes:
// config -> 1, data -> 2, numeric -> 3.
enum class ErrorKind {
  InvalidCoordinate,
  OutOfZone,
  StationMismatch,
  NonMonotonicTime,
  EmptyTrack,
  Io,
  MalformedFile,
  ShapeMismatch,
  NonFiniteValue,
  NotScalar,
  DisconnectedTape,
  NoValidSteps,
  InsufficientModes,
  InsufficientObservation,
  EmptyDataset,
  Config,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidCoordinate: return "InvalidCoordinate";
    case ErrorKind::OutOfZone: return "OutOfZone";
    case ErrorKind::StationMismatch: return "StationMismatch";
    case ErrorKind::NonMonotonicTime: return "NonMonotonicTime";
    case ErrorKind::EmptyTrack: return "EmptyTrack";
    case ErrorKind::Io: return "Io";
    case ErrorKind::MalformedFile: return "MalformedFile";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::DisconnectedTape: return "DisconnectedTape";
    case ErrorKind::NoValidSteps: return "NoValidSteps";
    case ErrorKind::InsufficientModes: return "InsufficientModes";
    case ErrorKind::InsufficientObservation: return "InsufficientObservation";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::Config: return "Config";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  // Exit-code category: 1 config, 2 data, 3 numeric.
  int exit_code() const {
    switch (kind_) {
      case ErrorKind::Config:
        return 1;
      case ErrorKind::NonFiniteValue:
      case ErrorKind::NotScalar:
      case ErrorKind::DisconnectedTape:
        return 3;
      default:
        return 2;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_error(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace camnet
