#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace regbench {

enum class ErrorKind {
  InvalidGeometry,
  InvalidFrame,
  ShapeError,
  UnknownChannel,
  FormatError,
  CorruptFile,
  DuplicateTimestamp,
  CatalogMismatch,
  EmptySplit,
  InvalidConfig,
  MissingClimatologyKey,
  RegionNotCovered,
  MissingFrame,
  AdapterError,
  NonFiniteForecast,
  ProtocolError,
  DegenerateAnomaly,
  InsufficientMembers,
  DegenerateSkill,
  IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidGeometry: return "InvalidGeometry";
    case ErrorKind::InvalidFrame: return "InvalidFrame";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::UnknownChannel: return "UnknownChannel";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::DuplicateTimestamp: return "DuplicateTimestamp";
    case ErrorKind::CatalogMismatch: return "CatalogMismatch";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::MissingClimatologyKey: return "MissingClimatologyKey";
    case ErrorKind::RegionNotCovered: return "RegionNotCovered";
    case ErrorKind::MissingFrame: return "MissingFrame";
    case ErrorKind::AdapterError: return "AdapterError";
    case ErrorKind::NonFiniteForecast: return "NonFiniteForecast";
    case ErrorKind::ProtocolError: return "ProtocolError";
    case ErrorKind::DegenerateAnomaly: return "DegenerateAnomaly";
    case ErrorKind::InsufficientMembers: return "InsufficientMembers";
    case ErrorKind::DegenerateSkill: return "DegenerateSkill";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `kind()` identifies the contract
/// violation; `step()` is set for failures that happen inside a rollout.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> step = std::nullopt)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), step_(step) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> step_;
};

}  // namespace regbench
