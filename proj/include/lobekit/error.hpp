#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lobekit {

enum class ErrorKind {
  MalformedHeader,
  UnsupportedElementType,
  SizeMismatch,
  IoFailure,
  InvalidLabel,
  RegionOutOfBounds,
  DegenerateHistogram,
  NoLungCandidate,
  ShapeMismatch,
  OddSpatialDim,
  NotScalar,
  DetachedGraph,
  MissingGradient,
  EmptyDataset,
  NonFiniteLoss,
  InvalidConfig,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::UnsupportedElementType: return "UnsupportedElementType";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::RegionOutOfBounds: return "RegionOutOfBounds";
    case ErrorKind::DegenerateHistogram: return "DegenerateHistogram";
    case ErrorKind::NoLungCandidate: return "NoLungCandidate";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::OddSpatialDim: return "OddSpatialDim";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::DetachedGraph: return "DetachedGraph";
    case ErrorKind::MissingGradient: return "MissingGradient";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one ErrorKind so callers
/// (the CLI in particular) can branch on the category without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace lobekit
