#pragma once

#include <stdexcept>
#include <string>

namespace petfuse {

enum class Errc {
  MalformedHeader,
  Unsupported,
  IoFailure,
  OutOfRange,
  EmptyMask,
  DegenerateBox,
  BadMode,
  OutOfGrid,
  MissingPatch,
  EmptyList,
  DimsMismatch,
  ExternalFailure,
  GridMismatch,
  PartialFailure,
  ConfigError,
  Precondition,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::MalformedHeader: return "MALFORMED_HEADER";
    case Errc::Unsupported: return "UNSUPPORTED";
    case Errc::IoFailure: return "IO_FAILURE";
    case Errc::OutOfRange: return "OUT_OF_RANGE";
    case Errc::EmptyMask: return "EMPTY_MASK";
    case Errc::DegenerateBox: return "DEGENERATE_BOX";
    case Errc::BadMode: return "BAD_MODE";
    case Errc::OutOfGrid: return "OUT_OF_GRID";
    case Errc::MissingPatch: return "MISSING_PATCH";
    case Errc::EmptyList: return "EMPTY_LIST";
    case Errc::DimsMismatch: return "DIMS_MISMATCH";
    case Errc::ExternalFailure: return "EXTERNAL_FAILURE";
    case Errc::GridMismatch: return "GRID_MISMATCH";
    case Errc::PartialFailure: return "PARTIAL_FAILURE";
    case Errc::ConfigError: return "CONFIG_ERROR";
    case Errc::Precondition: return "PRECONDITION";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, Errc code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace petfuse
