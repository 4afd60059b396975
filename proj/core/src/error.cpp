// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/error.hpp"

namespace wxpeft {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::rank: return "rank error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::config: return "configuration error";
    case ErrorKind::file: return "file error";
    case ErrorKind::format: return "format error";
    case ErrorKind::domain: return "domain error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::undefined_value: return "undefined value";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

FormatError::FormatError(const std::string& m, std::uint64_t offset)
    : Error(ErrorKind::format, m + " (at byte " + std::to_string(offset) + ")"),
      detail_(m),
      offset_(offset) {}

FormatError::FormatError(const std::string& m) : Error(ErrorKind::format, m), detail_(m) {}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::dimension:
    case ErrorKind::rank:
    case ErrorKind::contract:
      return 2;
    case ErrorKind::file:
    case ErrorKind::format:
      return 3;
    case ErrorKind::domain:
    case ErrorKind::numeric:
    case ErrorKind::undefined_value:
      return 4;
  }
  return 1;
}

}  // namespace wxpeft
