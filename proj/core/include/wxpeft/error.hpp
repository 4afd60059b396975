// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wxpeft {

enum class ErrorKind {
  dimension,
  rank,
  contract,
  config,
  file,
  format,
  domain,
  numeric,
  undefined_value,
};

std::string_view to_string(ErrorKind kind);

/// Base class for every error the library raises. The kind drives the CLI
/// exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error(ErrorKind::dimension, m) {}
};

class RankError : public Error {
 public:
  explicit RankError(const std::string& m) : Error(ErrorKind::rank, m) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error(ErrorKind::contract, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};

class FileError : public Error {
 public:
  explicit FileError(const std::string& m) : Error(ErrorKind::file, m) {}
};

/// Malformed on-disk data. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& m, std::uint64_t offset);
  explicit FormatError(const std::string& m);
  std::uint64_t offset() const noexcept { return offset_; }
  /// Message without the kind prefix or offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::uint64_t offset_ = 0;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& m) : Error(ErrorKind::domain, m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

class UndefinedValueError : public Error {
 public:
  explicit UndefinedValueError(const std::string& m)
      : Error(ErrorKind::undefined_value, m) {}
};

/// CLI exit code: 2 config, 3 file/format, 4 numeric.
int exit_code(ErrorKind kind);

}  // namespace wxpeft
