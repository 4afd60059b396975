// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wxpeft/tensor.hpp"

namespace wxpeft {

// WPFT tensor layout (all little-endian):
//   "WPFT" | u32 version=1 | u8 dtype (0=f32, 1=f64) | u32 rank |
//   rank x u64 dims | row-major payload
// WPCK container layout:
//   "WPCK" | u32 version=1 | u32 count |
//   count x (u32 name length | UTF-8 name | WPFT tensor)

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kContainerFormatVersion = 1;

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Little-endian byte writer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Little-endian byte reader that reports the failing offset on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data, std::uint64_t base_offset = 0)
      : data_(data), base_(base_offset) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);
  std::uint64_t offset() const noexcept { return base_ + pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::string_view data_;
  std::uint64_t base_;
  std::size_t pos_ = 0;
};

void encode_tensor(ByteWriter& out, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor decode_tensor(ByteReader& in);

std::string encode_tensor(const Tensor& t, Dtype dtype = Dtype::f64);
Tensor decode_tensor(std::string_view bytes);

std::string encode_container(const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> decode_container(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor load_tensor(const std::filesystem::path& path);
void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_container(const std::filesystem::path& path);

/// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace wxpeft
