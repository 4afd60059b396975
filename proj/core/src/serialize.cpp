// Copyright 2026 The wxpeft Authors
// SPDX-License-Identifier: Apache-2.0

#include "wxpeft/serialize.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "wxpeft/error.hpp"
#include "wxpeft/rng.hpp"

namespace wxpeft {

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    throw FormatError("truncated data: need " + std::to_string(n) + " bytes, " +
                          std::to_string(data_.size() - pos_) + " left",
                      base_ + pos_);
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string_view ByteReader::bytes(std::size_t n) {
  need(n);
  auto s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

void encode_tensor(ByteWriter& out, const Tensor& t, Dtype dtype) {
  out.bytes("WPFT");
  out.u32(kTensorFormatVersion);
  out.u8(static_cast<std::uint8_t>(dtype));
  out.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) out.u64(d);
  if (dtype == Dtype::f64) {
    for (double v : t.data()) out.f64(v);
  } else {
    for (double v : t.data()) out.f32(static_cast<float>(v));
  }
}

Tensor decode_tensor(ByteReader& in) {
  const std::uint64_t start = in.offset();
  if (in.bytes(4) != "WPFT") throw FormatError("bad tensor magic", start);
  const std::uint64_t version_at = in.offset();
  const std::uint32_t version = in.u32();
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported tensor version " + std::to_string(version), version_at);
  }
  const std::uint64_t dtype_at = in.offset();
  const std::uint8_t dtype = in.u8();
  if (dtype > 1) throw FormatError("unknown dtype code " + std::to_string(dtype), dtype_at);
  const std::uint64_t rank_at = in.offset();
  const std::uint32_t rank = in.u32();
  if (rank == 0 || rank > 16) throw FormatError("invalid rank " + std::to_string(rank), rank_at);
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& d : shape) {
    const std::uint64_t at = in.offset();
    d = in.u64();
    if (d == 0 || d > (std::uint64_t{1} << 40) || numel > (std::uint64_t{1} << 40) / d) {
      throw FormatError("invalid dimension", at);
    }
    numel *= d;
  }
  const std::uint64_t width = dtype == 1 ? 8 : 4;
  if (numel * width > in.remaining()) {
    throw FormatError("truncated payload: need " + std::to_string(numel * width) + " bytes, " +
                          std::to_string(in.remaining()) + " left",
                      in.offset());
  }
  std::vector<double> data(numel);
  if (dtype == 1) {
    for (auto& v : data) v = in.f64();
  } else {
    for (auto& v : data) v = static_cast<double>(in.f32());
  }
  return Tensor(std::move(shape), std::move(data));
}

std::string encode_tensor(const Tensor& t, Dtype dtype) {
  ByteWriter w;
  encode_tensor(w, t, dtype);
  return w.take();
}

Tensor decode_tensor(std::string_view bytes) {
  ByteReader r(bytes);
  Tensor t = decode_tensor(r);
  if (!r.at_end()) throw FormatError("trailing bytes after tensor", r.offset());
  return t;
}

std::string encode_container(const std::vector<NamedTensor>& entries) {
  ByteWriter w;
  w.bytes("WPCK");
  w.u32(kContainerFormatVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name);
    encode_tensor(w, e.tensor);
  }
  return w.take();
}

std::vector<NamedTensor> decode_container(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(4) != "WPCK") throw FormatError("bad container magic", 0);
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kContainerFormatVersion) {
    throw FormatError("unsupported container version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t at = r.offset();
    const std::uint32_t len = r.u32();
    if (len == 0 || len > 4096) throw FormatError("invalid entry name length", at);
    std::string name(r.bytes(len));
    Tensor t = decode_tensor(r);
    out.push_back({std::move(name), std::move(t)});
  }
  if (!r.at_end()) throw FormatError("trailing bytes after container", r.offset());
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("write failed for " + path.string());
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, Dtype dtype) {
  write_file(path, encode_tensor(t, dtype));
}

Tensor load_tensor(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  write_file(path, encode_container(entries));
}

std::vector<NamedTensor> load_container(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_container(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return hex64(fnv1a64(bytes));
}

}  // namespace wxpeft
