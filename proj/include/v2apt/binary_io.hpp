// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace v2apt {

/// Little-endian append-only byte buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::span<const std::uint8_t> data);
  void raw(std::string_view data);
  /// u32 length followed by the bytes.
  void str(std::string_view s);

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian reader over a byte span. Every getter takes the name of the
/// field being read and throws FormatError(field) on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8(const char* field);
  std::uint32_t u32(const char* field);
  std::uint64_t u64(const char* field);
  float f32(const char* field);
  double f64(const char* field);
  std::span<const std::uint8_t> raw(std::size_t n, const char* field);
  std::string str(const char* field);

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n, const char* field);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> data);

/// Appends the CRC32 of everything written so far.
void append_crc32(ByteWriter& w);
/// Verifies and strips a trailing CRC32; returns the covered payload.
std::span<const std::uint8_t> check_crc32(std::span<const std::uint8_t> file, std::string_view what);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace v2apt
