// SPDX-License-Identifier: Apache-2.0
#include "v2apt/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "v2apt/errors.hpp"

namespace v2apt {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

void ByteWriter::u32(std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  bytes_.insert(bytes_.end(), p, p + sizeof v);
}

void ByteWriter::u64(std::uint64_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  bytes_.insert(bytes_.end(), p, p + sizeof v);
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::raw(std::span<const std::uint8_t> data) {
  bytes_.insert(bytes_.end(), data.begin(), data.end());
}

void ByteWriter::raw(std::string_view data) {
  bytes_.insert(bytes_.end(), data.begin(), data.end());
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n, const char* field) {
  if (n > remaining()) {
    throw FormatError(field, std::string("truncated file while reading '") + field + "'");
  }
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t ByteReader::u8(const char* field) { return take(1, field)[0]; }

std::uint32_t ByteReader::u32(const char* field) {
  std::uint32_t v;
  std::memcpy(&v, take(sizeof v, field).data(), sizeof v);
  return v;
}

std::uint64_t ByteReader::u64(const char* field) {
  std::uint64_t v;
  std::memcpy(&v, take(sizeof v, field).data(), sizeof v);
  return v;
}

float ByteReader::f32(const char* field) { return std::bit_cast<float>(u32(field)); }
double ByteReader::f64(const char* field) { return std::bit_cast<double>(u64(field)); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n, const char* field) {
  return take(n, field);
}

std::string ByteReader::str(const char* field) {
  const auto n = u32(field);
  auto s = take(n, field);
  return std::string(s.begin(), s.end());
}

std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < data.size()) {
    const std::size_t n = std::min<std::size_t>(data.size() - off, 1u << 30);
    crc = crc32(crc, data.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void append_crc32(ByteWriter& w) { w.u32(crc32_of(w.bytes())); }

std::span<const std::uint8_t> check_crc32(std::span<const std::uint8_t> file, std::string_view what) {
  if (file.size() < 4) {
    throw FormatError("crc32", std::string(what) + ": truncated file (no CRC32 footer)");
  }
  const auto payload = file.first(file.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, file.data() + payload.size(), 4);
  if (crc32_of(payload) != stored) {
    throw FormatError("crc32", std::string(what) + ": CRC32 mismatch (file corrupt or truncated)");
  }
  return payload;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return bytes;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace v2apt
