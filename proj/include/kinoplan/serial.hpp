// Copyright 2026 The kinoplan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kinoplan {

/// Binary container errors, one kind per failure mode so callers can tell
/// them apart.
struct IoError : std::runtime_error {
  enum class Kind { OpenFailed, BadMagic, VersionMismatch, Truncated, ChecksumMismatch, BadData };
  Kind kind;
  IoError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts are unsupported");

/// Append-only little-endian byte buffer with a CRC32 trailer.
class ByteWriter {
 public:
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void bytes(const std::vector<std::uint8_t>& v) { raw(v.data(), v.size()); }
  void magic(const char tag[5]) { raw(tag, 4); }

  /// Appends the CRC32 of everything written so far and flushes to disk.
  void finish_to_file(const std::string& path) {
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(buf_.size())));
    u32(crc);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Kind::OpenFailed, "cannot write " + path);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError(IoError::Kind::OpenFailed, "short write to " + path);
  }

  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

/// Cursor over a fully loaded file; validates the CRC32 trailer up front and
/// reports truncation on any over-read.
class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data, const std::string& name)
      : buf_(std::move(data)), name_(name) {
    if (buf_.size() < 8) throw IoError(IoError::Kind::Truncated, name_ + ": file too small");
    const std::size_t body = buf_.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, buf_.data() + body, 4);
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(body)));
    if (stored != crc) {
      throw IoError(IoError::Kind::ChecksumMismatch, name_ + ": checksum mismatch");
    }
    end_ = body;
  }

  static ByteReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::OpenFailed, "cannot open " + path);
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data), path);
  }

  void raw(void* out, std::size_t n) {
    if (pos_ + n > end_) throw IoError(IoError::Kind::Truncated, name_ + ": truncated record");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  float f32() { float v; raw(&v, 4); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    std::vector<std::uint8_t> v(n);
    raw(v.data(), n);
    return v;
  }

  void expect_magic(const char tag[5]) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, tag, 4) != 0) {
      throw IoError(IoError::Kind::BadMagic, name_ + ": bad magic");
    }
  }

  void expect_done() const {
    if (pos_ != end_) throw IoError(IoError::Kind::BadData, name_ + ": trailing bytes");
  }

  std::size_t remaining() const { return end_ - pos_; }

 private:
  std::vector<char> buf_;
  std::string name_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace kinoplan
