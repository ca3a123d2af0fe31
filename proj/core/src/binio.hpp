// Copyright 2026 The MIPAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Little-endian byte buffers with a CRC-32 trailer, shared by the dataset and
// checkpoint containers.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "mipae/errors.hpp"

namespace mipae::binio {

static_assert(std::endian::native == std::endian::little,
              "container formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void array(const T* data, std::size_t n) {
    bytes(data, n * sizeof(T));
  }

  // Appends CRC-32 of everything written so far and writes the file.
  void save(const std::filesystem::path& path) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, buf_.data(), static_cast<uInt>(buf_.size())));
    put(crc);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()),
              static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> data, std::string name)
      : buf_(std::move(data)), name_(std::move(name)) {}

  static Reader open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return Reader(std::move(data), path.string());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  template <typename T>
  void array(T* dst, std::size_t n) {
    if (n != 0 && SIZE_MAX / n < sizeof(T)) corrupt("array size overflow");
    bytes(dst, n * sizeof(T));
  }
  // Checks that `count` elements of `elem` bytes remain before allocating.
  void expect(std::uint64_t count, std::size_t elem) {
    if (elem != 0 && count > remaining() / elem) corrupt("truncated payload");
  }

  void magic(const char* expected, std::size_t n) {
    std::string got(n, '\0');
    if (remaining() < n) corrupt("file too short for header");
    bytes(got.data(), n);
    if (got != std::string(expected, n)) corrupt("bad magic bytes");
  }

  // Verifies the CRC trailer; call after consuming the payload.
  void finish() {
    if (remaining() != 4) corrupt("unexpected trailing bytes or truncation");
    const auto stored = get<std::uint32_t>();
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, buf_.data(), static_cast<uInt>(buf_.size() - 4)));
    if (stored != crc) corrupt("checksum mismatch");
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  [[noreturn]] void corrupt(const std::string& why) const {
    throw CorruptFileError(name_ + ": corrupt file (" + why + ")");
  }

 private:
  void need(std::size_t n) {
    if (remaining() < n) corrupt("truncated");
  }

  std::vector<std::uint8_t> buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace mipae::binio
