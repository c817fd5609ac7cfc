#pragma once

// Little-endian primitive encoding shared by the archive and checkpoint
// formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <limits>
#include <type_traits>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bertil/errors.hpp"

namespace bertil::binary {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed after " + std::to_string(written_) + " bytes");
    written_ += n;
  }

  template <class U>
  void uint(U value) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
    bytes(buf, sizeof(U));
  }

  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void f32s(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size() * 4);
    } else {
      for (float v : values) f32(v);
    }
  }

  std::uint64_t written() const noexcept { return written_; }

 private:
  std::ostream& out_;
  std::uint64_t written_ = 0;
};

/// Reads fixed-width fields, reporting the byte offset of any short read.
class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) {
      throw FormatError(what_ + ": truncated at byte offset " + std::to_string(offset_ + got) +
                        " (needed " + std::to_string(n) + " bytes at offset " +
                        std::to_string(offset_) + ")");
    }
    offset_ += n;
  }

  template <class U>
  U uint() {
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U{buf[i]} << (8 * i));
    return v;
  }

  std::uint8_t u8() { return uint<std::uint8_t>(); }
  std::uint16_t u16() { return uint<std::uint16_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(u32()); }

  void f32s(std::span<float> out) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(out.data(), out.size() * 4);
    } else {
      for (float& v : out) v = f32();
    }
  }

  std::string string(std::size_t n) {
    std::string s(n, '\0');
    if (n) bytes(s.data(), n);
    return s;
  }

  /// True when no bytes remain.
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  std::uint64_t offset() const noexcept { return offset_; }
  const std::string& what() const noexcept { return what_; }

 private:
  std::istream& in_;
  std::string what_;
  std::uint64_t offset_ = 0;
};

}  // namespace bertil::binary
