// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dvs2sm {

// Thrown on truncated / malformed binary streams and file-level failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace io {

// All on-disk formats in this project are little-endian, written bytewise so
// the host byte order never leaks into a file.

inline void put_u8(std::ostream& os, uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void put_u16(std::ostream& os, uint16_t v) {
  put_u8(os, static_cast<uint8_t>(v & 0xff));
  put_u8(os, static_cast<uint8_t>(v >> 8));
}

inline void put_u32(std::ostream& os, uint32_t v) {
  put_u16(os, static_cast<uint16_t>(v & 0xffff));
  put_u16(os, static_cast<uint16_t>(v >> 16));
}

inline void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v & 0xffffffffu));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void put_i32(std::ostream& os, int32_t v) {
  put_u32(os, static_cast<uint32_t>(v));
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) {
  os.write(magic, 4);
}

inline uint8_t get_u8(std::istream& is) {
  int c = is.get();
  if (c == std::char_traits<char>::eof()) {
    throw IoError("unexpected end of stream");
  }
  return static_cast<uint8_t>(c);
}

inline uint16_t get_u16(std::istream& is) {
  uint16_t lo = get_u8(is);
  uint16_t hi = get_u8(is);
  return static_cast<uint16_t>(lo | (hi << 8));
}

inline uint32_t get_u32(std::istream& is) {
  uint32_t lo = get_u16(is);
  uint32_t hi = get_u16(is);
  return lo | (hi << 16);
}

inline uint64_t get_u64(std::istream& is) {
  uint64_t lo = get_u32(is);
  uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline int32_t get_i32(std::istream& is) {
  return static_cast<int32_t>(get_u32(is));
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  is.read(buf, 4);
  if (is.gcount() != 4 || buf[0] != magic[0] || buf[1] != magic[1] ||
      buf[2] != magic[2] || buf[3] != magic[3]) {
    throw IoError(std::string("bad magic, expected ") + magic);
  }
}

}  // namespace io
}  // namespace dvs2sm
