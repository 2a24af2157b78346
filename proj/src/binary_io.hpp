#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "routenas/errors.hpp"

namespace routenas::detail {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

inline void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError("unexpected end of file");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_u32(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw IoError("unexpected end of file");
  return s;
}

inline void write_floats(std::ostream& out, std::span<const float> values) {
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

inline void read_floats(std::istream& in, std::span<float> values) {
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes())))
    throw IoError("unexpected end of file");
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
  char buf[4] = {};
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) throw IoError(what + ": bad magic, expected " + magic);
}

}  // namespace routenas::detail
