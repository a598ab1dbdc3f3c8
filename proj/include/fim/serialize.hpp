// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.

#ifndef FIM_SERIALIZE_HPP
#define FIM_SERIALIZE_HPP

#include <charconv>
#include <complex>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "fim/errors.hpp"

namespace fim {

// Shortest round-trip decimal representation; identical doubles always format
// to identical text, which the bit-exact output contract relies on.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[std::size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

// Little-endian byte packing for 64-bit floats. The storage format is pinned
// to little-endian; on a big-endian host the bytes are swapped explicitly.
inline void append_double_le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

inline double read_double_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string base64_encode(const std::string& bytes) {
  static const char* tbl =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const std::uint32_t v = (std::uint32_t(std::uint8_t(bytes[i])) << 16) |
                            (std::uint32_t(std::uint8_t(bytes[i + 1])) << 8) |
                            std::uint32_t(std::uint8_t(bytes[i + 2]));
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back(tbl[v & 63]);
    i += 3;
  }
  const std::size_t rem = bytes.size() - i;
  if (rem == 1) {
    const std::uint32_t v = std::uint32_t(std::uint8_t(bytes[i])) << 16;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out += "==";
  } else if (rem == 2) {
    const std::uint32_t v = (std::uint32_t(std::uint8_t(bytes[i])) << 16) |
                            (std::uint32_t(std::uint8_t(bytes[i + 1])) << 8);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out += "=";
  }
  return out;
}

inline std::string base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = value_of(c);
    if (v < 0) throw SerializationError("invalid base64 character");
    acc = (acc << 6) | std::uint32_t(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(char((acc >> bits) & 0xff));
    }
  }
  return out;
}

inline std::string pack_complex_le(const std::vector<std::complex<double>>& v) {
  std::string bytes;
  bytes.reserve(v.size() * 16);
  for (const auto& z : v) {
    append_double_le(bytes, z.real());
    append_double_le(bytes, z.imag());
  }
  return bytes;
}

inline std::vector<std::complex<double>> unpack_complex_le(
    const std::string& bytes) {
  if (bytes.size() % 16 != 0)
    throw SerializationError("complex payload length not a multiple of 16");
  std::vector<std::complex<double>> v(bytes.size() / 16);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double re = read_double_le(p + 16 * i);
    const double im = read_double_le(p + 16 * i + 8);
    v[i] = {re, im};
  }
  return v;
}

inline std::string pack_doubles_le(const std::vector<double>& v) {
  std::string bytes;
  bytes.reserve(v.size() * 8);
  for (double d : v) append_double_le(bytes, d);
  return bytes;
}

inline std::vector<double> unpack_doubles_le(const std::string& bytes) {
  if (bytes.size() % 8 != 0)
    throw SerializationError("double payload length not a multiple of 8");
  std::vector<double> v(bytes.size() / 8);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = read_double_le(p + 8 * i);
  return v;
}

// Base64 forms, safe to embed in JSON strings.
inline std::string doubles_to_base64(const std::vector<double>& v) {
  return base64_encode(pack_doubles_le(v));
}

inline std::vector<double> doubles_from_base64(const std::string& text) {
  return unpack_doubles_le(base64_decode(text));
}

inline std::string complex_to_base64(const std::vector<std::complex<double>>& v) {
  return base64_encode(pack_complex_le(v));
}

inline std::vector<std::complex<double>> complex_from_base64(
    const std::string& text) {
  return unpack_complex_le(base64_decode(text));
}

}  // namespace fim

#endif  // FIM_SERIALIZE_HPP
