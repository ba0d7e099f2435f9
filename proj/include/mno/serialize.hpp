#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mno/tensor.hpp"

namespace mno {

using Json = nlohmann::ordered_json;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for hashing: " + path.string());
  uint64_t h = 0xcbf29ce484222325ULL;
  std::array<char, 65536> buf{};
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(buf.data(), static_cast<size_t>(in.gcount()), h);
  }
  return hex64(h);
}

inline std::string hash_bytes(const std::string& s) { return hex64(fnv1a64(s.data(), s.size())); }

namespace ser_detail {

inline void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("unexpected end of file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

// Payloads are little-endian float64. This build targets little-endian
// hosts; bail out loudly elsewhere.
static_assert(std::endian::native == std::endian::little, "file formats assume little-endian host");

inline void write_f64(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_f64(std::istream& in, std::vector<double>& v) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw IoError("unexpected end of file while reading payload");
}

}  // namespace ser_detail

// magic (8 bytes) + u32 header length + UTF-8 JSON header
inline void write_header(std::ostream& out, const char magic[8], const Json& header) {
  out.write(magic, 8);
  std::string h = header.dump();
  ser_detail::write_u32(out, static_cast<uint32_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
}

inline Json read_header(std::istream& in, const char magic[8], const std::string& what) {
  char m[8];
  in.read(m, 8);
  if (!in || std::memcmp(m, magic, 8) != 0) throw IoError("bad magic: not a " + what + " file");
  uint32_t len = ser_detail::read_u32(in);
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated " + what + " header");
  return Json::parse(h);
}

inline void require_path_writable(const std::filesystem::path& p, bool force) {
  if (std::filesystem::exists(p) && !force)
    throw IoError("refusing to overwrite existing file without --force: " + p.string());
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

}  // namespace mno
