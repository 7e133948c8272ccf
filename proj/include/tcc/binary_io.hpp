#pragma once

// Little-endian primitive encoding shared by the sequence and checkpoint files.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tcc/error.hpp"

namespace tcc::io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b, 8);
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_f64s(std::ostream& os, std::span<const double> values) {
  for (double v : values) write_f64(os, v);
}

/// Reads fixed-size fields and reports short reads as TruncatedError.
class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  void bytes(char* out, std::size_t n) {
    is_.read(out, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw TruncatedError(what_);
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::vector<double> f64s(std::size_t n) {
    std::vector<double> out(n);
    for (double& v : out) v = f64();
    return out;
  }

  void magic(const char (&expected)[5]) {
    char got[4];
    bytes(got, 4);
    for (int i = 0; i < 4; ++i) {
      if (got[i] != expected[i]) throw FormatError(what_ + ": bad magic, expected " + expected);
    }
  }

  /// True when no bytes remain.
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace tcc::io
