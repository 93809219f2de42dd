#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace modcodec {

// Generic failure (bad arguments, encoder misuse).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Decoder-facing failure: malformed, truncated or inconsistent bitstream.
struct CorruptError : Error {
  using Error::Error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }
[[noreturn]] inline void fail_corrupt(const std::string& msg) {
  throw CorruptError(msg);
}

inline void check(bool ok, const char* msg) {
  if (!ok) throw Error(msg);
}
inline void check(bool ok, const std::string& msg) {
  if (!ok) throw Error(msg);
}
inline void check_corrupt(bool ok, const char* msg) {
  if (!ok) throw CorruptError(msg);
}

// Position of the highest set bit; requires v != 0.
inline uint32_t floor_log2(uint64_t v) {
  return 63 - std::countl_zero(v);
}

inline uint32_t ceil_log2(uint64_t v) {
  return v <= 1 ? 0 : floor_log2(v - 1) + 1;
}

template <typename T>
T clamp_val(T v, T lo, T hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace modcodec
