#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "modcodec/common.h"

namespace modcodec {

// LSB-first bit reader. The first bit of a byte is its least significant bit.
class BitReader {
 public:
  BitReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
  explicit BitReader(const std::vector<uint8_t>& bytes)
      : BitReader(bytes.data(), bytes.size()) {}

  // n <= 32. Reading past the end is a stream error.
  uint32_t read(size_t n) {
    check(n <= 32, "BitReader: single read limited to 32 bits");
    check_corrupt(pos_ + n <= size_ * 8, "bitstream truncated");
    uint64_t v = 0;
    size_t got = 0;
    while (got < n) {
      size_t byte = pos_ >> 3, bit = pos_ & 7;
      size_t take = 8 - bit;
      if (take > n - got) take = n - got;
      v |= uint64_t((data_[byte] >> bit) & ((1u << take) - 1)) << got;
      got += take;
      pos_ += take;
    }
    return uint32_t(v);
  }

  bool read_bit() { return read(1) != 0; }

  // Consumes padding up to the next byte boundary; padding must be zero.
  void align_to_byte() {
    size_t rem = (8 - (pos_ & 7)) & 7;
    if (rem) check_corrupt(read(rem) == 0, "nonzero padding bits");
  }

  size_t bits_read() const { return pos_; }
  size_t bits_total() const { return size_ * 8; }
  size_t bits_remaining() const { return size_ * 8 - pos_; }

 private:
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

// LSB-first bit writer into a growable byte buffer.
class BitWriter {
 public:
  void write(size_t n, uint64_t v) {
    check(n <= 32, "BitWriter: single write limited to 32 bits");
    check(n == 32 || v < (uint64_t(1) << n), "BitWriter: value does not fit");
    while (n > 0) {
      if ((pos_ & 7) == 0) bytes_.push_back(0);
      size_t bit = pos_ & 7;
      size_t put = 8 - bit;
      if (put > n) put = n;
      bytes_.back() |= uint8_t((v & ((1u << put) - 1)) << bit);
      v >>= put;
      n -= put;
      pos_ += put;
    }
  }

  void write_bit(bool b) { write(1, b ? 1 : 0); }

  void align_to_byte() {
    size_t rem = (8 - (pos_ & 7)) & 7;
    if (rem) write(rem, 0);
  }

  size_t bits_written() const { return pos_; }

  // Appends whole bytes; requires byte alignment.
  void append_bytes(const std::vector<uint8_t>& b) {
    check((pos_ & 7) == 0, "append_bytes requires byte alignment");
    bytes_.insert(bytes_.end(), b.begin(), b.end());
    pos_ += b.size() * 8;
  }

  const std::vector<uint8_t>& bytes() const { return bytes_; }
  std::vector<uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<uint8_t> bytes_;
  size_t pos_ = 0;
};

// Four-arm variable-length unsigned field. A 2-bit selector picks an arm;
// each arm decodes as a constant plus an optional n-bit payload (n <= 30).
struct U32Arm {
  uint32_t base = 0;
  uint32_t bits = 0;
};

struct U32Spec {
  U32Arm arm[4];
};

constexpr U32Spec u32spec(U32Arm a, U32Arm b, U32Arm c, U32Arm d) {
  return U32Spec{{a, b, c, d}};
}
constexpr U32Arm u32val(uint32_t v) { return U32Arm{v, 0}; }
constexpr U32Arm u32bits(uint32_t base, uint32_t bits) {
  return U32Arm{base, bits};
}

uint32_t read_u32(BitReader& br, const U32Spec& spec);
// Picks the cheapest arm that can represent the value (ties: lowest arm).
void write_u32(BitWriter& bw, const U32Spec& spec, uint32_t value);
bool u32_can_encode(const U32Spec& spec, uint32_t value);

// Variable-length unsigned 64-bit field: 2-bit selector for {0, 1+u(4),
// 17+u(8), long form}; the long form reads 12 bits then continuation groups
// of 8 bits (4 bits for the final group at shift 60).
uint64_t read_u64(BitReader& br);
void write_u64(BitWriter& bw, uint64_t value);

}  // namespace modcodec
