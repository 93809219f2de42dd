#include "modcodec/bitio.h"

namespace modcodec {

uint32_t read_u32(BitReader& br, const U32Spec& spec) {
  uint32_t sel = br.read(2);
  const U32Arm& a = spec.arm[sel];
  uint32_t v = a.base;
  if (a.bits) v += br.read(a.bits);
  return v;
}

static bool arm_fits(const U32Arm& a, uint32_t value) {
  if (value < a.base) return false;
  uint64_t span = a.bits ? (uint64_t(1) << a.bits) : 1;
  return uint64_t(value) - a.base < span;
}

bool u32_can_encode(const U32Spec& spec, uint32_t value) {
  for (int i = 0; i < 4; i++)
    if (arm_fits(spec.arm[i], value)) return true;
  return false;
}

void write_u32(BitWriter& bw, const U32Spec& spec, uint32_t value) {
  int best = -1;
  uint32_t best_bits = 0;
  for (int i = 0; i < 4; i++) {
    if (!arm_fits(spec.arm[i], value)) continue;
    if (best < 0 || spec.arm[i].bits < best_bits) {
      best = i;
      best_bits = spec.arm[i].bits;
    }
  }
  check(best >= 0, "write_u32: value not representable by any arm");
  bw.write(2, uint32_t(best));
  if (best_bits) bw.write(best_bits, value - spec.arm[best].base);
}

uint64_t read_u64(BitReader& br) {
  uint32_t sel = br.read(2);
  if (sel == 0) return 0;
  if (sel == 1) return 1 + br.read(4);
  if (sel == 2) return 17 + br.read(8);
  uint64_t v = br.read(12);
  uint32_t shift = 12;
  while (br.read_bit()) {
    if (shift == 60) {
      v += uint64_t(br.read(4)) << shift;
      break;
    }
    v += uint64_t(br.read(8)) << shift;
    shift += 8;
  }
  return v;
}

void write_u64(BitWriter& bw, uint64_t value) {
  if (value == 0) {
    bw.write(2, 0);
  } else if (value <= 16) {
    bw.write(2, 1);
    bw.write(4, uint32_t(value - 1));
  } else if (value <= 272) {
    bw.write(2, 2);
    bw.write(8, uint32_t(value - 17));
  } else {
    bw.write(2, 3);
    bw.write(12, uint32_t(value & 0xFFF));
    value >>= 12;
    uint32_t shift = 12;
    while (value != 0) {
      bw.write_bit(true);
      if (shift == 60) {
        bw.write(4, uint32_t(value & 0xF));
        return;
      }
      bw.write(8, uint32_t(value & 0xFF));
      value >>= 8;
      shift += 8;
    }
    bw.write_bit(false);
  }
}

}  // namespace modcodec
