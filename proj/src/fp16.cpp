#include "seqforge/fp16.hpp"

#include <cstring>

namespace seqforge {

namespace {

// Round v / 2^s to the nearest integer, ties to even.
uint32_t rne_shift(uint32_t v, int s) {
  if (s <= 0) return v << -s;
  if (s > 25) return 0;  // v < 2^24, so v / 2^s < 1/2
  uint32_t q = v >> s;
  uint32_t rem = v & ((1u << s) - 1u);
  uint32_t half = 1u << (s - 1);
  if (rem > half || (rem == half && (q & 1u))) q += 1;
  return q;
}

}  // namespace

uint16_t f32_to_f16_bits(float x) {
  uint32_t f;
  std::memcpy(&f, &x, 4);
  uint16_t sign = static_cast<uint16_t>((f >> 16) & 0x8000u);
  uint32_t biased = (f >> 23) & 0xFFu;
  uint32_t mant = f & 0x007FFFFFu;
  if (biased == 0xFFu) {
    if (mant) return static_cast<uint16_t>(sign | 0x7E00u);  // quiet NaN
    return static_cast<uint16_t>(sign | 0x7C00u);            // infinity
  }
  int exp = static_cast<int>(biased) - 127;
  if (exp >= 16) return static_cast<uint16_t>(sign | 0x7C00u);
  if (exp >= -14) {
    // Normal half range; rounding may carry into the exponent and the
    // carry out of exponent 30 lands exactly on the infinity encoding.
    uint32_t h = (static_cast<uint32_t>(exp + 15) << 10) | (mant >> 13);
    uint32_t rem = mant & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) h += 1;
    return static_cast<uint16_t>(sign | h);
  }
  // Subnormal or zero: significand is 24 bits, target ulp is 2^-24.
  uint32_t sig = 0x00800000u | mant;
  if (biased == 0) sig = mant;  // float subnormal, far below half range anyway
  int shift = -(exp + 1);
  return static_cast<uint16_t>(sign | rne_shift(sig, shift));
}

float f16_bits_to_f32(uint16_t h) {
  uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  uint32_t exp = (h >> 10) & 0x1Fu;
  uint32_t mant = h & 0x3FFu;
  uint32_t f;
  if (exp == 0) {
    if (mant == 0) {
      f = sign;
    } else {
      int e = 1;
      while (!(mant & 0x400u)) {
        mant <<= 1;
        --e;
      }
      mant &= 0x3FFu;
      f = sign | (static_cast<uint32_t>(e + 127 - 15) << 23) | (mant << 13);
    }
  } else if (exp == 31) {
    f = sign | 0x7F800000u | (mant << 13);
  } else {
    f = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  float out;
  std::memcpy(&out, &f, 4);
  return out;
}

float quantize_fp16(float x) { return f16_bits_to_f32(f32_to_f16_bits(x)); }

}  // namespace seqforge
