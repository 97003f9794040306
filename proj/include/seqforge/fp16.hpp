#pragma once

#include <cstdint>

namespace seqforge {

// IEEE-754 binary16 conversion, round-to-nearest-even. Pure bit
// manipulation so results are identical on every host.
uint16_t f32_to_f16_bits(float x);
float f16_bits_to_f32(uint16_t h);

// Round x onto the binary16 grid and widen back to float. Total function:
// magnitudes at or above the binary16 rounding boundary (65520) map to
// +/-inf, magnitudes at or below half the smallest subnormal (2^-25) map
// to signed zero, NaN stays NaN.
float quantize_fp16(float x);

}  // namespace seqforge
