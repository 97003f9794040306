#include "seqforge/rng.hpp"

#include <cmath>

namespace seqforge {

namespace {

// 64-bit finalizer from MurmurHash3. Bijective, good avalanche.
inline uint64_t fmix64(uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdull;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ull;
  k ^= k >> 33;
  return k;
}

}  // namespace

uint64_t RngStream::next_u64() {
  uint64_t h = fmix64(seed_ + 0x9e3779b97f4a7c15ull);
  h = fmix64(h ^ stream_id_);
  h = fmix64(h ^ counter_);
  ++counter_;
  return h;
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() {
  // Box-Muller without caching the spare: exactly two counter ticks per
  // call keeps the counter<->draw mapping trivial to reason about.
  double u1 = next_double();
  double u2 = next_double();
  if (u1 <= 0.0) u1 = 0x1.0p-53;  // guard log(0)
  double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * M_PI * u2);
}

uint64_t RngStream::next_below(uint64_t n) {
  if (n <= 1) return 0;
  // Multiply-shift map of a full 64-bit draw onto [0, n). Bias is
  // O(n / 2^64), irrelevant at the sizes seen here; determinism is what
  // matters.
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64());
  m *= n;
  return static_cast<uint64_t>(m >> 64);
}

}  // namespace seqforge
