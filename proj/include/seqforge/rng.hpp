#pragma once

#include <cstdint>
#include <vector>

namespace seqforge {

// Counter-based splittable generator. (seed, stream_id, counter) fully
// determine every draw, so streams can be reconstructed from three
// integers in a checkpoint. The mixing function is frozen by the
// checkpoint format version.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id, uint64_t counter = 0)
      : seed_(seed), stream_id_(stream_id), counter_(counter) {}

  uint64_t next_u64();
  double next_double();           // uniform [0, 1), 53-bit
  double next_normal();           // Box-Muller, consumes two counters
  uint64_t next_below(uint64_t n);  // uniform [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

 private:
  uint64_t seed_;
  uint64_t stream_id_;
  uint64_t counter_;
};

// Stream-id namespaces. Epoch shuffles use the epoch number itself
// (epochs are >= 1), everything else lives in disjoint high ranges.
inline constexpr uint64_t kStreamInit = 0;
inline constexpr uint64_t kStreamDropoutBase = 1ull << 32;   // | (step << 8) | call
inline constexpr uint64_t kStreamSamplingBase = 2ull << 32;  // | sentence index

}  // namespace seqforge
