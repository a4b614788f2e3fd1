#pragma once

#include <cstdint>
#include <string_view>

namespace telescopic {

// Counter-based random stream: draw k of a stream is a pure function of
// (seed, k), so results do not depend on the standard library's
// distribution implementations. Streams for sub-components are derived
// with split(), which never perturbs the parent's counter.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (two draws per sample, no caching).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  RngStream split(std::uint64_t stream_id) const;
  RngStream split(std::string_view name) const;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace telescopic
