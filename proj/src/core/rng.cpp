#include "telescopic/core/rng.hpp"

#include <cmath>
#include <numbers>

namespace telescopic {

std::uint64_t mix64(std::uint64_t x) {
  // SplitMix64 finalizer.
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t basis) {
  auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t RngStream::next_u64() {
  std::uint64_t key = mix64(seed_ ^ 0x6a09e667f3bcc909ULL);
  return mix64(key ^ mix64(counter_++));
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::below(std::uint64_t n) {
  // Lemire-style rejection keeps the result unbiased.
  std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

double RngStream::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::split(std::uint64_t stream_id) const {
  return RngStream(mix64(seed_ * 0x9e3779b97f4a7c15ULL ^ mix64(stream_id + 0x1234567ULL)), 0);
}

RngStream RngStream::split(std::string_view name) const { return split(fnv1a64(name.data(), name.size())); }

}  // namespace telescopic
