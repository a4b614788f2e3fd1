#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "telescopic/core/ops.hpp"
#include "telescopic/core/rng.hpp"
#include "telescopic/core/tensor.hpp"

namespace telescopic::testing {

inline Tensor random_tensor(const Shape& shape, RngStream& rng, Real lo = -1, Real hi = 1, bool track = false) {
  Tensor t(shape);
  for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(lo, hi));
  t.set_requires_grad(track);
  return t;
}

// Contracts a tensor against fixed random weights so every output coordinate
// reaches the scalar being differentiated.
inline Tensor probe(const Tensor& y, std::uint64_t seed) {
  RngStream rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tensor w = random_tensor(y.shape(), rng);
  return ops::sum(ops::mul(y, w));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("telescopic_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline constexpr int kGradSeeds = 10;
inline constexpr Real kGradTol = Real(1e-4);

}  // namespace telescopic::testing
