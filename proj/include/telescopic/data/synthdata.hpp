#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "telescopic/core/tensor.hpp"

namespace telescopic {

enum class ShapeClass { kDisk, kSquare, kTriangle };
inline constexpr std::size_t kShapeClasses = 3;

std::string to_string(ShapeClass c);
ShapeClass parse_shape_class(const std::string& s);

// Scene generator parameters. Sizes are radii / half-extents in pixels.
struct SceneSpec {
  std::size_t image_size = 32;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  double min_size = 4.0;
  double max_size = 8.0;
  double background_level = 0.3;
  double background_amplitude = 0.12;
  double foreground_offset = 0.4;

  void validate() const;  // ConfigError
  bool operator==(const SceneSpec&) const = default;
};

nlohmann::json to_json(const SceneSpec& s);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

enum class ShiftKind { kNone, kInvert, kGaussianNoise, kBlur, kContrastDrop };

struct DomainShift {
  ShiftKind kind = ShiftKind::kNone;
  double strength = 0.0;
  bool operator==(const DomainShift&) const = default;
};
// Shifts apply left to right.
using ShiftChain = std::vector<DomainShift>;

std::string to_string(ShiftKind k);
ShiftKind parse_shift_kind(const std::string& s);  // UsageError
// "invert", "gaussian_noise:0.1", "invert+gaussian_noise:0.1", "none".
ShiftChain parse_shift_chain(const std::string& text);
std::string to_string(const ShiftChain& chain);
// Fine-tuning domain: inverted intensities plus mild noise.
ShiftChain default_finetune_shift();

// image: [1 x H x W] (or [H x W]) with values in [0,1]. Noise is seeded from
// the image bytes and strength, so the result depends on nothing else.
Tensor apply_domain_shift(const Tensor& image, const DomainShift& shift);
Tensor apply_shift_chain(const Tensor& image, const ShiftChain& chain);

struct ShapeRecord {
  ShapeClass shape = ShapeClass::kDisk;
  double cx = 0, cy = 0, size = 0;
  bool target = false;
};

// 1 where the pixel centre lies inside the shape, row-major size x size.
std::vector<Real> rasterize(const ShapeRecord& shape, std::size_t size);

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct Sample {
  Tensor image;  // [1 x S x S]
  Tensor mask;   // [1 x S x S], binary
  std::string prompt;
  std::vector<std::size_t> tokens;
  ShapeClass target = ShapeClass::kDisk;
  Split split = Split::kTrain;
  std::vector<ShapeRecord> shapes;
};

struct Dataset {
  SceneSpec scene;
  ShiftChain shift;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;

  std::vector<std::size_t> indices(Split s) const;
};

// In-memory generation; sample i depends only on (scene, shift, seed, i, n).
Dataset generate_samples(const SceneSpec& scene, const ShiftChain& shift, std::size_t n, std::uint64_t seed);
// Generates and writes manifest.json, images/ and masks/ under `dir`.
Dataset generate_dataset(const std::filesystem::path& dir, const SceneSpec& scene, const ShiftChain& shift,
                         std::size_t n, std::uint64_t seed);
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
// Verifies checksums and shapes (CorruptionError naming the file) and
// tokenizes prompts (InputError for unknown words).
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace telescopic
