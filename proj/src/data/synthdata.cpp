#include "telescopic/data/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "telescopic/core/errors.hpp"
#include "telescopic/core/rng.hpp"
#include "telescopic/core/serialize.hpp"
#include "telescopic/data/tokenizer.hpp"

namespace telescopic {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDatasetKind = "telescopic-synthetic-segmentation";

// Images live on a 1/256 grid so that inversion is exact in binary floating point.
Real quantize(double v) { return static_cast<Real>(std::round(std::clamp(v, 0.0, 1.0) * 256.0) / 256.0); }

std::string sample_file(const char* dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s/%06zu.tensor", dir, i);
  return buf;
}

bool boxes_overlap(const ShapeRecord& a, const ShapeRecord& b) {
  const double gap = a.size + b.size + 2.0;
  return std::abs(a.cx - b.cx) < gap && std::abs(a.cy - b.cy) < gap;
}

ShapeRecord place(ShapeClass cls, const SceneSpec& scene, RngStream& rng) {
  ShapeRecord r;
  r.shape = cls;
  r.size = rng.uniform(scene.min_size, scene.max_size);
  const double lo = r.size + 1.0, hi = double(scene.image_size) - r.size - 1.0;
  r.cx = rng.uniform(lo, hi);
  r.cy = rng.uniform(lo, hi);
  return r;
}

std::vector<double> background(const SceneSpec& scene, RngStream& rng) {
  const std::size_t S = scene.image_size;
  struct Wave {
    double fx, fy, phase;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 3; ++k) {
    const double cycles = rng.uniform(0.5, 2.0);
    const double angle = rng.uniform(0.0, 2 * std::numbers::pi);
    waves.push_back({2 * std::numbers::pi * cycles * std::cos(angle) / double(S),
                     2 * std::numbers::pi * cycles * std::sin(angle) / double(S), rng.uniform(0.0, 2 * std::numbers::pi)});
  }
  std::vector<double> bg(S * S);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      double v = 0;
      for (const auto& w : waves) v += std::sin(w.fx * double(x) + w.fy * double(y) + w.phase);
      bg[y * S + x] = scene.background_level + scene.background_amplitude * v / 3.0;
    }
  return bg;
}

Sample make_sample(const SceneSpec& scene, std::size_t index, RngStream rng) {
  const std::size_t S = scene.image_size;
  Sample s;
  // Round-robin targets keep the classes balanced for any n.
  s.target = static_cast<ShapeClass>(index % kShapeClasses);
  const std::size_t want = scene.min_shapes + rng.below(scene.max_shapes - scene.min_shapes + 1);

  ShapeRecord target = place(s.target, scene, rng);
  target.target = true;
  s.shapes.push_back(target);
  std::vector<ShapeClass> others;
  for (std::size_t c = 0; c < kShapeClasses; ++c)
    if (static_cast<ShapeClass>(c) != s.target) others.push_back(static_cast<ShapeClass>(c));
  if (rng.below(2)) std::swap(others[0], others[1]);
  for (std::size_t k = 0; k + 1 < want && k < others.size(); ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      ShapeRecord cand = place(others[k], scene, rng);
      if (std::none_of(s.shapes.begin(), s.shapes.end(), [&](const ShapeRecord& r) { return boxes_overlap(r, cand); })) {
        s.shapes.push_back(cand);
        break;
      }
    }
  }

  std::vector<double> img = background(scene, rng);
  std::vector<Real> mask(S * S, Real(0));
  for (const auto& shape : s.shapes) {
    const std::vector<Real> m = rasterize(shape, S);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] == Real(0)) continue;
      img[i] += scene.foreground_offset;
      if (shape.target) mask[i] = Real(1);
    }
  }
  std::vector<Real> pixels(S * S);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = quantize(img[i]);
  s.image = Tensor({1, S, S}, std::move(pixels));
  s.mask = Tensor({1, S, S}, std::move(mask));
  s.prompt = "segment the " + to_string(s.target);
  s.tokens = Tokenizer::encode(s.prompt);
  return s;
}

json shape_to_json(const ShapeRecord& r) {
  return {{"class", to_string(r.shape)}, {"cx", r.cx}, {"cy", r.cy}, {"size", r.size}, {"target", r.target}};
}

ShapeRecord shape_from_json(const json& j) {
  ShapeRecord r;
  r.shape = parse_shape_class(j.at("class").get<std::string>());
  r.cx = j.at("cx").get<double>();
  r.cy = j.at("cy").get<double>();
  r.size = j.at("size").get<double>();
  r.target = j.at("target").get<bool>();
  return r;
}

json chain_to_json(const ShiftChain& chain) {
  json out = json::array();
  for (const auto& s : chain) out.push_back({{"kind", to_string(s.kind)}, {"strength", s.strength}});
  return out;
}

Tensor load_checked(const fs::path& path, const std::string& checksum, std::size_t S) {
  io::NamedTensor t = io::read_tensor_file(path);
  if (t.tensor.shape() != Shape{1, S, S})
    throw CorruptionError("unexpected shape " + shape_str(t.tensor.shape()) + " in " + path.string());
  if (io::tensor_checksum(t.tensor) != checksum) throw CorruptionError("checksum mismatch in " + path.string());
  return t.tensor;
}

}  // namespace

std::string to_string(ShapeClass c) {
  switch (c) {
    case ShapeClass::kDisk: return "disk";
    case ShapeClass::kSquare: return "square";
    case ShapeClass::kTriangle: return "triangle";
  }
  return "?";
}

ShapeClass parse_shape_class(const std::string& s) {
  if (s == "disk") return ShapeClass::kDisk;
  if (s == "square") return ShapeClass::kSquare;
  if (s == "triangle") return ShapeClass::kTriangle;
  throw InputError("unknown shape class '" + s + "'");
}

void SceneSpec::validate() const {
  if (image_size < 8) throw ConfigError("scene image_size must be at least 8");
  if (min_shapes < 1 || max_shapes < min_shapes || max_shapes > kShapeClasses)
    throw ConfigError("scene shape count range must satisfy 1 <= min <= max <= 3");
  if (!(min_size >= 1.5 && max_size >= min_size)) throw ConfigError("scene size range must satisfy 1.5 <= min <= max");
  // Mask area cap: a square of half-extent s covers (2s)^2 pixels.
  if (4 * max_size * max_size > 0.6 * double(image_size * image_size) || 2 * max_size + 2 >= double(image_size))
    throw ConfigError("scene max_size too large for the image");
  if (!(foreground_offset > 0)) throw ConfigError("scene foreground_offset must be positive");
}

json to_json(const SceneSpec& s) {
  return {{"image_size", s.image_size},
          {"min_shapes", s.min_shapes},
          {"max_shapes", s.max_shapes},
          {"min_size", s.min_size},
          {"max_size", s.max_size},
          {"background_level", s.background_level},
          {"background_amplitude", s.background_amplitude},
          {"foreground_offset", s.foreground_offset}};
}

SceneSpec scene_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("scene spec must be a JSON object");
  SceneSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "image_size") s.image_size = value.get<std::size_t>();
    else if (key == "min_shapes") s.min_shapes = value.get<std::size_t>();
    else if (key == "max_shapes") s.max_shapes = value.get<std::size_t>();
    else if (key == "min_size") s.min_size = value.get<double>();
    else if (key == "max_size") s.max_size = value.get<double>();
    else if (key == "background_level") s.background_level = value.get<double>();
    else if (key == "background_amplitude") s.background_amplitude = value.get<double>();
    else if (key == "foreground_offset") s.foreground_offset = value.get<double>();
    else throw ConfigError("unknown scene key '" + key + "'");
  }
  s.validate();
  return s;
}

std::string to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::kNone: return "none";
    case ShiftKind::kInvert: return "invert";
    case ShiftKind::kGaussianNoise: return "gaussian_noise";
    case ShiftKind::kBlur: return "blur";
    case ShiftKind::kContrastDrop: return "contrast_drop";
  }
  return "?";
}

ShiftKind parse_shift_kind(const std::string& s) {
  if (s == "none") return ShiftKind::kNone;
  if (s == "invert") return ShiftKind::kInvert;
  if (s == "gaussian_noise") return ShiftKind::kGaussianNoise;
  if (s == "blur") return ShiftKind::kBlur;
  if (s == "contrast_drop") return ShiftKind::kContrastDrop;
  throw UsageError("unknown domain shift '" + s + "'");
}

ShiftChain parse_shift_chain(const std::string& text) {
  ShiftChain chain;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, '+');) {
    DomainShift s;
    const auto colon = part.find(':');
    s.kind = parse_shift_kind(part.substr(0, colon));
    if (colon != std::string::npos) {
      try {
        s.strength = std::stod(part.substr(colon + 1));
      } catch (const std::exception&) {
        throw UsageError("bad shift strength in '" + part + "'");
      }
    }
    if (s.kind != ShiftKind::kNone) chain.push_back(s);
  }
  return chain;
}

std::string to_string(const ShiftChain& chain) {
  if (chain.empty()) return "none";
  std::string out;
  for (const auto& s : chain) {
    if (!out.empty()) out += "+";
    out += to_string(s.kind);
    if (s.kind != ShiftKind::kInvert) {
      std::ostringstream os;
      os << s.strength;
      out += ":" + os.str();
    }
  }
  return out;
}

ShiftChain default_finetune_shift() { return {{ShiftKind::kInvert, 0.0}, {ShiftKind::kGaussianNoise, 0.1}}; }

Tensor apply_domain_shift(const Tensor& image, const DomainShift& shift) {
  if (image.rank() < 2) throw DimensionError("apply_domain_shift: expected an image, got " + shape_str(image.shape()));
  const std::size_t H = image.dim(image.rank() - 2), W = image.dim(image.rank() - 1);
  const auto in = image.data();
  std::vector<Real> out(in.begin(), in.end());
  auto clamp01 = [](double v) { return static_cast<Real>(std::clamp(v, 0.0, 1.0)); };
  switch (shift.kind) {
    case ShiftKind::kNone:
      break;
    case ShiftKind::kInvert:
      for (auto& v : out) v = clamp01(1.0 - double(v));
      break;
    case ShiftKind::kGaussianNoise: {
      if (shift.strength == 0.0) break;
      const std::vector<double> bytes(in.begin(), in.end());
      const std::uint64_t seed = fnv1a64(bytes.data(), bytes.size() * sizeof(double));
      RngStream rng(mix64(seed ^ std::bit_cast<std::uint64_t>(shift.strength)));
      for (auto& v : out) v = clamp01(double(v) + shift.strength * rng.normal());
      break;
    }
    case ShiftKind::kBlur: {
      const int passes = static_cast<int>(std::ceil(shift.strength));
      const std::size_t planes = out.size() / (H * W);
      std::vector<Real> tmp(out.size());
      for (int pass = 0; pass < passes; ++pass) {
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
              double acc = 0;
              int count = 0;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  const long yy = long(y) + dy, xx = long(x) + dx;
                  if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
                  acc += out[(p * H + yy) * W + xx];
                  ++count;
                }
              tmp[(p * H + y) * W + x] = clamp01(acc / count);
            }
        out.swap(tmp);
      }
      break;
    }
    case ShiftKind::kContrastDrop:
      for (auto& v : out) v = clamp01(0.5 + shift.strength * (double(v) - 0.5));
      break;
  }
  return Tensor(image.shape(), std::move(out));
}

Tensor apply_shift_chain(const Tensor& image, const ShiftChain& chain) {
  Tensor out = image;
  for (const auto& s : chain) out = apply_domain_shift(out, s);
  return out;
}

std::vector<Real> rasterize(const ShapeRecord& r, std::size_t size) {
  std::vector<Real> m(size * size, Real(0));
  // Upright isosceles triangle: apex above the centre, base below.
  const double ax = r.cx, ay = r.cy - r.size;
  const double bx = r.cx - r.size, by = r.cy + r.size;
  const double qx = r.cx + r.size, qy = r.cy + r.size;
  auto edge = [](double x0, double y0, double x1, double y1, double px, double py) {
    return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
  };
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = double(x) + 0.5, py = double(y) + 0.5;
      bool inside = false;
      switch (r.shape) {
        case ShapeClass::kDisk:
          inside = (px - r.cx) * (px - r.cx) + (py - r.cy) * (py - r.cy) <= r.size * r.size;
          break;
        case ShapeClass::kSquare:
          inside = std::abs(px - r.cx) <= r.size && std::abs(py - r.cy) <= r.size;
          break;
        case ShapeClass::kTriangle: {
          const double e0 = edge(ax, ay, bx, by, px, py), e1 = edge(bx, by, qx, qy, px, py),
                       e2 = edge(qx, qy, ax, ay, px, py);
          inside = (e0 <= 0 && e1 <= 0 && e2 <= 0) || (e0 >= 0 && e1 >= 0 && e2 >= 0);
          break;
        }
      }
      if (inside) m[y * size + x] = Real(1);
    }
  return m;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw UsageError("unknown split '" + s + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == s) out.push_back(i);
  return out;
}

Dataset generate_samples(const SceneSpec& scene, const ShiftChain& shift, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw UsageError("generate_dataset: n must be at least 1");
  scene.validate();
  Dataset d;
  d.scene = scene;
  d.shift = shift;
  d.seed = seed;
  const RngStream root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = make_sample(scene, i, root.split("sample").split(i));
    s.image = apply_shift_chain(s.image, shift);
    d.samples.push_back(std::move(s));
  }
  // 70/15/15 split over a seeded permutation.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngStream perm = root.split("split");
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[perm.below(i)]);
  const std::size_t n_train = n * 70 / 100, n_val = n * 15 / 100;
  for (std::size_t k = 0; k < n; ++k)
    d.samples[order[k]].split = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
  return d;
}

void write_dataset(const fs::path& dir, const Dataset& data) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (!ec) fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  json samples = json::array();
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const std::string image_file = sample_file("images", i), mask_file = sample_file("masks", i);
    io::write_tensor_file(dir / image_file, "image", s.image);
    io::write_tensor_file(dir / mask_file, "mask", s.mask);
    json shapes = json::array();
    for (const auto& r : s.shapes) shapes.push_back(shape_to_json(r));
    samples.push_back({{"index", i},
                       {"image", image_file},
                       {"mask", mask_file},
                       {"image_checksum", io::tensor_checksum(s.image)},
                       {"mask_checksum", io::tensor_checksum(s.mask)},
                       {"prompt", s.prompt},
                       {"shape_class", to_string(s.target)},
                       {"split", to_string(s.split)},
                       {"shapes", shapes}});
  }
  json manifest = {{"format_version", io::kFormatVersion},
                   {"kind", kDatasetKind},
                   {"generator_seed", data.seed},
                   {"scene", to_json(data.scene)},
                   {"shift", chain_to_json(data.shift)},
                   {"samples", samples}};
  io::write_json_file(dir / "manifest.json", manifest);
}

Dataset generate_dataset(const fs::path& dir, const SceneSpec& scene, const ShiftChain& shift, std::size_t n,
                         std::uint64_t seed) {
  Dataset d = generate_samples(scene, shift, n, seed);
  write_dataset(dir, d);
  return d;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("no dataset manifest at " + mpath.string());
  const json m = io::read_json_file(mpath);
  if (m.value("format_version", -1) != io::kFormatVersion || m.value("kind", "") != kDatasetKind)
    throw CorruptionError("unsupported dataset manifest " + mpath.string());
  Dataset d;
  try {
    d.scene = scene_spec_from_json(m.at("scene"));
    d.seed = m.at("generator_seed").get<std::uint64_t>();
    for (const auto& s : m.at("shift"))
      d.shift.push_back({parse_shift_kind(s.at("kind").get<std::string>()), s.at("strength").get<double>()});
    const std::size_t S = d.scene.image_size;
    for (const auto& e : m.at("samples")) {
      Sample s;
      s.image = load_checked(dir / e.at("image").get<std::string>(), e.at("image_checksum").get<std::string>(), S);
      s.mask = load_checked(dir / e.at("mask").get<std::string>(), e.at("mask_checksum").get<std::string>(), S);
      for (Real v : s.mask.data())
        if (v != Real(0) && v != Real(1)) throw CorruptionError("non-binary mask " + e.at("mask").get<std::string>());
      s.prompt = e.at("prompt").get<std::string>();
      s.tokens = Tokenizer::encode(s.prompt);
      s.target = parse_shape_class(e.at("shape_class").get<std::string>());
      s.split = parse_split(e.at("split").get<std::string>());
      for (const auto& r : e.at("shapes")) s.shapes.push_back(shape_from_json(r));
      d.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw CorruptionError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  }
  return d;
}

}  // namespace telescopic
