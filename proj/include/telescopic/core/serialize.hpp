#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "telescopic/core/tensor.hpp"

namespace telescopic::io {

inline constexpr int kFormatVersion = 1;

// On-disk tensor file:
//   u64 little-endian header length N
//   N bytes of JSON {"name", "shape", "dtype": "f64"}
//   product(shape) little-endian IEEE-754 doubles, row-major
void write_tensor_file(const std::filesystem::path& path, const std::string& name, const Tensor& tensor);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

NamedTensor read_tensor_file(const std::filesystem::path& path);

// FNV-1a over the little-endian f64 encoding of the values, as 16 hex digits.
std::string tensor_checksum(const Tensor& tensor);

// A directory holding one tensor file per entry plus manifest.json:
//   {"format_version": 1, "entries": [{"name","file","shape","checksum"}], ...extra}
void save_tensor_dir(const std::filesystem::path& dir, const std::vector<NamedTensor>& entries,
                     const nlohmann::json& extra = nlohmann::json::object());

struct TensorDir {
  nlohmann::json manifest;
  std::vector<NamedTensor> entries;
};

// Verifies version, shapes and checksums; CorruptionError names the bad file.
TensorDir load_tensor_dir(const std::filesystem::path& dir);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Pretty-printed with a trailing newline so reruns are byte-identical.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::string file_stem_for(const std::string& tensor_name);

}  // namespace telescopic::io
