#include "telescopic/core/serialize.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "telescopic/core/errors.hpp"
#include "telescopic/core/rng.hpp"

namespace telescopic::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string encode_values(const Tensor& t) {
  std::string out;
  out.reserve(t.numel() * 8);
  for (Real r : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(r)));
  return out;
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in && !in.eof()) throw IoError("failed reading " + path.string());
  return ss.str();
}

void write_all(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Shape shape_from_json(const json& j, const fs::path& where) {
  if (!j.is_array() || j.empty()) throw CorruptionError("bad shape field in " + where.string());
  Shape s;
  for (const auto& e : j) {
    if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) throw CorruptionError("bad shape extent in " + where.string());
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

}  // namespace

std::string file_stem_for(const std::string& tensor_name) {
  std::string out;
  for (char c : tensor_name) out.push_back((std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '_');
  return out;
}

void write_tensor_file(const fs::path& path, const std::string& name, const Tensor& tensor) {
  json header = {{"name", name}, {"shape", tensor.shape()}, {"dtype", "f64"}};
  const std::string h = header.dump();
  std::string bytes;
  put_u64(bytes, h.size());
  bytes += h;
  bytes += encode_values(tensor);
  write_all(path, bytes);
}

NamedTensor read_tensor_file(const fs::path& path) {
  const std::string bytes = read_all(path);
  auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8) throw CorruptionError("truncated tensor file " + path.string());
  const std::uint64_t hlen = get_u64(p);
  if (hlen > bytes.size() - 8) throw CorruptionError("header length out of range in " + path.string());
  json header;
  try {
    header = json::parse(bytes.substr(8, hlen));
  } catch (const json::exception&) {
    throw CorruptionError("unparseable tensor header in " + path.string());
  }
  if (!header.contains("shape") || !header.contains("name") || header.value("dtype", "") != "f64")
    throw CorruptionError("incomplete tensor header in " + path.string());
  Shape shape = shape_from_json(header["shape"], path);
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != 8 + hlen + n * 8)
    throw CorruptionError("payload size does not match shape " + shape_str(shape) + " in " + path.string());
  std::vector<Real> values(n);
  for (std::size_t i = 0; i < n; ++i)
    values[i] = static_cast<Real>(std::bit_cast<double>(get_u64(p + 8 + hlen + 8 * i)));
  return {header["name"].get<std::string>(), Tensor(std::move(shape), std::move(values))};
}

std::string tensor_checksum(const Tensor& tensor) {
  const std::string bytes = encode_values(tensor);
  std::uint64_t h = fnv1a64(bytes.data(), bytes.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_tensor_dir(const fs::path& dir, const std::vector<NamedTensor>& entries, const json& extra) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  json manifest = extra.is_object() ? extra : json::object();
  manifest["format_version"] = kFormatVersion;
  json list = json::array();
  for (const auto& e : entries) {
    const std::string file = file_stem_for(e.name) + ".tensor";
    write_tensor_file(dir / file, e.name, e.tensor);
    list.push_back({{"name", e.name}, {"file", file}, {"shape", e.tensor.shape()}, {"checksum", tensor_checksum(e.tensor)}});
  }
  manifest["entries"] = std::move(list);
  write_json_file(dir / "manifest.json", manifest);
}

TensorDir load_tensor_dir(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("missing manifest " + mpath.string());
  TensorDir out;
  out.manifest = read_json_file(mpath);
  if (out.manifest.value("format_version", -1) != kFormatVersion)
    throw CorruptionError("unsupported format_version in " + mpath.string());
  for (const auto& e : out.manifest.at("entries")) {
    const fs::path file = dir / e.at("file").get<std::string>();
    NamedTensor t = read_tensor_file(file);
    if (t.name != e.at("name").get<std::string>()) throw CorruptionError("name mismatch in " + file.string());
    if (t.tensor.shape() != shape_from_json(e.at("shape"), file))
      throw CorruptionError("shape mismatch in " + file.string());
    if (tensor_checksum(t.tensor) != e.at("checksum").get<std::string>())
      throw CorruptionError("checksum mismatch in " + file.string());
    out.entries.push_back(std::move(t));
  }
  return out;
}

json read_json_file(const fs::path& path) {
  const std::string text = read_all(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw CorruptionError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& doc) { write_all(path, doc.dump(2) + "\n"); }

void write_text_file(const fs::path& path, const std::string& text) { write_all(path, text); }

}  // namespace telescopic::io
