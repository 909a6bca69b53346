#include "htsr/ingestion.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "htsr/error.hpp"

namespace htsr {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

template <class U>
U to_little_endian(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    }
    return out;
  }
  return v;
}

LayerKind parse_kind(const std::string& s, const std::string& layer) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "lora_base") return LayerKind::LoraBase;
  if (s == "lora_a") return LayerKind::LoraA;
  if (s == "lora_b") return LayerKind::LoraB;
  throw Error(ErrorCode::ManifestError, "layer '" + layer + "': unknown kind '" + s + "'");
}

DType parse_dtype(const std::string& s, const std::string& layer) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw Error(ErrorCode::ManifestError, "layer '" + layer + "': unknown dtype '" + s + "'");
}

template <class T>
T required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) {
    throw Error(ErrorCode::ManifestError, where + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ManifestError, where + ": field '" + key + "' has the wrong type");
  }
}

std::optional<std::string> optional_string(const json& obj, const char* key,
                                           const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  if (!obj.at(key).is_string()) {
    throw Error(ErrorCode::ManifestError, where + ": field '" + key + "' must be a string");
  }
  return obj.at(key).get<std::string>();
}

std::size_t positive_dim(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj.at(key).is_number_unsigned() || obj.at(key).get<std::size_t>() == 0) {
    throw Error(ErrorCode::ManifestError, where + ": '" + key + "' must be a positive integer");
  }
  return obj.at(key).get<std::size_t>();
}

WeightMatrix to_matrix(const RawTensor& t) {
  WeightMatrix w{t.entry.name, t.entry.rows, t.entry.cols, t.values, t.entry.block_id};
  validate(w);
  return w;
}

}  // namespace

std::size_t dtype_size(DType t) noexcept { return t == DType::F32 ? 4 : 8; }

std::string_view to_string(LayerKind k) noexcept {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::LoraBase: return "lora_base";
    case LayerKind::LoraA: return "lora_a";
    case LayerKind::LoraB: return "lora_b";
  }
  return "dense";
}

std::string_view to_string(DType t) noexcept { return t == DType::F32 ? "f32" : "f64"; }

CheckpointManifest parse_manifest(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ManifestError, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::ManifestError, "manifest must be a JSON object");
  CheckpointManifest m;
  m.version = required<int>(doc, "version", "manifest");
  if (m.version != kManifestVersion) {
    throw Error(ErrorCode::ManifestError,
                "unsupported manifest version " + std::to_string(m.version));
  }
  if (!doc.contains("layers") || !doc.at("layers").is_array()) {
    throw Error(ErrorCode::ManifestError, "manifest: 'layers' must be an array");
  }
  for (const auto& item : doc.at("layers")) {
    if (!item.is_object()) throw Error(ErrorCode::ManifestError, "layer entries must be objects");
    LayerEntry e;
    e.name = required<std::string>(item, "name", "layer");
    const std::string where = "layer '" + e.name + "'";
    e.kind = parse_kind(required<std::string>(item, "kind", where), e.name);
    e.rows = positive_dim(item, "rows", where);
    e.cols = positive_dim(item, "cols", where);
    e.dtype = parse_dtype(required<std::string>(item, "dtype", where), e.name);
    e.file = required<std::string>(item, "file", where);
    e.block_id = optional_string(item, "block_id", where);
    e.pair_id = optional_string(item, "pair_id", where);
    m.layers.push_back(std::move(e));
  }
  return m;
}

std::string serialize_manifest(const CheckpointManifest& manifest) {
  json layers = json::array();
  for (const auto& e : manifest.layers) {
    json item = {{"name", e.name},
                 {"kind", std::string(to_string(e.kind))},
                 {"rows", e.rows},
                 {"cols", e.cols},
                 {"dtype", std::string(to_string(e.dtype))},
                 {"file", e.file}};
    if (e.block_id) item["block_id"] = *e.block_id;
    if (e.pair_id) item["pair_id"] = *e.pair_id;
    layers.push_back(std::move(item));
  }
  return json{{"version", manifest.version}, {"layers", std::move(layers)}}.dump(2) + "\n";
}

void validate(const CheckpointManifest& manifest) {
  std::set<std::string> names;
  struct Pair {
    const LayerEntry* base = nullptr;
    const LayerEntry* a = nullptr;
    const LayerEntry* b = nullptr;
  };
  std::map<std::string, Pair> pairs;
  for (const auto& e : manifest.layers) {
    if (!names.insert(e.name).second) {
      throw Error(ErrorCode::ManifestError, "duplicate layer name '" + e.name + "'");
    }
    if (e.file.empty() || fs::path(e.file).is_absolute()) {
      throw Error(ErrorCode::ManifestError, "layer '" + e.name + "': file must be a relative path");
    }
    if (e.kind == LayerKind::Dense) continue;
    if (!e.pair_id) {
      throw Error(ErrorCode::ManifestError, "LoRA layer '" + e.name + "' needs a pair_id");
    }
    Pair& p = pairs[*e.pair_id];
    const LayerEntry** slot = e.kind == LayerKind::LoraBase ? &p.base
                              : e.kind == LayerKind::LoraA  ? &p.a
                                                            : &p.b;
    if (*slot) {
      throw Error(ErrorCode::ManifestError,
                  "pair '" + *e.pair_id + "' has two " + std::string(to_string(e.kind)) + " entries");
    }
    *slot = &e;
  }
  for (const auto& [id, p] : pairs) {
    if (!p.base || !p.a || !p.b) {
      if (p.base && !p.a && !p.b) continue;  // base without adapters behaves as dense
      throw Error(ErrorCode::OrphanAdapter, "pair '" + id + "' is missing its " +
                                                (!p.base ? "base" : !p.a ? "lora_a" : "lora_b"));
    }
    const std::size_t d = p.base->rows;
    const std::size_t k = p.base->cols;
    const std::size_t r = p.a->rows;
    if (p.a->cols != k || p.b->rows != d || p.b->cols != r || r > std::min(d, k)) {
      throw Error(ErrorCode::ShapeMismatch,
                  "pair '" + id + "': base " + std::to_string(d) + "x" + std::to_string(k) +
                      ", B " + std::to_string(p.b->rows) + "x" + std::to_string(p.b->cols) +
                      ", A " + std::to_string(p.a->rows) + "x" + std::to_string(p.a->cols));
    }
  }
}

std::vector<double> read_tensor_file(const fs::path& path, std::size_t rows, std::size_t cols,
                                     DType dtype) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open tensor file " + path.string());
  const std::size_t count = rows * cols;
  const std::size_t expected = count * dtype_size(dtype);
  std::error_code ec;
  const auto actual = fs::file_size(path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot stat tensor file " + path.string());
  if (actual != expected) {
    throw Error(ErrorCode::ShapeMismatch, path.string() + " holds " + std::to_string(actual) +
                                              " bytes, shape needs " + std::to_string(expected));
  }
  std::vector<char> bytes(expected);
  if (!in.read(bytes.data(), static_cast<std::streamsize>(expected))) {
    throw Error(ErrorCode::IoError, "short read from " + path.string());
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == DType::F32) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + 4 * i, 4);
      out[i] = std::bit_cast<float>(to_little_endian(bits));
    } else {
      std::uint64_t bits;
      std::memcpy(&bits, bytes.data() + 8 * i, 8);
      out[i] = std::bit_cast<double>(to_little_endian(bits));
    }
  }
  return out;
}

void write_tensor_file(const fs::path& path, const std::vector<double>& values, DType dtype) {
  std::vector<char> bytes(values.size() * dtype_size(dtype));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (dtype == DType::F32) {
      const auto bits = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
      std::memcpy(bytes.data() + 4 * i, &bits, 4);
    } else {
      const auto bits = to_little_endian(std::bit_cast<std::uint64_t>(values[i]));
      std::memcpy(bytes.data() + 8 * i, &bits, 8);
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw Error(ErrorCode::IoError, "cannot write tensor file " + path.string());
  }
}

RawCheckpoint load_raw(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::ManifestError, "cannot open manifest " + manifest_path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  RawCheckpoint ckpt;
  ckpt.manifest = parse_manifest(text);
  validate(ckpt.manifest);
  const fs::path dir = manifest_path.parent_path();
  for (const auto& e : ckpt.manifest.layers) {
    ckpt.tensors.push_back({e, read_tensor_file(dir / e.file, e.rows, e.cols, e.dtype)});
  }
  return ckpt;
}

void write_checkpoint(const fs::path& out_dir, const RawCheckpoint& checkpoint) {
  validate(checkpoint.manifest);
  fs::create_directories(out_dir);
  for (const auto& t : checkpoint.tensors) {
    if (t.values.size() != t.entry.rows * t.entry.cols) {
      throw Error(ErrorCode::ShapeMismatch, "tensor '" + t.entry.name + "' size mismatch");
    }
    write_tensor_file(out_dir / t.entry.file, t.values, t.entry.dtype);
  }
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  out << serialize_manifest(checkpoint.manifest);
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest in " + out_dir.string());
}

WeightMatrix merge_lora(const WeightMatrix& base, const WeightMatrix& b, const WeightMatrix& a) {
  if (b.rows != base.rows || a.cols != base.cols || b.cols != a.rows ||
      base.values.size() != base.rows * base.cols || b.values.size() != b.rows * b.cols ||
      a.values.size() != a.rows * a.cols) {
    throw Error(ErrorCode::ShapeMismatch, "LoRA factors do not conform to base '" + base.name + "'");
  }
  WeightMatrix out = base;
  const std::size_t rank = a.rows;
  for (std::size_t i = 0; i < base.rows; ++i) {
    for (std::size_t j = 0; j < base.cols; ++j) {
      double delta = 0.0;
      for (std::size_t p = 0; p < rank; ++p) delta += b.at(i, p) * a.at(p, j);
      out.at(i, j) += delta;
    }
  }
  return out;
}

std::vector<WeightMatrix> materialize(const RawCheckpoint& checkpoint) {
  std::map<std::string, const RawTensor*> adapters_a;
  std::map<std::string, const RawTensor*> adapters_b;
  for (const auto& t : checkpoint.tensors) {
    if (t.entry.kind == LayerKind::LoraA) adapters_a[*t.entry.pair_id] = &t;
    if (t.entry.kind == LayerKind::LoraB) adapters_b[*t.entry.pair_id] = &t;
  }
  std::vector<WeightMatrix> out;
  for (const auto& t : checkpoint.tensors) {
    if (t.entry.kind == LayerKind::Dense) {
      out.push_back(to_matrix(t));
    } else if (t.entry.kind == LayerKind::LoraBase) {
      auto a = adapters_a.find(*t.entry.pair_id);
      auto b = adapters_b.find(*t.entry.pair_id);
      if (a == adapters_a.end() || b == adapters_b.end()) {
        out.push_back(to_matrix(t));
        continue;
      }
      WeightMatrix merged = merge_lora(to_matrix(t), to_matrix(*b->second), to_matrix(*a->second));
      validate(merged);
      out.push_back(std::move(merged));
    }
  }
  return out;
}

std::vector<WeightMatrix> load_checkpoint(const fs::path& manifest_path) {
  return materialize(load_raw(manifest_path));
}

}  // namespace htsr
