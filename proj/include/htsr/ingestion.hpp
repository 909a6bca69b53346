#pragma once

// Checkpoint container: a JSON manifest next to one raw little-endian,
// row-major, headerless tensor file per layer. See docs/checkpoint-format.md.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "htsr/spectral.hpp"

namespace htsr {

inline constexpr int kManifestVersion = 1;

enum class LayerKind { Dense, LoraBase, LoraA, LoraB };
enum class DType { F32, F64 };

std::size_t dtype_size(DType t) noexcept;
std::string_view to_string(LayerKind k) noexcept;
std::string_view to_string(DType t) noexcept;

struct LayerEntry {
  std::string name;
  LayerKind kind = LayerKind::Dense;
  std::size_t rows = 0;
  std::size_t cols = 0;
  DType dtype = DType::F32;
  std::string file;  // relative to the manifest directory
  std::optional<std::string> block_id;
  std::optional<std::string> pair_id;
};

struct CheckpointManifest {
  int version = kManifestVersion;
  std::vector<LayerEntry> layers;
};

/// Parses and schema-checks manifest JSON text. Throws ManifestError.
CheckpointManifest parse_manifest(std::string_view json_text);
std::string serialize_manifest(const CheckpointManifest& manifest);

/// Checks name uniqueness, LoRA pairing and adapter shapes. Throws
/// ManifestError, OrphanAdapter or ShapeMismatch.
void validate(const CheckpointManifest& manifest);

/// Un-merged tensor contents exactly as stored, widened to double.
struct RawTensor {
  LayerEntry entry;
  std::vector<double> values;
};

struct RawCheckpoint {
  CheckpointManifest manifest;
  std::vector<RawTensor> tensors;  // manifest order
};

std::vector<double> read_tensor_file(const std::filesystem::path& path, std::size_t rows,
                                     std::size_t cols, DType dtype);
void write_tensor_file(const std::filesystem::path& path, const std::vector<double>& values,
                       DType dtype);

RawCheckpoint load_raw(const std::filesystem::path& manifest_path);

/// Writes `manifest.json` plus every tensor file into `out_dir`. Writing back a
/// loaded checkpoint reproduces the original tensor bytes.
void write_checkpoint(const std::filesystem::path& out_dir, const RawCheckpoint& checkpoint);

/// W' = W + B * A for base W (d x k), B (d x r), A (r x k).
WeightMatrix merge_lora(const WeightMatrix& base, const WeightMatrix& b, const WeightMatrix& a);

/// Dense layers as stored and one merged matrix per LoRA triple, in manifest
/// order of the dense/base entries. Every matrix is validated finite.
std::vector<WeightMatrix> load_checkpoint(const std::filesystem::path& manifest_path);
std::vector<WeightMatrix> materialize(const RawCheckpoint& checkpoint);

}  // namespace htsr
