#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "upet/core/shape.hpp"

namespace upet {

enum class Modality { MRI, PET, ATTN };

std::string to_string(Modality m);
Modality parse_modality(const std::string& text);

struct Dims {
  Index d = 0, h = 0, w = 0;

  Index numel() const { return d * h * w; }
  std::string str() const;
  bool operator==(const Dims&) const = default;
};

/// "DxHxW" or a single extent for a cube.
Dims parse_dims(const std::string& text);

/// 3D scalar field with voxel geometry, stored row-major as D,H,W in 32-bit floats.
class Volume {
 public:
  using VoxelSize = std::array<double, 3>;
  static constexpr VoxelSize kDefaultVoxel{1.5, 1.5, 1.5};

  Volume() = default;
  Volume(Dims dims, Modality modality, float fill = 0.0f, VoxelSize voxel = kDefaultVoxel);
  Volume(Dims dims, Modality modality, std::vector<float> values, VoxelSize voxel = kDefaultVoxel);

  const Dims& dims() const { return dims_; }
  Modality modality() const { return modality_; }
  void set_modality(Modality m) { modality_ = m; }
  const VoxelSize& voxel_size_mm() const { return voxel_; }
  Index numel() const { return dims_.numel(); }

  std::span<float> data() { return values_; }
  std::span<const float> data() const { return values_; }
  std::vector<float>& values() { return values_; }
  const std::vector<float>& values() const { return values_; }

  float& at(Index z, Index y, Index x) { return values_[static_cast<std::size_t>((z * dims_.h + y) * dims_.w + x)]; }
  float at(Index z, Index y, Index x) const {
    return values_[static_cast<std::size_t>((z * dims_.h + y) * dims_.w + x)];
  }

 private:
  void check() const;

  Dims dims_;
  Modality modality_ = Modality::MRI;
  VoxelSize voxel_ = kDefaultVoxel;
  std::vector<float> values_;
};

/// Sidecar header path for a raw payload: `x.raw` -> `x.json`.
std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

/// Writes the little-endian float payload to `raw_path` and the JSON header
/// (dims, voxel_size_mm, modality, dtype "f32le") next to it.
void write_volume(const Volume& volume, const std::filesystem::path& raw_path);

/// Reads a volume written by write_volume(). Throws FormatError on a
/// header/payload size mismatch, an unknown dtype or a malformed header and
/// IoError when a file cannot be opened.
Volume read_volume(const std::filesystem::path& raw_path);

}  // namespace upet
