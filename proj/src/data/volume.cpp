#include "upet/data/volume.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "upet/core/errors.hpp"
#include "upet/core/text.hpp"

namespace upet {

static_assert(std::endian::native == std::endian::little, "payloads are written as native little-endian floats");

std::string to_string(Modality m) {
  switch (m) {
    case Modality::MRI:
      return "MRI";
    case Modality::PET:
      return "PET";
    case Modality::ATTN:
      return "ATTN";
  }
  return "?";
}

Modality parse_modality(const std::string& text) {
  if (text == "MRI") return Modality::MRI;
  if (text == "PET") return Modality::PET;
  if (text == "ATTN") return Modality::ATTN;
  throw FormatError("unknown modality '" + text + "' (expected MRI, PET or ATTN)");
}

std::string Dims::str() const {
  return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

Dims parse_dims(const std::string& text) {
  const auto parts = text::split(text, 'x');
  if (parts.size() != 1 && parts.size() != 3) throw ValueError("dims must be DxHxW or a single extent, got '" + text + "'");
  std::vector<Index> e;
  for (const auto& p : parts) {
    const auto v = text::parse_int(p, "dims");
    if (v <= 0) throw ValueError("dims must be positive, got '" + text + "'");
    e.push_back(v);
  }
  return parts.size() == 1 ? Dims{e[0], e[0], e[0]} : Dims{e[0], e[1], e[2]};
}

Volume::Volume(Dims dims, Modality modality, float fill, VoxelSize voxel)
    : dims_(dims), modality_(modality), voxel_(voxel) {
  check();
  values_.assign(static_cast<std::size_t>(dims_.numel()), fill);
}

Volume::Volume(Dims dims, Modality modality, std::vector<float> values, VoxelSize voxel)
    : dims_(dims), modality_(modality), voxel_(voxel), values_(std::move(values)) {
  check();
  if (static_cast<Index>(values_.size()) != dims_.numel()) {
    throw ShapeError("volume " + dims_.str() + " needs " + std::to_string(dims_.numel()) + " voxels, got " +
                     std::to_string(values_.size()));
  }
}

void Volume::check() const {
  if (dims_.d <= 0 || dims_.h <= 0 || dims_.w <= 0) throw ShapeError("volume dims must be positive, got " + dims_.str());
  for (double v : voxel_) {
    if (!(v > 0.0)) throw ValueError("voxel sizes must be strictly positive");
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path) {
  std::filesystem::path p = raw_path;
  p.replace_extension(".json");
  return p;
}

void write_volume(const Volume& volume, const std::filesystem::path& raw_path) {
  if (raw_path.has_parent_path()) std::filesystem::create_directories(raw_path.parent_path());
  nlohmann::ordered_json header;
  header["dims"] = {volume.dims().d, volume.dims().h, volume.dims().w};
  header["voxel_size_mm"] = volume.voxel_size_mm();
  header["modality"] = to_string(volume.modality());
  header["dtype"] = "f32le";

  std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
  if (!raw) throw IoError("cannot write " + raw_path.string());
  raw.write(reinterpret_cast<const char*>(volume.values().data()),
            static_cast<std::streamsize>(volume.values().size() * sizeof(float)));
  if (!raw) throw IoError("failed writing " + raw_path.string());

  const auto json_path = sidecar_path(raw_path);
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw IoError("cannot write " + json_path.string());
  js << header.dump(2) << "\n";
  if (!js) throw IoError("failed writing " + json_path.string());
}

Volume read_volume(const std::filesystem::path& raw_path) {
  const auto json_path = sidecar_path(raw_path);
  std::ifstream js(json_path);
  if (!js) throw IoError("cannot open volume header " + json_path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed volume header " + json_path.string() + ": " + e.what());
  }

  Dims dims;
  Volume::VoxelSize voxel = Volume::kDefaultVoxel;
  Modality modality = Modality::MRI;
  try {
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != "f32le") throw FormatError("unsupported dtype '" + dtype + "' in " + json_path.string());
    const auto d = header.at("dims").get<std::vector<Index>>();
    if (d.size() != 3) throw FormatError("dims must have three entries in " + json_path.string());
    dims = Dims{d[0], d[1], d[2]};
    if (header.contains("voxel_size_mm")) voxel = header.at("voxel_size_mm").get<Volume::VoxelSize>();
    modality = parse_modality(header.at("modality").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid volume header " + json_path.string() + ": " + e.what());
  }
  if (dims.d <= 0 || dims.h <= 0 || dims.w <= 0) throw FormatError("non-positive dims in " + json_path.string());

  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw IoError("cannot open volume payload " + raw_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  const auto expected = static_cast<std::size_t>(dims.numel()) * sizeof(float);
  if (bytes.size() != expected) {
    throw FormatError("payload size mismatch in " + raw_path.string() + ": header " + dims.str() + " needs " +
                      std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
  }
  std::vector<float> values(static_cast<std::size_t>(dims.numel()));
  std::memcpy(values.data(), bytes.data(), expected);
  try {
    return Volume(dims, modality, std::move(values), voxel);
  } catch (const Error& e) {
    throw FormatError(std::string("invalid volume header: ") + e.what());
  }
}

}  // namespace upet
