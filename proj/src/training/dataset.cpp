#include "upet/training/dataset.hpp"

#include <algorithm>
#include <set>

#include "upet/core/errors.hpp"
#include "upet/data/preprocess.hpp"

namespace upet {

std::size_t Dataset::paired_count() const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.pet.has_value(); }));
}

Sample load_sample(const Manifest& manifest, const SampleRecord& record, Dims input_shape) {
  Sample s;
  s.subject_id = record.subject_id;
  s.session_id = record.session_id;
  s.label = static_cast<int>(record.label);
  const Volume mri = read_volume(manifest.resolve(record.mri_path));
  if (mri.modality() != Modality::MRI) {
    throw FormatError(record.mri_path + ": expected an MRI volume, got " + to_string(mri.modality()));
  }
  auto norm = zscore_normalize(mri);
  s.degenerate_mri = norm.degenerate;
  s.mri = center_crop_or_pad(norm.volume, input_shape);
  if (record.paired()) {
    const Volume pet = read_volume(manifest.resolve(record.pet_path));
    if (pet.modality() != Modality::PET) {
      throw FormatError(record.pet_path + ": expected a PET volume, got " + to_string(pet.modality()));
    }
    s.pet = center_crop_or_pad(pet, input_shape);
  }
  return s;
}

void check_consistency(const Manifest& manifest, const SplitSpec& splits) {
  const auto listed = manifest.subjects();
  const std::set<std::string> in_manifest(listed.begin(), listed.end());
  for (SplitName n : {SplitName::Train, SplitName::Val, SplitName::Test}) {
    for (const auto& id : splits.subjects(n)) {
      if (!in_manifest.count(id)) {
        throw ValueError("split " + to_string(n) + " lists subject " + id + " which is not in the manifest");
      }
    }
  }
  for (const auto& id : in_manifest) {
    if (!splits.find(id)) throw ValueError("manifest subject " + id + " is not assigned to any split");
  }
}

Dataset load_split(const Manifest& manifest, const SplitSpec& splits, SplitName split, Dims input_shape) {
  check_consistency(manifest, splits);
  Dataset d;
  for (const auto& r : manifest.records) {
    if (splits.find(r.subject_id) == split) d.samples.push_back(load_sample(manifest, r, input_shape));
  }
  return d;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValueError("make_batch: empty batch");
  const Dims dims = data.samples.at(indices.front()).mri.dims();
  const Index n = static_cast<Index>(indices.size());
  const Index per = dims.numel();
  Batch b;
  b.mri = Tensor<float>(Shape{n, 1, dims.d, dims.h, dims.w});
  bool any = false;
  for (std::size_t i : indices) any = any || data.samples.at(i).pet.has_value();
  if (any) b.pet = Tensor<float>(Shape{n, 1, dims.d, dims.h, dims.w});
  for (Index k = 0; k < n; ++k) {
    const Sample& s = data.samples.at(indices[k]);
    if (!(s.mri.dims() == dims)) throw ShapeError("make_batch: samples have different extents");
    std::copy(s.mri.values().begin(), s.mri.values().end(), b.mri.ptr() + k * per);
    b.labels.push_back(s.label);
    b.pet_mask.push_back(s.pet.has_value());
    if (s.pet) std::copy(s.pet->values().begin(), s.pet->values().end(), b.pet.ptr() + k * per);
  }
  return b;
}

}  // namespace upet
