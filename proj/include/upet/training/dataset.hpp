#pragma once

#include <optional>
#include <string>
#include <vector>

#include "upet/core/tensor.hpp"
#include "upet/data/manifest.hpp"
#include "upet/data/split.hpp"
#include "upet/data/volume.hpp"

namespace upet {

/// One preprocessed study: z-scored MRI and (when paired) PET, both brought
/// to the model input extents by centered crop / zero padding. PET keeps its
/// intensity scale.
struct Sample {
  std::string subject_id;
  std::string session_id;
  int label = 0;
  Volume mri;
  std::optional<Volume> pet;
  bool degenerate_mri = false;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t paired_count() const;
};

/// Preprocesses one MRI / PET pair as it would be fed to the model.
Sample load_sample(const Manifest& manifest, const SampleRecord& record, Dims input_shape);

/// Loads every study of the subjects assigned to `split`. Every split subject
/// must appear in the manifest and every manifest subject in some split.
Dataset load_split(const Manifest& manifest, const SplitSpec& splits, SplitName split, Dims input_shape);

/// Throws ValueError when manifest and splits do not describe the same subjects.
void check_consistency(const Manifest& manifest, const SplitSpec& splits);

struct Batch {
  Tensor<float> mri;  // N x 1 x D x H x W
  Tensor<float> pet;  // N x 1 x D x H x W, zeros for unpaired rows; undefined if none is paired
  std::vector<int> labels;
  std::vector<bool> pet_mask;
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace upet
