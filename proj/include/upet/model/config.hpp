#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "upet/data/volume.hpp"

namespace upet {

/// Architecture hyperparameters. Channels double per level:
/// channels(l) = base_channels * 2^(l-1) for l = 1..levels, level `levels`
/// being the bottleneck.
struct UPetConfig {
  int levels = 4;
  int base_channels = 8;
  Dims input_shape{32, 32, 32};
  int num_classes = 3;
  bool use_attention = true;
  bool use_pet_head = true;
  double lambda_l1 = 1.0;
  /// Auxiliary PET outputs at 1/2, 1/4, ... of the input resolution, one per
  /// level below the finest (the coarsest sits on the bottleneck).
  bool deep_supervision = true;
  /// Empty = default weights 2^-l for the aux output at 1/2^l resolution.
  std::vector<double> deep_supervision_weights;
  /// The pooled bottleneck contributes a third per-scale prediction.
  bool bottleneck_prediction = true;
  /// Aggregate per-scale predictions as log of the mean softmax instead of the mean of logits.
  bool aggregate_probabilities = false;

  /// Throws ValueError when an invariant is violated.
  void validate() const;

  int channels(int level) const;
  /// Number of auxiliary PET outputs (0 without PET head or deep supervision).
  int aux_count() const;
  /// Resolved weights, one per aux output.
  std::vector<double> aux_weights() const;

  /// Canonical text of every field that changes the parameter set or the
  /// forward function; loss weights are excluded.
  std::string canonical() const;

  /// Every field as (key, value) text, in a fixed order; set_entry() parses
  /// the same keys back. set_entry() returns false for an unknown key and
  /// throws ValueError for a malformed value.
  std::vector<std::pair<std::string, std::string>> entries() const;
  bool set_entry(const std::string& key, const std::string& value);
  /// FNV-1a 64 of canonical().
  std::uint64_t fingerprint() const;
};

std::string fingerprint_hex(std::uint64_t fp);

}  // namespace upet
