#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "upet/core/errors.hpp"
#include "upet/core/tensor.hpp"
#include "upet/model/config.hpp"
#include "upet/model/upet_model.hpp"
#include "upet/objectives/eval_report.hpp"
#include "upet/training/adam.hpp"

// Checkpoint container:
//
//   UPET-CHECKPOINT 1
//   key = value            header: fingerprint, epoch, model.*, adam.*, val.*
//   ...
//   index <count>
//   <name> <d0>x<d1>x... <byte offset> <element count>
//   ...
//   payload <bytes>
//   <raw little-endian float32 data>
//
// Offsets are relative to the first payload byte. Parameters are stored as
// "param:<name>", Adam moments as "adam.m:<name>" and "adam.v:<name>".

namespace upet {

class CheckpointError : public Error {
 public:
  using Error::Error;
};
/// Unreadable header or index.
class CorruptIndexError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Payload shorter or longer than the index describes.
class PayloadSizeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Stored tensor shape differs from the model parameter.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Checkpoint built for a different architecture.
class FingerprintMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  UPetConfig config;
  std::uint64_t fingerprint = 0;
  int epoch = 0;
  std::vector<NamedTensor<float>> parameters;
  AdamState adam;
  std::optional<EvalReport> validation;
};

/// Snapshot (deep copy) of a model's parameters.
Checkpoint make_checkpoint(const UPetModel<float>& model, const AdamState& adam, int epoch,
                           std::optional<EvalReport> validation);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the checkpoint parameters into `model`. Throws
/// FingerprintMismatchError when the model is configured differently and
/// CheckpointShapeError for a stored tensor of the wrong shape.
void restore_parameters(const Checkpoint& ckpt, UPetModel<float>& model);

/// Builds a model from the stored configuration and loads its parameters.
UPetModel<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace upet
