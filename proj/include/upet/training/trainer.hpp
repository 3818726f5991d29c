#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "upet/core/errors.hpp"
#include "upet/model/upet_model.hpp"
#include "upet/objectives/eval_report.hpp"
#include "upet/objectives/metrics.hpp"
#include "upet/training/adam.hpp"
#include "upet/training/checkpoint.hpp"
#include "upet/training/dataset.hpp"

namespace upet {

struct TrainConfig {
  int epochs = 80;
  int batch_size = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Raised when a batch produces a NaN or infinite loss.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(int epoch, std::size_t batch, const std::string& what)
      : Error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

/// Loss components of one batch, in double.
struct StepLosses {
  double ce = 0.0;
  double l1_main = 0.0;
  double l1_aux_sum = 0.0;
  double total = 0.0;
  int paired = 0;
};

struct StepRecord {
  int epoch = 0;
  std::size_t batch = 0;
  std::size_t samples = 0;
  StepLosses losses;
};

/// Epoch means weight every batch by its sample count.
struct EpochRecord {
  int epoch = 0;
  double ce = 0.0;
  double l1_main = 0.0;
  double l1_aux_sum = 0.0;
  double total = 0.0;
  EvalReport validation;
};

struct TrainResult {
  Checkpoint best;  // highest validation macro F1, earliest epoch on ties
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
};

/// Forward + backward on one batch. Leaves every parameter with a gradient
/// buffer (zeros where the loss does not depend on it); does not update.
StepLosses compute_gradients(UPetModel<float>& model, const Batch& batch);

/// Order in which an epoch visits the training samples.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Trains `model` in place. Each epoch visits the training set in a seeded
/// order in batches of batch_size (the final short batch is kept), then
/// evaluates on `val`. Empty train or validation sets are rejected.
TrainResult train(UPetModel<float>& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Prediction {
  int label = 0;
  ClassScores probabilities{};
  std::optional<Volume> pet;  // synthesized PET, absent without PET head
};

std::vector<Prediction> predict(const UPetModel<float>& model, const Dataset& data, int batch_size = 4);

/// Classification metrics over every sample; MAE over the paired ones.
EvalReport evaluate(const UPetModel<float>& model, const Dataset& data, int batch_size = 4);

/// CSV with columns epoch, ce, l1_main, l1_aux_sum, total, val_accuracy,
/// val_f1_macro, val_auc_cn, val_auc_ad, val_auc_mci, val_mae.
void write_epoch_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path);

/// Raw CSV rows (header excluded) split into fields, for inspection.
std::vector<std::vector<std::string>> read_epoch_log(const std::filesystem::path& path);

}  // namespace upet
