#include "upet/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "upet/core/ops.hpp"
#include "upet/core/random.hpp"
#include "upet/core/tape.hpp"
#include "upet/core/text.hpp"
#include "upet/objectives/losses.hpp"

namespace upet {

namespace {

constexpr const char* kLogHeader =
    "epoch,ce,l1_main,l1_aux_sum,total,val_accuracy,val_f1_macro,val_auc_cn,val_auc_ad,val_auc_mci,val_mae";

// Stream key separating training shuffles from every other use of the seed.
constexpr std::uint64_t kShuffleStream = 0x73687566;

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("epochs must be >= 1");
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValueError("lr must be finite and >= 0");
}

StepLosses compute_gradients(UPetModel<float>& model, const Batch& batch) {
  model.set_requires_grad(true);
  for (auto& p : model.parameters()) {
    auto g = p.tensor.ensure_grad();
    std::fill(g.begin(), g.end(), 0.0f);
  }
  Tape<float> tape;
  auto scope = tape.activate();
  const auto out = model.forward(batch.mri);
  const auto loss = combined_loss(out, batch.labels, batch.pet, batch.pet_mask, model.config());
  StepLosses s;
  s.ce = loss.ce.item();
  s.l1_main = loss.l1_main.item();
  s.l1_aux_sum = loss.l1_aux_sum();
  s.total = loss.total.item();
  s.paired = loss.paired_count;
  if (!std::isfinite(s.total)) return s;  // caller reports it with the batch index
  tape.backward(loss.total);
  return s;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng({seed, kShuffleStream, static_cast<std::uint64_t>(epoch)});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainResult train(UPetModel<float>& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  model.config().validate();
  if (train_set.empty()) throw ValueError("training split is empty");
  if (val_set.empty()) throw ValueError("validation split is empty");

  AdamState adam;
  adam.lr = cfg.lr;
  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const Batch batch = make_batch(train_set, idx);
      const StepLosses s = compute_gradients(model, batch);
      if (!std::isfinite(s.total)) {
        throw NonFiniteLossError(epoch, batch_index,
                                 "non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index) + " (total = " + format_double(s.total) + ")");
      }
      adam_step(model.parameters(), adam);
      const double w = static_cast<double>(idx.size());
      rec.ce += w * s.ce;
      rec.l1_main += w * s.l1_main;
      rec.l1_aux_sum += w * s.l1_aux_sum;
      rec.total += w * s.total;
      result.steps.push_back({epoch, batch_index, idx.size(), s});
      ++batch_index;
    }
    const double n = static_cast<double>(order.size());
    rec.ce /= n;
    rec.l1_main /= n;
    rec.l1_aux_sum /= n;
    rec.total /= n;
    model.zero_grad();
    rec.validation = evaluate(model, val_set, cfg.batch_size);
    if (result.epochs.empty() || rec.validation.f1_macro > result.best.validation->f1_macro) {
      result.best = make_checkpoint(model, adam, epoch, rec.validation);
    }
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::vector<Prediction> predict(const UPetModel<float>& model, const Dataset& data, int batch_size) {
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  auto paused = Tape<float>::pause();
  std::vector<Prediction> preds;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(data, idx);
    const auto out = model.forward(b.mri);
    const Tensor<float> probs = softmax(out.class_logits);
    const Dims dims = data.samples[start].mri.dims();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Prediction p;
      for (int c = 0; c < 3; ++c) p.probabilities[c] = probs.data()[k * 3 + c];
      // First maximum wins, matching a lowest-index tie rule.
      p.label = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin());
      if (out.pet_pred.defined()) {
        const auto per = static_cast<std::size_t>(dims.numel());
        std::vector<float> v(out.pet_pred.ptr() + k * per, out.pet_pred.ptr() + (k + 1) * per);
        p.pet = Volume(dims, Modality::PET, std::move(v));
      }
      preds.push_back(std::move(p));
    }
  }
  return preds;
}

EvalReport evaluate(const UPetModel<float>& model, const Dataset& data, int batch_size) {
  if (data.empty()) throw ValueError("cannot evaluate on an empty split");
  const auto preds = predict(model, data, batch_size);
  std::vector<int> labels, predicted;
  std::vector<ClassScores> scores;
  std::vector<double> maes;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    labels.push_back(data.samples[i].label);
    predicted.push_back(preds[i].label);
    scores.push_back(preds[i].probabilities);
    if (data.samples[i].pet && preds[i].pet) maes.push_back(mae_volumes(*preds[i].pet, *data.samples[i].pet));
  }
  return make_eval_report(predicted, labels, scores, maes);
}

void write_epoch_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write epoch log " + path.string());
  out << kLogHeader << "\n";
  for (const auto& r : log) {
    const auto& v = r.validation;
    out << r.epoch << ',' << format_double(r.ce) << ',' << format_double(r.l1_main) << ','
        << format_double(r.l1_aux_sum) << ',' << format_double(r.total) << ',' << format_double(v.accuracy) << ','
        << format_double(v.f1_macro) << ',' << format_optional(v.auc_cn()) << ',' << format_optional(v.auc_ad())
        << ',' << format_optional(v.auc_mci()) << ',' << format_optional(v.mae) << "\n";
  }
  if (!out) throw IoError("failed writing epoch log " + path.string());
}

std::vector<std::vector<std::string>> read_epoch_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open epoch log " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kLogHeader) throw FormatError("epoch log header mismatch in " + path.string());
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(text::split(line, ','));
  }
  return rows;
}

}  // namespace upet
