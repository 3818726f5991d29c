#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "test_support.hpp"
#include "upet/data/phantom.hpp"
#include "upet/training/adam.hpp"
#include "upet/training/checkpoint.hpp"
#include "upet/training/dataset.hpp"
#include "upet/training/trainer.hpp"

using namespace upet;
using upet::testing::bitwise_equal;
using upet::testing::TempDir;

namespace {

std::vector<NamedTensor<float>> single_param(float value, bool with_grad, float g = 0.0f) {
  Tensor<float> t(Shape{1}, value);
  if (with_grad) t.ensure_grad()[0] = g;
  return {{"theta", t}};
}

UPetConfig tiny_config() {
  UPetConfig c;
  c.levels = 3;
  c.base_channels = 2;
  c.input_shape = {16, 16, 16};
  return c;
}

Dataset random_dataset(int n, std::uint64_t seed, bool all_paired = false) {
  Rng rng(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::uniform_real_distribution<float> ud(0.0f, 1.0f);
  Dataset d;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.subject_id = subject_id(i);
    s.session_id = session_id(0);
    s.label = i % 3;
    s.mri = Volume({16, 16, 16}, Modality::MRI);
    for (auto& v : s.mri.values()) v = nd(rng) + 0.5f * static_cast<float>(s.label);
    if (all_paired || i % 2 == 0) {
      s.pet = Volume({16, 16, 16}, Modality::PET);
      for (auto& v : s.pet->values()) v = ud(rng);
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::vector<Tensor<float>> snapshot(const UPetModel<float>& m) {
  std::vector<Tensor<float>> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.clone());
  return out;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto params = single_param(0.75f, true, 0.0f);
  AdamState s;
  adam_step(params, s);
  adam_step(params, s);
  EXPECT_EQ(params[0].tensor.data()[0], 0.75f);
  EXPECT_EQ(s.t, 2);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  for (double g : {1e-3, 1e-2, 0.02, -0.5, 3.0, -100.0}) {
    auto params = single_param(0.0f, true, static_cast<float>(g));
    AdamState s;
    adam_step(params, s);
    const double gf = static_cast<float>(g);
    // At t = 1 the bias corrections undo the (1 - beta) factors exactly.
    const double expected = -s.lr * gf / (std::abs(gf) + s.eps);
    EXPECT_NEAR(params[0].tensor.data()[0], expected, 1e-7 * std::abs(expected)) << g;
    if (std::abs(g) >= 2e-2) {
      EXPECT_NEAR(std::abs(params[0].tensor.data()[0]), s.lr, 1e-6 * s.lr) << g;
    }
  }
}

TEST(Adam, TwoStepsMatchHandUnrolledRecurrence) {
  auto params = single_param(0.25f, true, 0.5f);
  AdamState s;
  adam_step(params, s);
  adam_step(params, s);
  // m1 = 0.05, v1 = 2.5e-4; m2 = 0.095, v2 = 4.9975e-4; both bias-corrected
  // moments equal (0.5, 0.25) at t = 1 and t = 2.
  const double step = 1e-3 * 0.5 / (0.5 + 1e-8);
  const double expected = static_cast<float>(static_cast<float>(0.25 - step) - step);
  EXPECT_NEAR(params[0].tensor.data()[0], expected, 1e-9);
  EXPECT_NEAR(s.m[0][0], 0.095, 1e-8);
  EXPECT_NEAR(s.v[0][0], 4.9975e-4, 1e-10);
  EXPECT_EQ(s.t, 2);
}

TEST(Adam, MissingGradientRejected) {
  auto params = single_param(1.0f, false);
  AdamState s;
  EXPECT_THROW(adam_step(params, s), ValueError);
  EXPECT_EQ(s.t, 0);
  auto other = single_param(1.0f, true);
  other[0].name = "other";
  adam_step(other, s);
  auto renamed = single_param(1.0f, true);
  EXPECT_THROW(adam_step(renamed, s), ValueError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir("ckpt");
  UPetModel<float> m(tiny_config(), 4);
  const Dataset d = random_dataset(3, 1);
  AdamState adam;
  compute_gradients(m, make_batch(d, {0, 1, 2}));
  adam_step(m.parameters(), adam);
  const EvalReport report = evaluate(m, d);
  save_checkpoint(make_checkpoint(m, adam, 7, report), dir / "a.ckpt");

  const Checkpoint c = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(c.epoch, 7);
  EXPECT_EQ(c.fingerprint, m.config().fingerprint());
  EXPECT_EQ(c.adam.t, 1);
  ASSERT_EQ(c.adam.names.size(), m.parameters().size());
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    EXPECT_EQ(c.adam.m[i], adam.m[i]);
    EXPECT_EQ(c.adam.v[i], adam.v[i]);
  }
  ASSERT_TRUE(c.validation.has_value());
  EXPECT_EQ(c.validation->f1_macro, report.f1_macro);
  EXPECT_EQ(c.validation->mae, report.mae);

  const UPetModel<float> r = model_from_checkpoint(c);
  for (const auto& p : m.parameters()) EXPECT_TRUE(bitwise_equal(p.tensor, r.parameter(p.name))) << p.name;
  const Batch b = make_batch(d, {0, 1, 2});
  const auto before = m.forward(b.mri);
  const auto after = r.forward(b.mri);
  EXPECT_TRUE(bitwise_equal(before.class_logits, after.class_logits));
  EXPECT_TRUE(bitwise_equal(before.pet_pred, after.pet_pred));
}

TEST(Checkpoint, PayloadSizeErrors) {
  TempDir dir("ckpt");
  const UPetModel<float> m(tiny_config(), 4);
  save_checkpoint(make_checkpoint(m, AdamState{}, 0, std::nullopt), dir / "a.ckpt");
  const auto size = std::filesystem::file_size(dir / "a.ckpt");
  std::filesystem::copy_file(dir / "a.ckpt", dir / "b.ckpt");
  std::filesystem::resize_file(dir / "a.ckpt", size - 4);
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), PayloadSizeError);
  {
    std::ofstream out(dir / "b.ckpt", std::ios::app | std::ios::binary);
    out << "xx";
  }
  EXPECT_THROW(load_checkpoint(dir / "b.ckpt"), PayloadSizeError);
}

TEST(Checkpoint, CorruptIndexErrors) {
  TempDir dir("ckpt");
  const UPetModel<float> m(tiny_config(), 4);
  save_checkpoint(make_checkpoint(m, AdamState{}, 0, std::nullopt), dir / "a.ckpt");
  std::string bytes;
  {
    std::ifstream in(dir / "a.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write_variant = [&](const std::string& from, const std::string& to) {
    std::string copy = bytes;
    const auto pos = copy.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    copy.replace(pos, from.size(), to);
    std::ofstream out(dir / "c.ckpt", std::ios::binary | std::ios::trunc);
    out << copy;
  };
  write_variant("UPET-CHECKPOINT 1", "UPET-CHECKPOINT 9");
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), CorruptIndexError);
  write_variant("param:enc1.conv1.weight 2x1x3x3x3 0 54", "param:enc1.conv1.weight 2x1x3x3x3 4 54");
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), CorruptIndexError);
  write_variant("param:enc1.conv1.weight 2x1x3x3x3 0 54", "param:enc1.conv1.weight 2x1x3x3x3 zero 54");
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), CorruptIndexError);
  write_variant("model.levels = 3", "model.levels = 4");
  EXPECT_THROW(load_checkpoint(dir / "c.ckpt"), CorruptIndexError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Checkpoint, ShapeAndFingerprintErrors) {
  const UPetModel<float> m(tiny_config(), 4);
  Checkpoint c = make_checkpoint(m, AdamState{}, 0, std::nullopt);
  UPetConfig other = tiny_config();
  other.use_attention = false;
  UPetModel<float> different(other, 4);
  EXPECT_THROW(restore_parameters(c, different), FingerprintMismatchError);
  c.parameters[0].tensor = Tensor<float>(Shape{1, 1, 3, 3, 3});
  UPetModel<float> same(tiny_config(), 5);
  EXPECT_THROW(restore_parameters(c, same), CheckpointShapeError);
}

TEST(DatasetLoading, PhantomSplitIsPreprocessed) {
  TempDir dir("data");
  PhantomConfig pc;
  pc.dims = {20, 18, 16};
  pc.subjects = 9;
  pc.sessions_per_subject = 2;
  pc.seed = 3;
  const Manifest man = generate_phantom_dataset(pc, dir.path());
  const SplitSpec sp = subject_level_split(man.subjects(), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 3);
  std::size_t total = 0;
  for (SplitName s : {SplitName::Train, SplitName::Val, SplitName::Test}) {
    const Dataset d = load_split(man, sp, s, {16, 16, 16});
    EXPECT_EQ(d.size(), 2 * sp.subjects(s).size());
    total += d.size();
    for (const auto& smp : d.samples) {
      EXPECT_EQ(smp.mri.dims(), (Dims{16, 16, 16}));
      EXPECT_EQ(sp.find(smp.subject_id), s);
      if (smp.pet) {
        EXPECT_EQ(smp.pet->dims(), (Dims{16, 16, 16}));
      }
    }
  }
  EXPECT_EQ(total, man.records.size());

  // Normalization happens before cropping: the full-size volume has zero mean.
  const Sample s = load_sample(man, man.records[0], {20, 18, 16});
  double mean = 0.0;
  for (float v : s.mri.values()) mean += v;
  EXPECT_NEAR(mean / static_cast<double>(s.mri.numel()), 0.0, 1e-5);
  EXPECT_EQ(s.pet.has_value(), man.records[0].paired());
}

TEST(DatasetLoading, InconsistentSplitsRejected) {
  TempDir dir("data");
  PhantomConfig pc;
  pc.dims = {16, 16, 16};
  pc.subjects = 6;
  const Manifest man = generate_phantom_dataset(pc, dir.path());
  SplitSpec sp = subject_level_split(man.subjects(), {0.5, 0.25, 0.25}, 1);
  SplitSpec extra = sp;
  extra.test.push_back("sub-9999");
  EXPECT_THROW(load_split(man, extra, SplitName::Train, {16, 16, 16}), ValueError);
  SplitSpec missing = sp;
  missing.test.clear();
  EXPECT_THROW(load_split(man, missing, SplitName::Train, {16, 16, 16}), ValueError);
}

TEST(DatasetLoading, BatchLayoutAndMask) {
  const Dataset d = random_dataset(4, 2);
  const Batch b = make_batch(d, {3, 0, 1});
  EXPECT_EQ(b.mri.shape(), (Shape{3, 1, 16, 16, 16}));
  EXPECT_EQ(b.labels, (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(b.pet_mask, (std::vector<bool>{false, true, false}));
  EXPECT_EQ(b.mri.data()[0], d.samples[3].mri.values()[0]);
  EXPECT_EQ(b.pet.data()[4096], d.samples[0].pet->values()[0]);
  EXPECT_EQ(b.pet.data()[0], 0.0f);
  EXPECT_FALSE(make_batch(d, {1, 3}).pet.defined());
}

TEST(Trainer, EpochOrderIsSeededPermutation) {
  const auto a = epoch_order(10, 5, 1);
  EXPECT_EQ(a, epoch_order(10, 5, 1));
  EXPECT_NE(a, epoch_order(10, 5, 2));
  EXPECT_NE(a, epoch_order(10, 6, 1));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Trainer, ZeroLearningRateIsIdentity) {
  UPetModel<float> m(tiny_config(), 1);
  const auto before = snapshot(m);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.lr = 0.0;
  train(m, random_dataset(5, 1), random_dataset(3, 2), tc);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(before[i], m.parameters()[i].tensor)) << m.parameters()[i].name;
  }
}

TEST(Trainer, ShortFinalBatchIsKept) {
  UPetModel<float> m(tiny_config(), 1);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  const auto r = train(m, random_dataset(5, 1), random_dataset(3, 2), tc);
  ASSERT_EQ(r.steps.size(), 6u);
  EXPECT_EQ(r.steps[2].samples, 1u);
  EXPECT_EQ(r.steps[2].batch, 2u);
  EXPECT_EQ(r.steps[3].epoch, 2);
}

TEST(Trainer, GradientAccumulationEquivalence) {
  const Dataset d = random_dataset(4, 3, true);
  UPetModel<float> full(tiny_config(), 2);
  UPetModel<float> halves(tiny_config(), 2);

  compute_gradients(full, make_batch(d, {0, 1, 2, 3}));
  AdamState a;
  adam_step(full.parameters(), a);

  std::vector<std::vector<float>> g1, avg;
  compute_gradients(halves, make_batch(d, {0, 1}));
  for (const auto& p : halves.parameters()) g1.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  compute_gradients(halves, make_batch(d, {2, 3}));
  std::vector<std::span<const float>> spans;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const auto g2 = halves.parameters()[i].tensor.grad();
    avg.emplace_back(g1[i].size());
    for (std::size_t k = 0; k < g1[i].size(); ++k) avg[i][k] = 0.5f * (g1[i][k] + g2[k]);
  }
  for (const auto& v : avg) spans.emplace_back(v);
  AdamState b;
  adam_step(halves.parameters(), spans, b);

  double worst = 0.0;
  for (std::size_t i = 0; i < full.parameters().size(); ++i) {
    const auto x = full.parameters()[i].tensor.data();
    const auto y = halves.parameters()[i].tensor.data();
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, static_cast<double>(std::abs(x[k] - y[k])));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Trainer, NonFiniteLossReportsBatch) {
  Dataset d = random_dataset(6, 4);
  d.samples[4].mri.values()[17] = std::numeric_limits<float>::quiet_NaN();
  const auto order = epoch_order(6, 0, 1);
  const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), 4u) - order.begin());
  UPetModel<float> m(tiny_config(), 1);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 2;
  try {
    train(m, d, random_dataset(2, 5), tc);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_EQ(e.batch(), pos / 2);
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_NE(std::string(e.what()).find("batch " + std::to_string(pos / 2)), std::string::npos);
  }
}

TEST(Trainer, EmptySplitsRejected) {
  UPetModel<float> m(tiny_config(), 1);
  EXPECT_THROW(train(m, Dataset{}, random_dataset(2, 1), TrainConfig{}), ValueError);
  EXPECT_THROW(train(m, random_dataset(2, 1), Dataset{}, TrainConfig{}), ValueError);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(train(m, random_dataset(2, 1), random_dataset(2, 1), bad), ValueError);
}

TEST(Trainer, DeterministicSelectionAndLog) {
  TempDir dir("train");
  const Dataset tr = random_dataset(6, 6), va = random_dataset(6, 7);
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 3;
  tc.lr = 1e-2;
  tc.seed = 11;
  UPetModel<float> m1(tiny_config(), 11), m2(tiny_config(), 11);
  const auto r1 = train(m1, tr, va, tc);
  const auto r2 = train(m2, tr, va, tc);
  ASSERT_EQ(r1.epochs.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    EXPECT_EQ(r1.epochs[e].total, r2.epochs[e].total);
    EXPECT_EQ(r1.epochs[e].ce, r2.epochs[e].ce);
    EXPECT_EQ(r1.epochs[e].validation.f1_macro, r2.epochs[e].validation.f1_macro);
  }
  int best_epoch = 0;
  double best = -1.0;
  for (const auto& e : r1.epochs) {
    if (e.validation.f1_macro > best) {
      best = e.validation.f1_macro;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(r1.best.validation->f1_macro, best);
  EXPECT_EQ(r1.best.epoch, best_epoch);

  write_epoch_log(r1.epochs, dir / "log.csv");
  const auto rows = read_epoch_log(dir / "log.csv");
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    ASSERT_EQ(rows[e].size(), 11u);
    EXPECT_EQ(std::stod(rows[e][4]), r1.epochs[e].total);
    EXPECT_EQ(std::stod(rows[e][1]), r1.epochs[e].ce);
  }
}

TEST(Trainer, WithoutPetHeadTotalIsCe) {
  UPetConfig c = tiny_config();
  c.use_pet_head = false;
  UPetModel<float> m(c, 3);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  const auto r = train(m, random_dataset(4, 8), random_dataset(2, 9), tc);
  for (const auto& e : r.epochs) {
    EXPECT_EQ(e.total, e.ce);
    EXPECT_EQ(e.l1_main, 0.0);
    EXPECT_FALSE(e.validation.mae.has_value());
  }
}

TEST(Trainer, PredictionsAreDistributions) {
  const UPetModel<float> m(tiny_config(), 3);
  const Dataset d = random_dataset(3, 10);
  for (const auto& p : predict(m, d, 2)) {
    EXPECT_NEAR(p.probabilities[0] + p.probabilities[1] + p.probabilities[2], 1.0, 1e-6);
    ASSERT_TRUE(p.pet.has_value());
    EXPECT_EQ(p.pet->dims(), (Dims{16, 16, 16}));
  }
}
