// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset; the exit status is non-zero if any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_support.hpp"
#include "upet/cli/commands.hpp"
#include "upet/cli/grad_check_suite.hpp"
#include "upet/core/tape.hpp"
#include "upet/data/phantom.hpp"
#include "upet/data/split.hpp"
#include "upet/model/attention_gate.hpp"
#include "upet/objectives/losses.hpp"
#include "upet/objectives/metrics.hpp"
#include "upet/training/adam.hpp"
#include "upet/training/checkpoint.hpp"
#include "upet/training/trainer.hpp"

using namespace upet;
using upet::testing::TempDir;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

int pick(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

Dataset load_all(const Manifest& manifest, Dims input_shape) {
  Dataset ds;
  for (const auto& rec : manifest.records) ds.samples.push_back(load_sample(manifest, rec, input_shape));
  return ds;
}

int run_quiet(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  return run_cli(args, out, err);
}

// 1. Every operator row and the end-to-end tiny model agree with central
// differences in 64-bit mode, within five minutes.
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto rows = run_grad_check_suite(GradCheckOptions{});
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> failed;
  bool has_model = false;
  for (const auto& r : rows) {
    if (!r.passed) failed.push_back(r.name);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    has_model = has_model || r.name == "upet_tiny_end_to_end";
  }
  std::ostringstream d;
  d << rows.size() << " rows, worst " << worst_name << " rel " << worst << ", " << fixed(elapsed, 1) << " s";
  for (const auto& f : failed) d << ", failed " << f;
  return {failed.empty() && has_model && elapsed < 300.0, d.str()};
}

// 2. Gate output against a scalar-loop evaluation on 50 random instances;
// psi = 0 gives alpha = 0.5 exactly.
Outcome attention_gate_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index cx = 1 + static_cast<Index>(pick(rng, 0, 5));
    const Index cg = 1 + static_cast<Index>(pick(rng, 0, 7));
    const Index n = 1 + static_cast<Index>(pick(rng, 0, 1));
    const Index side = 2 * (1 + static_cast<Index>(pick(rng, 0, 2)));
    const Index half = side / 2;
    const auto x = upet::testing::random_tensor<float>(Shape{n, cx, side, side, side}, rng, -2.0, 2.0);
    const auto g = upet::testing::random_tensor<float>(Shape{n, cg, half, half, half}, rng, -2.0, 2.0);
    const Index f = gate_inner_channels(cx);
    AttentionGateParams<float> p;
    p.w_x = upet::testing::random_tensor<float>(Shape{f, cx, 1, 1, 1}, rng);
    p.w_g = upet::testing::random_tensor<float>(Shape{f, cg, 1, 1, 1}, rng);
    p.b_g = upet::testing::random_tensor<float>(Shape{f}, rng);
    p.psi = upet::testing::random_tensor<float>(Shape{1, f, 1, 1, 1}, rng);
    p.b_psi = upet::testing::random_tensor<float>(Shape{1}, rng);
    const auto out = attention_gate(x, g, p);
    const auto [x_hat, alpha] = oracle::attention_gate(x, g, p.w_x, p.w_g, p.b_g, p.psi, p.b_psi);
    for (std::size_t i = 0; i < alpha.size(); ++i) worst = std::max(worst, std::abs(out.alpha.data()[i] - alpha[i]));
    for (std::size_t i = 0; i < x_hat.size(); ++i) worst = std::max(worst, std::abs(out.x_hat.data()[i] - x_hat[i]));
  }

  const auto x = upet::testing::random_tensor<float>(Shape{2, 4, 8, 8, 8}, rng);
  const auto g = upet::testing::random_tensor<float>(Shape{2, 8, 4, 4, 4}, rng);
  auto p = AttentionGateParams<float>::zeros(4, 8);
  p.w_x = upet::testing::random_tensor<float>(p.w_x.shape(), rng);
  p.w_g = upet::testing::random_tensor<float>(p.w_g.shape(), rng);
  p.b_g = upet::testing::random_tensor<float>(p.b_g.shape(), rng);
  const auto out = attention_gate(x, g, p);
  bool half = true;
  for (float a : out.alpha.data()) half = half && a == 0.5f;

  return {worst <= 1e-5 && half, "50 instances, max abs deviation " + sci(worst) +
                                     (half ? ", psi=0 gives alpha=0.5" : ", psi=0 deviates from 0.5")};
}

// 3. Metrics against brute-force references on 200 random sets; the worked
// example gives 7/9.
Outcome metric_oracles() {
  Rng rng(77);
  double worst = 0.0;
  int auc_checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(pick(rng, 0, 29));
    std::vector<int> labels(n), preds(n);
    std::vector<ClassScores> scores(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(pick(rng, 0, 2));
      preds[i] = static_cast<int>(pick(rng, 0, 2));
      // Coarse scores so that ties occur.
      for (int k = 0; k < 3; ++k) scores[i][k] = static_cast<double>(pick(rng, 0, 6)) / 6.0;
    }
    worst = std::max(worst, std::abs(accuracy(preds, labels) - oracle::accuracy(preds, labels)));
    worst = std::max(worst, std::abs(f1_macro(preds, labels) - oracle::f1_macro(preds, labels)));
    const auto auc = auc_ovr(scores, labels);
    for (int k = 0; k < 3; ++k) {
      std::vector<double> col(n);
      std::vector<bool> pos(n);
      for (int i = 0; i < n; ++i) {
        col[i] = scores[i][k];
        pos[i] = labels[i] == k;
      }
      const double ref = oracle::auc_pairs(col, pos);
      if (std::isnan(ref) != !auc[k].has_value()) return {false, "AUC definedness differs on set " + std::to_string(trial)};
      if (auc[k]) {
        worst = std::max(worst, std::abs(*auc[k] - ref));
        ++auc_checked;
      }
    }
  }
  const double worked = f1_macro({0, 1, 2, 1}, {0, 0, 2, 1});
  const bool exact = std::abs(worked - 7.0 / 9.0) <= 1e-15;
  return {worst <= 1e-9 && exact, "200 sets (" + std::to_string(auc_checked) + " defined AUCs), max deviation " +
                                      sci(worst) + ", worked example f1_macro " + format_double(worked)};
}

// 4. Eight paired phantoms, 200 steps of batch 4 at lr 1e-3 on the default
// model: the total loss over the training set falls by at least 90% and
// training accuracy reaches 1.0 for >= 4 of 5 seeds.
double training_set_loss(const UPetModel<float>& model, const Dataset& data, double* ce) {
  double total = 0.0;
  *ce = 0.0;
  for (std::size_t first = 0; first < data.size(); first += 4) {
    std::vector<std::size_t> rows;
    for (std::size_t i = first; i < std::min(first + 4, data.size()); ++i) rows.push_back(i);
    const Batch batch = make_batch(data, rows);
    const auto loss = combined_loss(model.forward(batch.mri), batch.labels, batch.pet, batch.pet_mask, model.config());
    const double share = static_cast<double>(rows.size()) / static_cast<double>(data.size());
    total += share * loss.total.item();
    *ce += share * loss.ce.item();
  }
  return total;
}

Outcome overfitting() {
  const auto t0 = Clock::now();
  TempDir dir("overfit");
  const UPetConfig cfg;
  int successes = 0;
  std::ostringstream d;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PhantomConfig pc;
    pc.subjects = 8;
    pc.paired_fraction = 1.0;
    pc.seed = seed;
    const Manifest manifest = generate_phantom_dataset(pc, dir / ("seed" + std::to_string(seed)));
    const Dataset data = load_all(manifest, cfg.input_shape);

    UPetModel<float> model(cfg, seed);
    double ce_start = 0.0, ce_end = 0.0;
    const double start = training_set_loss(model, data, &ce_start);
    AdamState adam;
    adam.lr = 1e-3;
    const int steps = 200, batch_size = 4;
    const int per_epoch = static_cast<int>(data.size()) / batch_size;
    for (int step = 0; step < steps; ++step) {
      const auto order = epoch_order(data.size(), seed, step / per_epoch);
      const auto first = order.begin() + (step % per_epoch) * batch_size;
      compute_gradients(model, make_batch(data, std::vector<std::size_t>(first, first + batch_size)));
      adam_step(model.parameters(), adam);
    }
    const double end = training_set_loss(model, data, &ce_end);
    const double drop = 1.0 - end / start;
    const double acc = evaluate(model, data).accuracy;
    const bool ok = drop >= 0.90 && acc == 1.0;
    successes += ok ? 1 : 0;
    d << "seed " << seed << " total " << fixed(start, 3) << "->" << fixed(end, 3) << " (ce " << fixed(ce_start, 3)
      << "->" << fixed(ce_end, 3) << ") drop " << fixed(100.0 * drop, 1) << "% acc " << fixed(acc, 3)
      << (ok ? "" : " (miss)") << "; ";
  }
  d << successes << "/5 seeds, " << fixed(seconds_since(t0), 0) << " s";
  return {successes >= 4, d.str()};
}

// 5. 120 train / 40 val phantom subjects, noise 0.03, full model, at most 20
// epochs: validation macro F1 > 0.60 and MAE < 0.10 for >= 4 of 5 seeds.
Outcome generalization() {
  const auto t0 = Clock::now();
  TempDir dir("general");
  int successes = 0;
  std::ostringstream d;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PhantomConfig pc;
    pc.subjects = 200;
    pc.noise_sigma = 0.03;
    pc.seed = seed;
    const Manifest manifest = generate_phantom_dataset(pc, dir / ("seed" + std::to_string(seed)));
    const SplitSpec splits = subject_level_split(manifest.subjects(), {0.6, 0.2, 0.2}, seed);
    const UPetConfig cfg;
    const Dataset train_set = load_split(manifest, splits, SplitName::Train, cfg.input_shape);
    const Dataset val_set = load_split(manifest, splits, SplitName::Val, cfg.input_shape);

    UPetModel<float> model(cfg, seed);
    TrainConfig tc;
    tc.epochs = 20;
    tc.seed = seed;
    const TrainResult result = train(model, train_set, val_set, tc);
    const EvalReport& best = *result.best.validation;
    const double mae = best.mae.value_or(std::numeric_limits<double>::infinity());
    const bool ok = best.f1_macro > 0.60 && mae < 0.10;
    successes += ok ? 1 : 0;
    d << "seed " << seed << " (" << train_set.size() << "/" << val_set.size() << ") epoch " << result.best.epoch
      << " f1 " << fixed(best.f1_macro, 3) << " mae " << fixed(mae, 4) << (ok ? "" : " (miss)") << "; ";
    std::filesystem::remove_all(dir / ("seed" + std::to_string(seed)));
  }
  d << successes << "/5 seeds, " << fixed(seconds_since(t0), 0) << " s";
  return {successes >= 4, d.str()};
}

// 6. --no-pet-head logs total identical to ce; --no-attention has no gate
// parameters and export-attention reports its dedicated exit code.
Outcome ablations() {
  TempDir dir("ablation");
  const std::string data = (dir / "data").string();
  if (run_quiet({"synth-data", "--out", data, "--subjects", "8", "--dims", "16", "--seed", "3"}) != 0) {
    return {false, "synth-data failed"};
  }
  const std::vector<std::string> common = {"--data", data, "--levels", "3", "--base", "4", "--epochs", "3",
                                           "--batch-size", "2", "--set", "model.input_shape=16", "--set",
                                           "split.train=0.5", "--set", "split.val=0.25", "--set", "split.test=0.25",
                                           "--quiet"};
  auto with = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  if (run_quiet(with({"train", "--out", (dir / "nopet").string(), "--no-pet-head"})) != 0) {
    return {false, "--no-pet-head training failed"};
  }
  // Compare the logged text itself: equal columns mean bit-identical doubles.
  std::ifstream log(dir / "nopet" / "epoch_log.csv");
  std::string line;
  std::getline(log, line);
  int rows = 0;
  bool equal = true;
  while (std::getline(log, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    equal = equal && cells.size() > 4 && cells[1] == cells[4];
    ++rows;
  }

  UPetConfig no_att;
  no_att.use_attention = false;
  const UPetModel<float> plain(no_att, 0);
  const bool zero_att = plain.attention_parameter_count() == 0 &&
                        plain.describe().find("attention_parameters 0\n") != std::string::npos;

  if (run_quiet(with({"train", "--out", (dir / "noatt").string(), "--no-attention"})) != 0) {
    return {false, "--no-attention training failed"};
  }
  const Manifest manifest = read_manifest(dir / "data" / "manifest.csv");
  const int code = run_quiet({"export-attention", "--checkpoint", (dir / "noatt" / "best.ckpt").string(), "--mri",
                              manifest.resolve(manifest.records.front().mri_path).string()});
  const bool exit_ok = code == static_cast<int>(ExitCode::NoAttention);
  return {rows == 3 && equal && zero_att && exit_ok,
          std::to_string(rows) + " logged epochs, total==ce " + (equal ? "bitwise" : "DIFFERS") +
              ", attention parameters " + std::to_string(plain.attention_parameter_count()) +
              ", export-attention exit " + std::to_string(code)};
}

// 7. The L1 terms of a mixed paired/unpaired batch equal those of the paired
// rows alone.
Outcome masked_multitask() {
  UPetConfig cfg;
  cfg.levels = 3;
  cfg.base_channels = 4;
  cfg.input_shape = {16, 16, 16};
  const UPetModel<float> model(cfg, 11);
  Rng rng(12);
  const Index vox = 16 * 16 * 16;
  const auto mri = upet::testing::random_tensor<float>(Shape{4, 1, 16, 16, 16}, rng);
  auto pet = upet::testing::random_tensor<float>(Shape{4, 1, 16, 16, 16}, rng, 0.0, 1.0);
  const std::vector<bool> mask{true, false, true, false};
  for (Index i = 0; i < vox; ++i) pet.data()[1 * vox + i] = pet.data()[3 * vox + i] = 0.0f;
  const std::vector<int> labels{0, 1, 2, 1};

  Tensor<float> sub_mri(Shape{2, 1, 16, 16, 16}), sub_pet(Shape{2, 1, 16, 16, 16});
  for (Index r = 0; r < 2; ++r) {
    std::copy_n(mri.ptr() + 2 * r * vox, vox, sub_mri.ptr() + r * vox);
    std::copy_n(pet.ptr() + 2 * r * vox, vox, sub_pet.ptr() + r * vox);
  }
  const auto mixed = combined_loss(model.forward(mri), labels, pet, mask, cfg);
  const auto subset = combined_loss(model.forward(sub_mri), {0, 2}, sub_pet, {true, true}, cfg);
  double worst = std::abs(mixed.l1_main.item() - subset.l1_main.item());
  for (std::size_t l = 0; l < mixed.l1_aux.size(); ++l) {
    worst = std::max(worst, static_cast<double>(std::abs(mixed.l1_aux[l].item() - subset.l1_aux[l].item())));
  }
  const bool ok = worst <= 1e-6 && mixed.paired_count == 2 && mixed.l1_aux.size() == 2;
  return {ok, "l1_main " + std::to_string(mixed.l1_main.item()) + " vs " + std::to_string(subset.l1_main.item()) +
                  ", max deviation over main and " + std::to_string(mixed.l1_aux.size()) + " aux terms " +
                  sci(worst)};
}

// 8. Same seed, same epoch-1 loss bit for bit; save -> load -> forward is
// bitwise identical.
Outcome determinism() {
  TempDir dir("determinism");
  PhantomConfig pc;
  pc.subjects = 6;
  pc.dims = {16, 16, 16};
  pc.seed = 8;
  const Manifest manifest = generate_phantom_dataset(pc, dir / "data");
  UPetConfig cfg;
  cfg.levels = 3;
  cfg.base_channels = 4;
  cfg.input_shape = {16, 16, 16};
  const Dataset data = load_all(manifest, cfg.input_shape);
  TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 8;
  tc.batch_size = 4;
  auto run_once = [&] {
    UPetModel<float> model(cfg, 8);
    return train(model, data, data, tc).epochs.front();
  };
  const EpochRecord a = run_once();
  const EpochRecord b = run_once();
  auto same = [](double x, double y) { return std::memcmp(&x, &y, sizeof(double)) == 0; };
  const bool loss_ok = same(a.total, b.total) && same(a.ce, b.ce) && same(a.l1_main, b.l1_main);

  UPetModel<float> model(cfg, 8);
  AdamState adam;
  compute_gradients(model, make_batch(data, {0, 1, 2}));
  adam_step(model.parameters(), adam);
  const Batch batch = make_batch(data, {3, 4, 5});
  const auto before = model.forward(batch.mri);
  save_checkpoint(make_checkpoint(model, adam, 1, std::nullopt), dir / "m.ckpt");
  const UPetModel<float> loaded = model_from_checkpoint(load_checkpoint(dir / "m.ckpt"));
  const auto after = loaded.forward(batch.mri);
  const bool fwd_ok = upet::testing::bitwise_equal(before.class_logits, after.class_logits) &&
                      upet::testing::bitwise_equal(before.pet_pred, after.pet_pred);
  return {loss_ok && fwd_ok, "epoch-1 total " + format_double(a.total) + (loss_ok ? " reproduced" : " DIFFERS") +
                                 ", reloaded forward " + (fwd_ok ? "bitwise identical" : "DIFFERS")};
}

// 9. Subject-level splits are pairwise-disjoint covers on 1000 random instances.
Outcome split_hygiene() {
  Rng rng(99);
  for (int trial = 0; trial < 1000;) {
    const int n = pick(rng, 3, 80);
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
      ids.push_back("sub-" + std::to_string(pick(rng, 0, 1000)));
      if (pick(rng, 0, 3) == 0) ids.push_back(ids.back());  // duplicates from multiple sessions
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    if (std::set<std::string>(ids.begin(), ids.end()).size() < 3) continue;
    const double a = static_cast<double>(pick(rng, 0, 100));
    const double b = static_cast<double>(pick(rng, 0, 100));
    const double c = static_cast<double>(pick(rng, 1, 100));
    const SplitRatios ratios{a / (a + b + c), b / (a + b + c), c / (a + b + c)};
    const SplitSpec spec = subject_level_split(ids, ratios, static_cast<std::uint64_t>(pick(rng, 0, 1 << 30)));
    const std::set<std::string> expected(ids.begin(), ids.end());
    std::map<std::string, int> seen;
    for (const auto* part : {&spec.train, &spec.val, &spec.test}) {
      for (const auto& id : *part) ++seen[id];
    }
    for (const auto& [id, count] : seen) {
      if (count != 1) return {false, "instance " + std::to_string(trial) + ": " + id + " assigned " +
                                         std::to_string(count) + " times"};
    }
    if (seen.size() != expected.size() ||
        !std::equal(expected.begin(), expected.end(), seen.begin(), [](const auto& e, const auto& s) {
          return e == s.first;
        })) {
      return {false, "instance " + std::to_string(trial) + " does not cover the subject set"};
    }
    ++trial;
  }
  return {true, "1000 instances, every pair of parts disjoint and union equal to the subject set"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"attention gate oracle", attention_gate_oracle},
      {"metric oracles", metric_oracles},
      {"overfitting demonstration", overfitting},
      {"generalization smoke test", generalization},
      {"ablation contract", ablations},
      {"masked multi-task contract", masked_multitask},
      {"determinism and persistence", determinism},
      {"data hygiene", split_hygiene},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::cout << "CRITERION " << number << " " << (o.passed ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
