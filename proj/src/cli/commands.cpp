#include "upet/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "upet/cli/grad_check_suite.hpp"
#include "upet/cli/run_config.hpp"
#include "upet/core/tape.hpp"
#include "upet/data/phantom.hpp"
#include "upet/data/preprocess.hpp"
#include "upet/training/checkpoint.hpp"
#include "upet/training/trainer.hpp"

namespace upet {
namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

class InvalidPhantomError : public Error {
 public:
  using Error::Error;
};

class GradCheckFailedError : public Error {
 public:
  using Error::Error;
};

// Options shared by the configurable commands.
struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "key = value configuration file");
  cmd->add_option("--set", c.overrides, "override one key (key=value); repeatable");
}

// Defaults, then file, then --set overrides; dedicated flags are applied by
// the caller afterwards.
RunConfig resolve(const Common& c) {
  RunConfig rc;
  if (!c.config_file.empty()) rc.load_file(c.config_file);
  for (const auto& o : c.overrides) rc.apply_override(o);
  return rc;
}

template <typename T>
void set_if(CLI::Option* opt, T& dst, const T& value) {
  if (opt != nullptr && opt->count() > 0) dst = value;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

Sample load_mri_sample(const std::filesystem::path& path, Dims input_shape) {
  const Volume mri = read_volume(path);
  if (mri.modality() != Modality::MRI) {
    throw FormatError(path.string() + ": expected an MRI volume, got " + to_string(mri.modality()));
  }
  Sample s;
  s.subject_id = path.stem().string();
  const auto norm = zscore_normalize(mri);
  s.mri = center_crop_or_pad(norm.volume, input_shape);
  s.degenerate_mri = norm.degenerate;
  return s;
}

// ---------------------------------------------------------------------------

int cmd_synth_data(const RunConfig& rc, std::ostream& out) {
  try {
    rc.phantom.validate();
  } catch (const ValueError& e) {
    throw InvalidPhantomError(std::string("invalid phantom configuration: ") + e.what());
  }
  const Manifest m = generate_phantom_dataset(rc.phantom, rc.data_dir);
  std::size_t paired = 0;
  for (const auto& r : m.records) paired += r.paired() ? 1 : 0;
  out << "wrote " << m.records.size() << " studies (" << paired << " with PET) for " << m.subjects().size()
      << " subjects to " << (rc.data_dir / "manifest.csv").string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc, bool quiet, std::ostream& out) {
  rc.model.validate();
  rc.train.validate();
  const Manifest man = read_manifest(rc.manifest_path());
  std::filesystem::create_directories(rc.out_dir);
  SplitSpec splits;
  if (rc.splits.empty()) {
    splits = subject_level_split(man.subjects(), rc.split_ratios, rc.split_seed);
  } else {
    splits = read_splits(rc.splits);
  }
  write_splits(splits, rc.out_dir / "splits.json");
  write_text(rc.out_dir / "config.txt", rc.dump());

  const Dataset tr = load_split(man, splits, SplitName::Train, rc.model.input_shape);
  const Dataset va = load_split(man, splits, SplitName::Val, rc.model.input_shape);
  out << "train " << tr.size() << " studies (" << tr.paired_count() << " paired), val " << va.size()
      << " studies (" << va.paired_count() << " paired)\n";

  UPetModel<float> model(rc.model, rc.train.seed);
  const auto result = train(model, tr, va, rc.train, [&](const EpochRecord& r) {
    if (quiet) return;
    out << "epoch " << r.epoch << " total " << format_double(r.total) << " ce " << format_double(r.ce)
        << " val_f1_macro " << format_double(r.validation.f1_macro) << " val_mae "
        << format_optional(r.validation.mae) << "\n";
    out.flush();
  });
  write_epoch_log(result.epochs, rc.out_dir / "epoch_log.csv");
  save_checkpoint(result.best, rc.out_dir / "best.ckpt");
  AdamState final_state;
  final_state.lr = rc.train.lr;
  save_checkpoint(make_checkpoint(model, final_state, rc.train.epochs, result.epochs.back().validation),
                  rc.out_dir / "final.ckpt");
  out << "best epoch " << result.best.epoch << " val_f1_macro " << format_double(result.best.validation->f1_macro)
      << " -> " << (rc.out_dir / "best.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint, const std::string& split_name,
             const std::string& report_path, const std::string& format, std::ostream& out) {
  const SplitName split = [&] {
    try {
      return parse_split_name(split_name);
    } catch (const ValueError& e) {
      throw UsageError(e.what());
    }
  }();
  if (format != "kv" && format != "table") throw UsageError("--format must be kv or table");
  if (rc.splits.empty()) throw UsageError("eval needs --splits (or data.splits)");
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  // An explicitly configured architecture must match the checkpoint.
  UPetModel<float> model = rc.model_overridden ? UPetModel<float>(rc.model, 0) : model_from_checkpoint(ckpt);
  if (rc.model_overridden) restore_parameters(ckpt, model);
  const Manifest man = read_manifest(rc.manifest_path());
  const SplitSpec splits = read_splits(rc.splits);
  const Dataset data = load_split(man, splits, split, ckpt.config.input_shape);
  if (data.empty()) throw ValueError("split " + split_name + " has no studies");
  const EvalReport report = evaluate(model, data, rc.train.batch_size);
  const std::string text = format == "kv" ? report.to_key_value() : report.to_table();
  out << text;
  if (!report_path.empty()) write_text(report_path, text);
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& mri_path, const std::string& pet_out,
                std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const UPetModel<float> model = model_from_checkpoint(ckpt);
  const Volume original = read_volume(mri_path);
  Dataset d;
  d.samples.push_back(load_mri_sample(mri_path, ckpt.config.input_shape));
  const Prediction p = predict(model, d, 1).front();
  out << "label = " << to_string(diagnosis_from_index(p.label)) << "\n";
  out << "p_cn = " << format_double(p.probabilities[0]) << "\n";
  out << "p_mci = " << format_double(p.probabilities[1]) << "\n";
  out << "p_ad = " << format_double(p.probabilities[2]) << "\n";
  if (p.pet) {
    // Back onto the grid of the input MRI.
    Volume pet = center_crop_or_pad(*p.pet, original.dims());
    pet = Volume(pet.dims(), Modality::PET, pet.values(), original.voxel_size_mm());
    write_volume(pet, pet_out);
    out << "pet = " << pet_out << "\n";
  } else {
    out << "pet = none (model has no PET head)\n";
  }
  return 0;
}

int cmd_export_attention(const std::string& checkpoint, const std::string& mri_path, const std::string& out_dir,
                         const std::string& selector, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (!ckpt.config.use_attention) {
    throw NoAttentionError("checkpoint " + checkpoint + " was trained without attention gates");
  }
  const UPetModel<float> model = model_from_checkpoint(ckpt);
  const Sample s = load_mri_sample(mri_path, ckpt.config.input_shape);
  Tensor<float> x(Shape{1, 1, s.mri.dims().d, s.mri.dims().h, s.mri.dims().w}, s.mri.values());
  const auto outputs = [&] {
    auto paused = Tape<float>::pause();
    return model.forward(x);
  }();
  const auto maps = export_attention_maps(outputs, ckpt.config, selector);
  std::filesystem::create_directories(out_dir);
  for (const auto& m : maps) {
    const auto base = std::filesystem::path(out_dir) / m.name;
    write_volume(m.volume, base.string() + ".raw");
    const auto slices = write_mid_slices(m.volume, base);
    out << m.name << " -> " << base.string() << ".raw";
    for (const auto& p : slices) out << " " << p.filename().string();
    out << "\n";
  }
  if (outputs.pet_pred.defined()) {
    const auto base = std::filesystem::path(out_dir) / "synthetic-pet";
    Volume pet(s.mri.dims(), Modality::PET,
               std::vector<float>(outputs.pet_pred.data().begin(), outputs.pet_pred.data().end()));
    write_volume(pet, base.string() + ".raw");
    write_mid_slices(pet, base);
    out << "synthetic-pet -> " << base.string() << ".raw\n";
  }
  return 0;
}

int cmd_grad_check(const GradCheckOptions& o, std::ostream& out) {
  bool ok = true;
  run_grad_check_suite(o, [&](const GradCheckRow& r) {
    ok = ok && r.passed;
    out << format_grad_check_row(r) << "\n";
    out.flush();
  });
  if (!ok) throw GradCheckFailedError("gradient check failed (tolerance " + format_double(o.tolerance) + ")");
  out << "all gradient checks passed\n";
  return 0;
}

ExitCode classify(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return ExitCode::Usage;
  if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::Config;
  if (dynamic_cast<const InvalidPhantomError*>(&e)) return ExitCode::InvalidPhantom;
  if (dynamic_cast<const GradCheckFailedError*>(&e)) return ExitCode::GradCheckFailed;
  if (dynamic_cast<const PrecisionRefusedError*>(&e)) return ExitCode::PrecisionRefused;
  if (dynamic_cast<const FingerprintMismatchError*>(&e)) return ExitCode::Fingerprint;
  if (dynamic_cast<const CheckpointError*>(&e)) return ExitCode::Checkpoint;
  if (dynamic_cast<const NoAttentionError*>(&e)) return ExitCode::NoAttention;
  if (dynamic_cast<const NonFiniteLossError*>(&e)) return ExitCode::NonFiniteLoss;
  if (dynamic_cast<const IoError*>(&e)) return ExitCode::Io;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return ExitCode::Io;
  if (dynamic_cast<const FormatError*>(&e)) return ExitCode::DataFormat;
  if (dynamic_cast<const ValueError*>(&e)) return ExitCode::Config;
  return ExitCode::Internal;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

std::vector<std::filesystem::path> write_mid_slices(const Volume& v, const std::filesystem::path& prefix, float lo,
                                                    float hi) {
  if (!(hi > lo)) throw ValueError("write_mid_slices: empty intensity range");
  const Dims d = v.dims();
  auto gray = [&](float x) {
    const float t = std::clamp((x - lo) / (hi - lo), 0.0f, 1.0f);
    return static_cast<unsigned char>(std::lround(t * 255.0f));
  };
  struct Plane {
    const char* name;
    Index rows, cols;
    std::function<float(Index, Index)> at;
  };
  const std::vector<Plane> planes{
      {"axial", d.h, d.w, [&](Index r, Index c) { return v.at(d.d / 2, r, c); }},
      {"coronal", d.d, d.w, [&](Index r, Index c) { return v.at(r, d.h / 2, c); }},
      {"sagittal", d.d, d.h, [&](Index r, Index c) { return v.at(r, c, d.w / 2); }},
  };
  std::vector<std::filesystem::path> written;
  for (const auto& p : planes) {
    const std::filesystem::path path = prefix.string() + "_" + p.name + ".pgm";
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << p.cols << " " << p.rows << "\n255\n";
    for (Index r = 0; r < p.rows; ++r) {
      for (Index c = 0; c < p.cols; ++c) out.put(static_cast<char>(gray(p.at(r, c))));
    }
    if (!out) throw IoError("failed writing " + path.string());
    written.push_back(path);
  }
  return written;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"U-PET: multi-task MRI classification and PET synthesis on phantom data", "upet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "upet 1.0");

  Common synth_c, train_c, eval_c;
  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a phantom MRI/PET dataset and manifest");
  add_common(synth, synth_c);
  std::string synth_out, synth_dims;
  int synth_subjects = 0, synth_sessions = 0;
  std::uint64_t synth_seed = 0;
  double synth_paired = 0, synth_noise = 0;
  auto* o_synth_out = synth->add_option("--out", synth_out, "output directory (data.dir)");
  auto* o_synth_subjects = synth->add_option("--subjects", synth_subjects, "number of subjects");
  auto* o_synth_sessions = synth->add_option("--sessions", synth_sessions, "sessions per subject");
  auto* o_synth_dims = synth->add_option("--dims", synth_dims, "volume extents DxHxW");
  auto* o_synth_seed = synth->add_option("--seed", synth_seed, "generator seed");
  auto* o_synth_paired = synth->add_option("--paired-fraction", synth_paired, "fraction of studies with PET");
  auto* o_synth_noise = synth->add_option("--noise", synth_noise, "MRI noise standard deviation");

  // train
  auto* tr = app.add_subcommand("train", "train a model and keep the best-validation checkpoint");
  add_common(tr, train_c);
  std::string tr_data, tr_manifest, tr_splits, tr_out;
  int tr_epochs = 0, tr_batch = 0, tr_levels = 0, tr_base = 0;
  double tr_lr = 0;
  std::uint64_t tr_seed = 0;
  bool no_attention = false, no_pet_head = false, quiet = false;
  auto* o_tr_data = tr->add_option("--data", tr_data, "dataset directory holding manifest.csv");
  auto* o_tr_manifest = tr->add_option("--manifest", tr_manifest, "manifest path");
  auto* o_tr_splits = tr->add_option("--splits", tr_splits, "existing splits file (default: create one)");
  auto* o_tr_out = tr->add_option("--out", tr_out, "run directory");
  auto* o_tr_epochs = tr->add_option("--epochs", tr_epochs, "epochs");
  auto* o_tr_batch = tr->add_option("--batch-size", tr_batch, "batch size");
  auto* o_tr_lr = tr->add_option("--lr", tr_lr, "learning rate");
  auto* o_tr_seed = tr->add_option("--seed", tr_seed, "seed for initialization, shuffling and splitting");
  auto* o_tr_levels = tr->add_option("--levels", tr_levels, "encoder levels");
  auto* o_tr_base = tr->add_option("--base", tr_base, "channels at the finest level");
  tr->add_flag("--no-attention", no_attention, "plain skips and ungated classification features");
  tr->add_flag("--no-pet-head", no_pet_head, "classification only");
  tr->add_flag("--quiet", quiet, "no per-epoch output");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  add_common(ev, eval_c);
  std::string ev_ckpt, ev_data, ev_manifest, ev_splits, ev_split = "test", ev_report, ev_format = "kv";
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  auto* o_ev_data = ev->add_option("--data", ev_data, "dataset directory holding manifest.csv");
  auto* o_ev_manifest = ev->add_option("--manifest", ev_manifest, "manifest path");
  auto* o_ev_splits = ev->add_option("--splits", ev_splits, "splits file");
  ev->add_option("--split", ev_split, "train, val or test");
  ev->add_option("--report", ev_report, "also write the report to this file");
  ev->add_option("--format", ev_format, "kv or table");

  // predict
  auto* pr = app.add_subcommand("predict", "classify one MRI and synthesize its PET");
  std::string pr_ckpt, pr_mri, pr_out = "predicted_pet.raw";
  pr->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
  pr->add_option("--mri", pr_mri, "MRI volume (.raw with .json sidecar)")->required();
  pr->add_option("--out", pr_out, "synthesized PET output path");

  // export-attention
  auto* ex = app.add_subcommand("export-attention", "write attention volumes and mid-slice graymaps");
  std::string ex_ckpt, ex_mri, ex_out = "attention", ex_select = "all";
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint file")->required();
  ex->add_option("--mri", ex_mri, "MRI volume")->required();
  ex->add_option("--out", ex_out, "output directory");
  ex->add_option("--select", ex_select, "all, skip, cls or a gate name such as skip-1");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every differentiable operator");
  GradCheckOptions gco;
  bool skip_model = false;
  gc->add_option("--precision", gco.precision, "f64 (f32 is refused)");
  gc->add_option("--inject-fault", gco.inject_fault, "test fixture: corrupt one operator (sigmoid)");
  gc->add_option("--instances", gco.instances, "random instances per operator");
  gc->add_flag("--skip-model", skip_model, "operators only, without the end-to-end model");

  std::vector<std::string> argv_store{"upet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "upet: " << one_line(e.what()) << "\n";
    return static_cast<int>(ExitCode::Usage);
  }

  try {
    if (synth->parsed()) {
      RunConfig rc = resolve(synth_c);
      set_if(o_synth_out, rc.data_dir, std::filesystem::path(synth_out));
      set_if(o_synth_subjects, rc.phantom.subjects, synth_subjects);
      set_if(o_synth_sessions, rc.phantom.sessions_per_subject, synth_sessions);
      if (o_synth_dims->count() > 0) {
        try {
          rc.phantom.dims = parse_dims(synth_dims);
        } catch (const ValueError& e) {
          throw InvalidPhantomError(e.what());
        }
      }
      set_if(o_synth_seed, rc.phantom.seed, synth_seed);
      set_if(o_synth_paired, rc.phantom.paired_fraction, synth_paired);
      set_if(o_synth_noise, rc.phantom.noise_sigma, synth_noise);
      return cmd_synth_data(rc, out);
    }
    if (tr->parsed()) {
      RunConfig rc = resolve(train_c);
      set_if(o_tr_data, rc.data_dir, std::filesystem::path(tr_data));
      set_if(o_tr_manifest, rc.manifest, std::filesystem::path(tr_manifest));
      set_if(o_tr_splits, rc.splits, std::filesystem::path(tr_splits));
      set_if(o_tr_out, rc.out_dir, std::filesystem::path(tr_out));
      set_if(o_tr_epochs, rc.train.epochs, tr_epochs);
      set_if(o_tr_batch, rc.train.batch_size, tr_batch);
      set_if(o_tr_lr, rc.train.lr, tr_lr);
      if (o_tr_seed->count() > 0) rc.train.seed = rc.split_seed = tr_seed;
      set_if(o_tr_levels, rc.model.levels, tr_levels);
      set_if(o_tr_base, rc.model.base_channels, tr_base);
      if (no_attention) rc.model.use_attention = false;
      if (no_pet_head) rc.model.use_pet_head = false;
      try {
        rc.model.validate();
        rc.train.validate();
      } catch (const ValueError& e) {
        throw ConfigError(e.what());
      }
      return cmd_train(rc, quiet, out);
    }
    if (ev->parsed()) {
      RunConfig rc = resolve(eval_c);
      set_if(o_ev_data, rc.data_dir, std::filesystem::path(ev_data));
      set_if(o_ev_manifest, rc.manifest, std::filesystem::path(ev_manifest));
      set_if(o_ev_splits, rc.splits, std::filesystem::path(ev_splits));
      return cmd_eval(rc, ev_ckpt, ev_split, ev_report, ev_format, out);
    }
    if (pr->parsed()) return cmd_predict(pr_ckpt, pr_mri, pr_out, out);
    if (ex->parsed()) return cmd_export_attention(ex_ckpt, ex_mri, ex_out, ex_select, out);
    if (gc->parsed()) {
      gco.include_model = !skip_model;
      return cmd_grad_check(gco, out);
    }
  } catch (const std::exception& e) {
    const ExitCode code = classify(e);
    err << "upet: error: " << one_line(e.what()) << "\n";
    return static_cast<int>(code);
  }
  err << "upet: no command given\n";
  return static_cast<int>(ExitCode::Usage);
}

}  // namespace upet
