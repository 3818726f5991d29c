#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "upet/core/errors.hpp"
#include "upet/data/phantom.hpp"
#include "upet/data/split.hpp"
#include "upet/model/config.hpp"
#include "upet/training/trainer.hpp"

namespace upet {

/// Unknown key, malformed line or invalid value in a run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Everything a command needs, merged from defaults, an optional
/// `key = value` file, `--set key=value` overrides and dedicated flags (in
/// increasing precedence).
///
/// Keys: model.<architecture key> (see UPetConfig::entries), train.epochs,
/// train.batch_size, train.lr, train.seed, phantom.dims, phantom.subjects,
/// phantom.sessions, phantom.class_probabilities, phantom.paired_fraction,
/// phantom.noise_sigma, phantom.mci_uptake, phantom.ad_uptake, phantom.seed,
/// split.train, split.val, split.test, split.seed, data.dir, data.manifest,
/// data.splits, out.dir, and `seed` (sets train, phantom and split seeds).
struct RunConfig {
  UPetConfig model;
  TrainConfig train;
  PhantomConfig phantom;
  SplitRatios split_ratios;
  std::uint64_t split_seed = 0;
  std::filesystem::path data_dir = "data";
  std::filesystem::path manifest;  // empty = <data_dir>/manifest.csv
  std::filesystem::path splits;    // empty = created by train, <out_dir>/splits.json
  std::filesystem::path out_dir = "run";
  /// Set once any model.* key was given explicitly.
  bool model_overridden = false;

  void set(const std::string& key, const std::string& value);
  /// Applies every `key = value` line; `#` starts a comment.
  void load_file(const std::filesystem::path& path);
  void apply_override(const std::string& assignment);  // "key=value"

  std::filesystem::path manifest_path() const;
  /// Resolved configuration in the file grammar, one key per line.
  std::string dump() const;
};

/// (key, value) pairs of a config text, with line numbers in error messages.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& origin);

}  // namespace upet
