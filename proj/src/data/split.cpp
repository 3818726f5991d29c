#include "upet/data/split.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"
#include "upet/core/errors.hpp"

namespace upet {

std::string to_string(SplitName s) {
  switch (s) {
    case SplitName::Train:
      return "train";
    case SplitName::Val:
      return "val";
    case SplitName::Test:
      return "test";
  }
  return "?";
}

SplitName parse_split_name(const std::string& text) {
  if (text == "train") return SplitName::Train;
  if (text == "val") return SplitName::Val;
  if (text == "test") return SplitName::Test;
  throw ValueError("unknown split '" + text + "' (expected train, val or test)");
}

const std::vector<std::string>& SplitSpec::subjects(SplitName s) const {
  switch (s) {
    case SplitName::Train:
      return train;
    case SplitName::Val:
      return val;
    default:
      return test;
  }
}

std::optional<SplitName> SplitSpec::find(const std::string& subject_id) const {
  for (SplitName s : {SplitName::Train, SplitName::Val, SplitName::Test}) {
    const auto& ids = subjects(s);
    if (std::find(ids.begin(), ids.end(), subject_id) != ids.end()) return s;
  }
  return std::nullopt;
}

SplitSpec subject_level_split(std::vector<std::string> subject_ids, SplitRatios ratios, std::uint64_t seed) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  for (double x : r) {
    if (!(x >= 0.0) || x > 1.0) throw ValueError("split ratios must lie in [0, 1]");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ValueError("split ratios must sum to 1");

  std::sort(subject_ids.begin(), subject_ids.end());
  subject_ids.erase(std::unique(subject_ids.begin(), subject_ids.end()), subject_ids.end());
  const std::size_t n = subject_ids.size();
  if (n < 3) throw ValueError("need at least 3 subjects for a train/val/test split, got " + std::to_string(n));

  std::mt19937_64 rng(seed);
  std::shuffle(subject_ids.begin(), subject_ids.end(), rng);

  std::array<std::size_t, 3> counts{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(r[i] * static_cast<double>(n)));
    assigned += counts[i];
  }
  for (int i = 0; assigned < n; i = (i + 1) % 3) {
    ++counts[i];
    ++assigned;
  }

  SplitSpec spec;
  spec.ratios = ratios;
  spec.seed = seed;
  auto it = subject_ids.begin();
  spec.train.assign(it, it + counts[0]);
  it += counts[0];
  spec.val.assign(it, it + counts[1]);
  it += counts[1];
  spec.test.assign(it, it + counts[2]);
  return spec;
}

void write_splits(const SplitSpec& spec, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["ratios"] = {spec.ratios.train, spec.ratios.val, spec.ratios.test};
  j["train"] = spec.train;
  j["val"] = spec.val;
  j["test"] = spec.test;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write splits " + path.string());
  out << j.dump(2) << "\n";
}

SplitSpec read_splits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open splits " + path.string());
  SplitSpec spec;
  try {
    const auto j = nlohmann::json::parse(in);
    spec.seed = j.at("seed").get<std::uint64_t>();
    const auto r = j.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw FormatError("splits file needs three ratios");
    spec.ratios = SplitRatios{r[0], r[1], r[2]};
    spec.train = j.at("train").get<std::vector<std::string>>();
    spec.val = j.at("val").get<std::vector<std::string>>();
    spec.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed splits file " + path.string() + ": " + e.what());
  }
  std::set<std::string> seen;
  for (SplitName s : {SplitName::Train, SplitName::Val, SplitName::Test}) {
    for (const auto& id : spec.subjects(s)) {
      if (!seen.insert(id).second) throw FormatError("subject " + id + " appears in more than one split");
    }
  }
  return spec;
}

}  // namespace upet
