#include "upet/cli/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "upet/core/text.hpp"

namespace upet {
namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = text::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = text::trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(key, text::trim(t.substr(eq + 1)));
  }
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  try {
    if (key.rfind("model.", 0) == 0) {
      if (!model.set_entry(key.substr(6), value)) throw ConfigError("unknown configuration key '" + key + "'");
      model_overridden = true;
    } else if (key == "train.epochs") {
      train.epochs = static_cast<int>(text::parse_int(value, key));
    } else if (key == "train.batch_size") {
      train.batch_size = static_cast<int>(text::parse_int(value, key));
    } else if (key == "train.lr") {
      train.lr = text::parse_double(value, key);
    } else if (key == "train.seed") {
      train.seed = text::parse_uint(value, key);
    } else if (key == "phantom.dims") {
      phantom.dims = parse_dims(text::trim(value));
    } else if (key == "phantom.subjects") {
      phantom.subjects = static_cast<int>(text::parse_int(value, key));
    } else if (key == "phantom.sessions") {
      phantom.sessions_per_subject = static_cast<int>(text::parse_int(value, key));
    } else if (key == "phantom.class_probabilities") {
      const auto parts = text::split(value, ',');
      if (parts.size() != 3) throw ValueError(key + ": expected three comma-separated values (CN, MCI, AD)");
      for (int i = 0; i < 3; ++i) phantom.class_probabilities[i] = text::parse_double(parts[i], key);
    } else if (key == "phantom.paired_fraction") {
      phantom.paired_fraction = text::parse_double(value, key);
    } else if (key == "phantom.noise_sigma") {
      phantom.noise_sigma = text::parse_double(value, key);
    } else if (key == "phantom.mci_uptake") {
      phantom.mci_uptake_factor = text::parse_double(value, key);
    } else if (key == "phantom.ad_uptake") {
      phantom.ad_uptake_factor = text::parse_double(value, key);
    } else if (key == "phantom.seed") {
      phantom.seed = text::parse_uint(value, key);
    } else if (key == "split.train") {
      split_ratios.train = text::parse_double(value, key);
    } else if (key == "split.val") {
      split_ratios.val = text::parse_double(value, key);
    } else if (key == "split.test") {
      split_ratios.test = text::parse_double(value, key);
    } else if (key == "split.seed") {
      split_seed = text::parse_uint(value, key);
    } else if (key == "seed") {
      const auto s = text::parse_uint(value, key);
      train.seed = phantom.seed = split_seed = s;
    } else if (key == "data.dir") {
      data_dir = text::trim(value);
    } else if (key == "data.manifest") {
      manifest = text::trim(value);
    } else if (key == "data.splits") {
      splits = text::trim(value);
    } else if (key == "out.dir") {
      out_dir = text::trim(value);
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : parse_config_text(ss.str(), path.string())) {
    try {
      set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  set(text::trim(assignment.substr(0, eq)), text::trim(assignment.substr(eq + 1)));
}

std::filesystem::path RunConfig::manifest_path() const {
  return manifest.empty() ? data_dir / "manifest.csv" : manifest;
}

std::string RunConfig::dump() const {
  std::ostringstream s;
  for (const auto& [k, v] : model.entries()) s << "model." << k << " = " << v << "\n";
  s << "train.epochs = " << train.epochs << "\n";
  s << "train.batch_size = " << train.batch_size << "\n";
  s << "train.lr = " << g17(train.lr) << "\n";
  s << "train.seed = " << train.seed << "\n";
  s << "phantom.dims = " << phantom.dims.str() << "\n";
  s << "phantom.subjects = " << phantom.subjects << "\n";
  s << "phantom.sessions = " << phantom.sessions_per_subject << "\n";
  s << "phantom.class_probabilities = " << g17(phantom.class_probabilities[0]) << ","
    << g17(phantom.class_probabilities[1]) << "," << g17(phantom.class_probabilities[2]) << "\n";
  s << "phantom.paired_fraction = " << g17(phantom.paired_fraction) << "\n";
  s << "phantom.noise_sigma = " << g17(phantom.noise_sigma) << "\n";
  s << "phantom.mci_uptake = " << g17(phantom.mci_uptake_factor) << "\n";
  s << "phantom.ad_uptake = " << g17(phantom.ad_uptake_factor) << "\n";
  s << "phantom.seed = " << phantom.seed << "\n";
  s << "split.train = " << g17(split_ratios.train) << "\n";
  s << "split.val = " << g17(split_ratios.val) << "\n";
  s << "split.test = " << g17(split_ratios.test) << "\n";
  s << "split.seed = " << split_seed << "\n";
  s << "data.dir = " << data_dir.string() << "\n";
  if (!manifest.empty()) s << "data.manifest = " << manifest.string() << "\n";
  if (!splits.empty()) s << "data.splits = " << splits.string() << "\n";
  s << "out.dir = " << out_dir.string() << "\n";
  return s.str();
}

}  // namespace upet
