#include "upet/objectives/eval_report.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "upet/core/errors.hpp"
#include "upet/data/manifest.hpp"

namespace upet {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

std::vector<std::pair<std::string, std::string>> EvalReport::entries() const {
  std::vector<std::pair<std::string, std::string>> e{
      {"samples", std::to_string(samples)},
      {"accuracy", format_double(accuracy)},
      {"f1_macro", format_double(f1_macro)},
      {"auc_cn", format_optional(auc_cn())},
      {"auc_ad", format_optional(auc_ad())},
      {"auc_mci", format_optional(auc_mci())},
      {"mae", format_optional(mae)},
      {"mae_volumes", std::to_string(mae_volumes)},
  };
  for (int t = 0; t < 3; ++t) {
    for (int p = 0; p < 3; ++p) {
      e.emplace_back("confusion_" + to_string(diagnosis_from_index(t)) + "_" + to_string(diagnosis_from_index(p)),
                     std::to_string(confusion[t][p]));
    }
  }
  return e;
}

std::string EvalReport::to_key_value() const {
  std::string s;
  for (const auto& [k, v] : entries()) s += k + " = " + v + "\n";
  return s;
}

std::string EvalReport::to_table() const {
  std::string s = "metric,value\n";
  for (const auto& [k, v] : entries()) s += k + "," + v + "\n";
  return s;
}

EvalReport parse_eval_report(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("evaluation report lacks key " + key);
    return it->second;
  };
  auto opt = [&](const std::string& key) -> std::optional<double> {
    const std::string& v = get(key);
    if (v == "undefined") return std::nullopt;
    return std::stod(v);
  };
  EvalReport r;
  try {
    r.samples = std::stol(get("samples"));
    r.accuracy = std::stod(get("accuracy"));
    r.f1_macro = std::stod(get("f1_macro"));
    r.auc[0] = opt("auc_cn");
    r.auc[1] = opt("auc_mci");
    r.auc[2] = opt("auc_ad");
    r.mae = opt("mae");
    r.mae_volumes = std::stol(get("mae_volumes"));
    for (int t = 0; t < 3; ++t)
      for (int p = 0; p < 3; ++p)
        r.confusion[t][p] = std::stol(
            get("confusion_" + to_string(diagnosis_from_index(t)) + "_" + to_string(diagnosis_from_index(p))));
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("malformed evaluation report value: ") + e.what());
  }
  return r;
}

EvalReport make_eval_report(const std::vector<int>& preds, const std::vector<int>& labels,
                            const std::vector<ClassScores>& probabilities, const std::vector<double>& volume_maes) {
  EvalReport r;
  r.samples = static_cast<long>(preds.size());
  r.accuracy = accuracy(preds, labels);
  r.f1_macro = f1_macro(preds, labels);
  r.confusion = confusion_matrix(preds, labels);
  r.auc = auc_ovr(probabilities, labels);
  if (!volume_maes.empty()) {
    double s = 0.0;
    for (double m : volume_maes) s += m;
    r.mae = s / static_cast<double>(volume_maes.size());
    r.mae_volumes = static_cast<long>(volume_maes.size());
  }
  return r;
}

}  // namespace upet
