#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "upet/objectives/metrics.hpp"

namespace upet {

struct EvalReport {
  long samples = 0;
  double accuracy = 0.0;
  double f1_macro = 0.0;
  std::array<std::optional<double>, 3> auc;  // by class index CN, MCI, AD
  std::optional<double> mae;                 // mean over paired volumes, absent without any
  long mae_volumes = 0;
  Confusion confusion{};

  std::optional<double> auc_cn() const { return auc[0]; }
  std::optional<double> auc_mci() const { return auc[1]; }
  std::optional<double> auc_ad() const { return auc[2]; }

  /// Ordered (key, value) pairs; undefined values render as "undefined".
  std::vector<std::pair<std::string, std::string>> entries() const;
  /// `key = value` lines.
  std::string to_key_value() const;
  /// CSV table with header metric,value and one row per metric.
  std::string to_table() const;
};

EvalReport parse_eval_report(const std::string& key_value_text);

/// `probabilities` are per-sample softmax scores; `volume_maes` one entry per
/// paired sample (may be empty).
EvalReport make_eval_report(const std::vector<int>& preds, const std::vector<int>& labels,
                            const std::vector<ClassScores>& probabilities, const std::vector<double>& volume_maes);

/// "%.17g" rendering used for every logged floating-point value.
std::string format_double(double v);
std::string format_optional(const std::optional<double>& v);

}  // namespace upet
