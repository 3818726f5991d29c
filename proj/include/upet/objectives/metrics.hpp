#pragma once

#include <array>
#include <optional>
#include <vector>

#include "upet/data/volume.hpp"

namespace upet {

using ClassScores = std::array<double, 3>;  // CN, MCI, AD
using Confusion = std::array<std::array<long, 3>, 3>;  // [true][predicted]

/// Throws ValueError on empty or mismatched input or out-of-range classes.
double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

/// Unweighted mean of per-class F1; a class with no true positives (including
/// one that is neither predicted nor present) contributes 0.
double f1_macro(const std::vector<int>& preds, const std::vector<int>& labels);

Confusion confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels);

/// One-vs-rest AUC per class index via the Mann-Whitney rank statistic with
/// ties credited 0.5. A class without positives or without negatives yields
/// nullopt ("undefined").
std::array<std::optional<double>, 3> auc_ovr(const std::vector<ClassScores>& scores, const std::vector<int>& labels);

/// Mean absolute voxel difference; throws ShapeError on differing dims.
double mae_volumes(const Volume& pred, const Volume& target);

}  // namespace upet
