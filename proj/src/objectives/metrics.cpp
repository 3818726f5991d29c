#include "upet/objectives/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "upet/core/errors.hpp"

namespace upet {

namespace {

void check_pairs(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty()) throw ValueError("metrics need at least one sample");
  if (preds.size() != labels.size()) throw ValueError("predictions and labels differ in length");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] > 2 || labels[i] < 0 || labels[i] > 2) {
      throw ValueError("class index out of range at position " + std::to_string(i));
    }
  }
}

}  // namespace

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  check_pairs(preds, labels);
  long hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

Confusion confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels) {
  check_pairs(preds, labels);
  Confusion c{};
  for (std::size_t i = 0; i < preds.size(); ++i) ++c[labels[i]][preds[i]];
  return c;
}

double f1_macro(const std::vector<int>& preds, const std::vector<int>& labels) {
  const Confusion c = confusion_matrix(preds, labels);
  double total = 0.0;
  for (int k = 0; k < 3; ++k) {
    long predicted = 0, actual = 0;
    for (int j = 0; j < 3; ++j) {
      predicted += c[j][k];
      actual += c[k][j];
    }
    const long tp = c[k][k];
    // F1 = 2TP / (2TP + FP + FN) = 2TP / (predicted + actual).
    if (tp > 0) total += 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + actual);
  }
  return total / 3.0;
}

std::array<std::optional<double>, 3> auc_ovr(const std::vector<ClassScores>& scores, const std::vector<int>& labels) {
  if (scores.empty()) throw ValueError("auc_ovr needs at least one sample");
  if (scores.size() != labels.size()) throw ValueError("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::array<std::optional<double>, 3> out;
  std::vector<std::size_t> order(n);
  std::vector<double> rank(n);
  for (int k = 0; k < 3; ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a][k] < scores[b][k]; });
    // Mid-ranks (1-based) for tied groups.
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && scores[order[j + 1]][k] == scores[order[i]][k]) ++j;
      const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
      for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
      i = j + 1;
    }
    double pos_rank = 0.0;
    long pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || labels[i] > 2) throw ValueError("class index out of range");
      if (labels[i] == k) {
        pos_rank += rank[i];
        ++pos;
      }
    }
    const long neg = static_cast<long>(n) - pos;
    if (pos == 0 || neg == 0) continue;
    const double p = static_cast<double>(pos);
    out[k] = (pos_rank - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
  }
  return out;
}

double mae_volumes(const Volume& pred, const Volume& target) {
  if (!(pred.dims() == target.dims())) {
    throw ShapeError("mae_volumes: dims " + pred.dims().str() + " vs " + target.dims().str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.values().size(); ++i) {
    acc += std::abs(static_cast<double>(pred.values()[i]) - static_cast<double>(target.values()[i]));
  }
  return acc / static_cast<double>(pred.numel());
}

}  // namespace upet
