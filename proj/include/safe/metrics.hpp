#pragma once

#include "safe/types.hpp"

#include <span>
#include <vector>

namespace safe {

/// Fraction of rows whose argmax equals the label. Ties go to the lowest
/// class index.
double accuracy(const Matrix& probs, std::span<const int> labels);

/// Row argmax with lowest-index tie-break.
int argmax_row(const Matrix& probs, Eigen::Index row);

/// One-vs-rest AUROC of `scores` against `positive` (trapezoidal rule over
/// the score ranking; tied scores count half, i.e. midrank).
double binary_auroc(std::span<const double> scores, std::span<const bool> positive);

struct MacroAuroc {
  double value = 0.0;
  /// Classes with no positive or no negative sample in `labels`.
  std::vector<int> skipped_classes;
};

/// Unweighted mean of per-class one-vs-rest AUROC over the classes that
/// have both positives and negatives. Throws NumericError if none do.
MacroAuroc macro_auroc(const Matrix& probs, std::span<const int> labels);

double evaluate_metric(Metric metric, const Matrix& probs, std::span<const int> labels);

}  // namespace safe
