#include "safe/metrics.hpp"

#include "safe/errors.hpp"

#include <algorithm>
#include <memory>
#include <numeric>

namespace safe {

int argmax_row(const Matrix& probs, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < probs.cols(); ++c)
    if (probs(row, c) > probs(row, best)) best = c;
  return static_cast<int>(best);
}

double accuracy(const Matrix& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size() || labels.empty())
    throw ArgumentError("accuracy: prediction rows and labels disagree or are empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    hits += argmax_row(probs, static_cast<Eigen::Index>(i)) == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double binary_auroc(std::span<const double> scores, std::span<const bool> positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney with midranks; equals the trapezoidal area under the ROC.
  double positive_rank_sum = 0.0;
  std::size_t num_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        positive_rank_sum += midrank;
        ++num_pos;
      }
    }
    i = j;
  }
  const std::size_t num_neg = n - num_pos;
  if (num_pos == 0 || num_neg == 0) throw NumericError("AUROC undefined without both classes");
  const double p = static_cast<double>(num_pos);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(num_neg));
}

MacroAuroc macro_auroc(const Matrix& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size() || labels.empty())
    throw ArgumentError("macro_auroc: prediction rows and labels disagree or are empty");
  MacroAuroc out;
  std::vector<double> scores(labels.size());
  auto positive = std::make_unique<bool[]>(labels.size());
  double total = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs(static_cast<Eigen::Index>(i), c);
      positive[i] = labels[i] == c;
      pos += positive[i] ? 1 : 0;
    }
    if (pos == 0 || pos == labels.size()) {
      out.skipped_classes.push_back(static_cast<int>(c));
      continue;
    }
    total += binary_auroc(scores, std::span<const bool>(positive.get(), labels.size()));
    ++used;
  }
  if (used == 0) throw NumericError("macro_auroc: no class has both positives and negatives");
  out.value = total / used;
  return out;
}

double evaluate_metric(Metric metric, const Matrix& probs, std::span<const int> labels) {
  switch (metric) {
    case Metric::accuracy: return accuracy(probs, labels);
    case Metric::macro_auroc: return macro_auroc(probs, labels).value;
  }
  throw ArgumentError("unknown metric");
}

}  // namespace safe
