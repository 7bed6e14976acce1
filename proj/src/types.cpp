#include "safe/types.hpp"

#include "safe/errors.hpp"

#include <string>

namespace safe {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::macro_auroc: return "macro_auroc";
  }
  return "?";
}

Metric metric_from_string(std::string_view s) {
  if (s == "accuracy") return Metric::accuracy;
  if (s == "macro_auroc") return Metric::macro_auroc;
  throw ArgumentError("unknown metric '" + std::string(s) + "'");
}

void softmax_rows(Matrix& scores) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

}  // namespace safe
