#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <string_view>

namespace safe {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Seed = std::uint64_t;

/// Performance score used as the coalition utility.
enum class Metric { accuracy, macro_auroc };

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);

/// Row-wise softmax computed in place with max-subtraction.
void softmax_rows(Matrix& scores);

}  // namespace safe
