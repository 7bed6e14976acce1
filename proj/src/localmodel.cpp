#include "safe/localmodel.hpp"

#include "safe/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace safe {

void LRConfig::validate() const {
  if (!(l1_ratio >= 0.0 && l1_ratio <= 1.0)) throw ArgumentError("l1_ratio must lie in [0, 1]");
  if (!(reg_strength >= 0.0) || !std::isfinite(reg_strength))
    throw ArgumentError("reg_strength must be finite and non-negative");
  if (max_epochs < 1) throw ArgumentError("max_epochs must be >= 1");
  if (!(tolerance > 0.0)) throw ArgumentError("tolerance must be positive");
}

void LocalLRModel::validate() const {
  const auto c = weights.cols();
  if (c < 2 || weights.rows() < 1) throw ArgumentError("LR model has an empty dimension");
  if (bias.size() != c || feature_mean.size() != weights.rows() ||
      feature_scale.size() != weights.rows())
    throw ArgumentError("LR model parameter shapes are inconsistent");
  if (!weights.allFinite() || !bias.allFinite() || !feature_mean.allFinite() ||
      !feature_scale.allFinite())
    throw NumericError("LR model has non-finite parameters");
  if ((feature_scale.array() <= 0.0).any()) throw NumericError("LR model has a non-positive scale");
  if (degenerate_class && (*degenerate_class < 0 || *degenerate_class >= c))
    throw ArgumentError("degenerate class outside the label range");
}

bool LocalLRModel::operator==(const LocalLRModel& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  return same(weights, o.weights) && same(bias, o.bias) && same(feature_mean, o.feature_mean) &&
         same(feature_scale, o.feature_scale) && institution_id == o.institution_id &&
         train_samples == o.train_samples && degenerate_class == o.degenerate_class;
}

namespace {

Matrix affine_softmax(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix p = x * w;
  p.rowwise() += b.transpose();
  softmax_rows(p);
  return p;
}

double cross_entropy_of(const Matrix& p, const std::vector<int>& labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    loss -= std::log(std::max(p(static_cast<Eigen::Index>(i), labels[i]), 1e-300));
  return loss / static_cast<double>(labels.size());
}

Matrix soft_threshold(const Matrix& w, double t) {
  return w.unaryExpr([t](double v) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
  });
}

}  // namespace

double lr_smooth_loss(const Matrix& x, const std::vector<int>& labels, const Matrix& weights,
                      const Vector& bias, double reg_strength, double l1_ratio) {
  return cross_entropy_of(affine_softmax(x, weights, bias), labels) +
         reg_strength * (1.0 - l1_ratio) * 0.5 * weights.squaredNorm();
}

LRGradient lr_smooth_gradient(const Matrix& x, const std::vector<int>& labels,
                              const Matrix& weights, const Vector& bias, double reg_strength,
                              double l1_ratio) {
  Matrix residual = affine_softmax(x, weights, bias);
  for (std::size_t i = 0; i < labels.size(); ++i)
    residual(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
  residual /= static_cast<double>(labels.size());
  LRGradient g;
  g.weights = x.transpose() * residual + reg_strength * (1.0 - l1_ratio) * weights;
  g.bias = residual.colwise().sum().transpose();
  return g;
}

LRFit fit_lr(const LabeledDataset& data, const LRConfig& config, int institution_id) {
  config.validate();
  if (data.size() == 0) throw ArgumentError("train_lr on an empty dataset");
  data.validate();

  const auto d = data.features.cols();
  const auto c = static_cast<Eigen::Index>(data.num_classes);
  const double n = static_cast<double>(data.size());

  LRFit fit;
  LocalLRModel& model = fit.model;
  model.institution_id = institution_id;
  model.train_samples = data.size();
  model.feature_mean = data.features.colwise().mean().transpose();
  model.feature_scale =
      ((data.features.rowwise() - model.feature_mean.transpose()).colwise().squaredNorm() / n)
          .cwiseSqrt()
          .transpose();
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(model.feature_scale(j) > 1e-12)) model.feature_scale(j) = 1.0;
  model.weights = Matrix::Zero(d, c);
  model.bias = Vector::Zero(c);

  const std::set<int> present(data.labels.begin(), data.labels.end());
  if (present.size() == 1) {
    model.degenerate_class = *present.begin();
    return fit;
  }

  const Matrix x = (data.features.rowwise() - model.feature_mean.transpose()).array().rowwise() /
                   model.feature_scale.transpose().array();
  const double l1 = config.reg_strength * config.l1_ratio;
  auto smooth = [&](const Matrix& w, const Vector& b) {
    return lr_smooth_loss(x, data.labels, w, b, config.reg_strength, config.l1_ratio);
  };

  Matrix& w = model.weights;
  Vector& b = model.bias;
  double f = smooth(w, b);
  double objective = f + l1 * w.cwiseAbs().sum();
  fit.objective.push_back(objective);
  double step = 1.0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const LRGradient g =
        lr_smooth_gradient(x, data.labels, w, b, config.reg_strength, config.l1_ratio);
    Matrix w_next;
    Vector b_next;
    double f_next = 0.0;
    for (int attempt = 0;; ++attempt) {
      w_next = soft_threshold(w - step * g.weights, step * l1);
      b_next = b - step * g.bias;
      f_next = smooth(w_next, b_next);
      const Matrix dw = w_next - w;
      const Vector db = b_next - b;
      const double model_bound = f + (g.weights.cwiseProduct(dw)).sum() + g.bias.dot(db) +
                                 (dw.squaredNorm() + db.squaredNorm()) / (2.0 * step);
      if (f_next <= model_bound + 1e-15 * std::abs(f)) break;
      step *= 0.5;
      if (attempt > 60) throw NumericError("LR line search failed to find a descent step");
    }
    const double next_objective = f_next + l1 * w_next.cwiseAbs().sum();
    w = std::move(w_next);
    b = std::move(b_next);
    f = f_next;
    const double change = std::abs(objective - next_objective) / std::max(std::abs(objective), 1e-12);
    objective = next_objective;
    fit.objective.push_back(objective);
    fit.epochs = epoch;
    if (change < config.tolerance) break;
    step *= 1.25;
  }
  if (!w.allFinite() || !b.allFinite()) throw NumericError("LR training produced non-finite weights");
  return fit;
}

LocalLRModel train_lr(const LabeledDataset& features, const LRConfig& config, int institution_id) {
  return fit_lr(features, config, institution_id).model;
}

Matrix predict_proba(const LocalLRModel& model, const Matrix& features) {
  if (features.cols() != model.weights.rows())
    throw ArgumentError("feature dimension " + std::to_string(features.cols()) +
                        " does not match LR model dimension " +
                        std::to_string(model.weights.rows()));
  if (model.degenerate_class) {
    Matrix p = Matrix::Zero(features.rows(), model.weights.cols());
    p.col(*model.degenerate_class).setOnes();
    return p;
  }
  const Matrix x = (features.rowwise() - model.feature_mean.transpose()).array().rowwise() /
                   model.feature_scale.transpose().array();
  return affine_softmax(x, model.weights, model.bias);
}

}  // namespace safe
