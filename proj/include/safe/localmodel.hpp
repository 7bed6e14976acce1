#pragma once

#include "safe/data.hpp"
#include "safe/types.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace safe {

struct LRConfig {
  double l1_ratio = 0.5;
  double reg_strength = 1e-4;
  int max_epochs = 1000;
  double tolerance = 1e-6;
  Seed seed = 0;

  void validate() const;
};

/// Multinomial logistic regression over standardized features. This is the
/// only artifact an institution sends to the server.
struct LocalLRModel {
  Matrix weights;  // feature_dim x num_classes, in standardized units
  Vector bias;     // num_classes
  Vector feature_mean;
  Vector feature_scale;
  int institution_id = 0;
  std::size_t train_samples = 0;
  /// Set when the training shard held a single class; the model then
  /// predicts that class with probability 1.
  std::optional<int> degenerate_class;

  std::size_t feature_dim() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(weights.cols()); }

  void validate() const;
  bool operator==(const LocalLRModel& other) const;
};

struct LRFit {
  LocalLRModel model;
  /// Objective after every accepted proximal step, starting with the
  /// value at the zero initialization.
  std::vector<double> objective;
  int epochs = 0;
};

/// Proximal gradient descent with backtracking on
///   mean cross-entropy + reg * (l1_ratio * |W|_1 + (1 - l1_ratio) * 0.5 * |W|_2^2).
/// The bias is unpenalized.
LRFit fit_lr(const LabeledDataset& features, const LRConfig& config, int institution_id = 0);

LocalLRModel train_lr(const LabeledDataset& features, const LRConfig& config,
                      int institution_id = 0);

Matrix predict_proba(const LocalLRModel& model, const Matrix& features);

/// Smooth part of the objective (cross-entropy plus the L2 share of the
/// penalty) on already-standardized inputs.
double lr_smooth_loss(const Matrix& x, const std::vector<int>& labels, const Matrix& weights,
                      const Vector& bias, double reg_strength, double l1_ratio);

struct LRGradient {
  Matrix weights;
  Vector bias;
};

LRGradient lr_smooth_gradient(const Matrix& x, const std::vector<int>& labels,
                              const Matrix& weights, const Vector& bias, double reg_strength,
                              double l1_ratio);

}  // namespace safe
