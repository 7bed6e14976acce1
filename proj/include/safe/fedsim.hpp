#pragma once

#include "safe/data.hpp"
#include "safe/types.hpp"

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace safe {

/// One-hidden-layer rectifier network with a softmax head. Stands in for the
/// federated CNN; its hidden layer is the per-datum feature extractor.
struct GlobalModel {
  Matrix hidden_weights;  // num_features x hidden_dim
  Vector hidden_bias;     // hidden_dim
  Matrix output_weights;  // hidden_dim x num_classes
  Vector output_bias;     // num_classes

  std::size_t num_features() const { return static_cast<std::size_t>(hidden_weights.rows()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(hidden_weights.cols()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(output_weights.cols()); }

  /// Throws ArgumentError on inconsistent shapes or non-finite parameters.
  void validate() const;

  /// Exact (bitwise-value) equality of all parameters.
  bool operator==(const GlobalModel& other) const;
};

struct FedConfig {
  int rounds = 10;
  int local_epochs = 20;
  int batch_size = 64;
  double learning_rate = 0.05;
  int hidden_dim = 64;
  Seed seed = 0;
  /// Worker threads for the per-shard local updates of a round.
  std::size_t parallelism = 1;

  void validate() const;
};

GlobalModel init_global(std::size_t num_features, int num_classes, const FedConfig& config);

/// Class probabilities, one row per sample.
Matrix predict_proba(const GlobalModel& model, const Matrix& features);

/// Hidden-layer post-activation values.
Matrix hidden_activations(const GlobalModel& model, const Matrix& features);

/// Mean cross-entropy of the model on `data`.
double cross_entropy(const GlobalModel& model, const LabeledDataset& data);

/// local_epochs of shuffled mini-batch gradient descent on cross-entropy.
/// `round_seed` drives the batch order.
GlobalModel local_update(const GlobalModel& model, const LabeledDataset& shard,
                         const FedConfig& config, Seed round_seed);

struct ClientUpdate {
  GlobalModel model;
  std::size_t num_samples = 0;
};

/// Sample-count-weighted parameter mean.
GlobalModel fedavg_aggregate(std::span<const ClientUpdate> updates);

/// Full-participation FedAvg starting from `initial`. Shard i in round r
/// trains with derive_seed(config.seed, "fed.local", {r, i}).
GlobalModel train_federated_from(GlobalModel initial, std::span<const LabeledDataset> shards,
                                 const FedConfig& config);

/// init_global(seed) followed by train_federated_from.
GlobalModel train_federated(std::span<const LabeledDataset> shards, const FedConfig& config);

/// Hidden-layer features for every sample; labels pass through.
LabeledDataset extract_features(const GlobalModel& model, const LabeledDataset& dataset);

}  // namespace safe
