#include "safe/fedsim.hpp"

#include "safe/errors.hpp"
#include "safe/parallel.hpp"
#include "safe/seed.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace safe {

void GlobalModel::validate() const {
  const auto h = hidden_weights.cols();
  if (hidden_weights.rows() < 1 || h < 1 || output_weights.cols() < 1)
    throw ArgumentError("global model has an empty dimension");
  if (hidden_bias.size() != h || output_weights.rows() != h ||
      output_bias.size() != output_weights.cols())
    throw ArgumentError("global model parameter shapes are inconsistent");
  if (!hidden_weights.allFinite() || !hidden_bias.allFinite() || !output_weights.allFinite() ||
      !output_bias.allFinite())
    throw NumericError("global model has non-finite parameters");
}

namespace {

template <typename A>
bool same(const A& a, const A& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

bool GlobalModel::operator==(const GlobalModel& other) const {
  return same(hidden_weights, other.hidden_weights) && same(hidden_bias, other.hidden_bias) &&
         same(output_weights, other.output_weights) && same(output_bias, other.output_bias);
}

void FedConfig::validate() const {
  if (rounds < 1) throw ArgumentError("rounds must be >= 1");
  if (local_epochs < 1) throw ArgumentError("local_epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ArgumentError("learning_rate must be a finite non-negative number");
  if (hidden_dim < 1) throw ArgumentError("hidden_dim must be >= 1");
  if (parallelism < 1) throw ArgumentError("parallelism must be >= 1");
}

GlobalModel init_global(std::size_t num_features, int num_classes, const FedConfig& config) {
  if (num_features < 1 || num_classes < 1) throw ArgumentError("model dimensions must be >= 1");
  if (config.hidden_dim < 1) throw ArgumentError("hidden_dim must be >= 1");
  const auto d = static_cast<Eigen::Index>(num_features);
  const auto h = static_cast<Eigen::Index>(config.hidden_dim);
  const auto c = static_cast<Eigen::Index>(num_classes);

  std::mt19937_64 rng(derive_seed(config.seed, "fed.init"));
  auto draw = [&rng](Matrix& m, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  };
  GlobalModel model;
  model.hidden_weights.resize(d, h);
  model.output_weights.resize(h, c);
  draw(model.hidden_weights, 1.0 / std::sqrt(static_cast<double>(d)));
  draw(model.output_weights, 1.0 / std::sqrt(static_cast<double>(h)));
  model.hidden_bias = Vector::Zero(h);
  model.output_bias = Vector::Zero(c);
  return model;
}

namespace {

void check_input(const GlobalModel& model, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != model.num_features())
    throw ArgumentError("feature dimension " + std::to_string(features.cols()) +
                        " does not match model input dimension " +
                        std::to_string(model.num_features()));
}

}  // namespace

Matrix hidden_activations(const GlobalModel& model, const Matrix& features) {
  check_input(model, features);
  Matrix hidden = features * model.hidden_weights;
  hidden.rowwise() += model.hidden_bias.transpose();
  return hidden.cwiseMax(0.0);
}

Matrix predict_proba(const GlobalModel& model, const Matrix& features) {
  Matrix scores = hidden_activations(model, features) * model.output_weights;
  scores.rowwise() += model.output_bias.transpose();
  softmax_rows(scores);
  return scores;
}

double cross_entropy(const GlobalModel& model, const LabeledDataset& data) {
  const Matrix p = predict_proba(model, data.features);
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    loss -= std::log(std::max(p(static_cast<Eigen::Index>(i), data.labels[i]), 1e-300));
  return loss / static_cast<double>(data.size());
}

GlobalModel local_update(const GlobalModel& model, const LabeledDataset& shard,
                         const FedConfig& config, Seed round_seed) {
  config.validate();
  if (shard.size() == 0) throw ArgumentError("local_update on an empty shard");
  check_input(model, shard.features);
  if (static_cast<int>(model.num_classes()) < shard.num_classes)
    throw ArgumentError("shard has more classes than the model output");

  GlobalModel out = model;
  const std::size_t n = shard.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(round_seed);

  Matrix x, hidden, grad_out, grad_hidden;
  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(start + batch, n);
      // Batch rows are visited in index order so a full batch gives the same
      // gradient regardless of the shuffle.
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(rows.begin(), rows.end());
      const auto b = static_cast<Eigen::Index>(rows.size());
      x.resize(b, shard.features.cols());
      for (Eigen::Index r = 0; r < b; ++r)
        x.row(r) = shard.features.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]));

      hidden = x * out.hidden_weights;
      hidden.rowwise() += out.hidden_bias.transpose();
      hidden = hidden.cwiseMax(0.0);
      grad_out = hidden * out.output_weights;
      grad_out.rowwise() += out.output_bias.transpose();
      softmax_rows(grad_out);
      for (Eigen::Index r = 0; r < b; ++r)
        grad_out(r, shard.labels[rows[static_cast<std::size_t>(r)]]) -= 1.0;
      grad_out /= static_cast<double>(b);

      grad_hidden = (grad_out * out.output_weights.transpose()).cwiseProduct(
          (hidden.array() > 0.0).cast<double>().matrix());

      const double lr = config.learning_rate;
      out.output_weights.noalias() -= lr * (hidden.transpose() * grad_out);
      out.output_bias -= lr * grad_out.colwise().sum().transpose();
      out.hidden_weights.noalias() -= lr * (x.transpose() * grad_hidden);
      out.hidden_bias -= lr * grad_hidden.colwise().sum().transpose();
    }
  }
  if (!out.hidden_weights.allFinite() || !out.output_weights.allFinite())
    throw NumericError("local update diverged (non-finite parameters); lower the learning rate");
  return out;
}

GlobalModel fedavg_aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw ArgumentError("fedavg_aggregate needs at least one update");
  GlobalModel mean = updates.front().model;
  mean.validate();
  if (updates.front().num_samples < 1) throw ArgumentError("client sample count must be >= 1");
  double total = static_cast<double>(updates.front().num_samples);
  // Running weighted mean: identical inputs leave the mean bit-exact.
  for (std::size_t i = 1; i < updates.size(); ++i) {
    const auto& u = updates[i];
    if (u.num_samples < 1) throw ArgumentError("client sample count must be >= 1");
    if (u.model.hidden_weights.rows() != mean.hidden_weights.rows() ||
        u.model.hidden_weights.cols() != mean.hidden_weights.cols() ||
        u.model.output_weights.cols() != mean.output_weights.cols())
      throw ArgumentError("client " + std::to_string(i) + " has mismatched model dimensions");
    total += static_cast<double>(u.num_samples);
    const double w = static_cast<double>(u.num_samples) / total;
    mean.hidden_weights += w * (u.model.hidden_weights - mean.hidden_weights);
    mean.hidden_bias += w * (u.model.hidden_bias - mean.hidden_bias);
    mean.output_weights += w * (u.model.output_weights - mean.output_weights);
    mean.output_bias += w * (u.model.output_bias - mean.output_bias);
  }
  return mean;
}

GlobalModel train_federated_from(GlobalModel initial, std::span<const LabeledDataset> shards,
                                 const FedConfig& config) {
  config.validate();
  if (shards.empty()) throw ArgumentError("train_federated needs at least one shard");
  for (const auto& s : shards) {
    if (s.num_features() != initial.num_features())
      throw ArgumentError("shard feature dimensions are inconsistent with the model");
  }
  GlobalModel global = std::move(initial);
  std::vector<ClientUpdate> updates(shards.size());
  for (int round = 0; round < config.rounds; ++round) {
    parallel_for(shards.size(), config.parallelism, [&](std::size_t i) {
      const Seed s = derive_seed(config.seed, "fed.local",
                                 {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(i)});
      updates[i] = {local_update(global, shards[i], config, s), shards[i].size()};
    });
    global = fedavg_aggregate(updates);
  }
  return global;
}

GlobalModel train_federated(std::span<const LabeledDataset> shards, const FedConfig& config) {
  config.validate();
  if (shards.empty()) throw ArgumentError("train_federated needs at least one shard");
  int classes = 0;
  for (const auto& s : shards) classes = std::max(classes, s.num_classes);
  return train_federated_from(init_global(shards.front().num_features(), classes, config), shards,
                              config);
}

LabeledDataset extract_features(const GlobalModel& model, const LabeledDataset& dataset) {
  LabeledDataset out;
  out.features = hidden_activations(model, dataset.features);
  out.labels = dataset.labels;
  out.num_classes = dataset.num_classes;
  return out;
}

}  // namespace safe
