#include "safe/valuation.hpp"

#include "safe/errors.hpp"
#include "safe/metrics.hpp"
#include "safe/parallel.hpp"
#include "safe/seed.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>

namespace safe {

namespace {

/// Neumaier compensated sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      carry += (sum - t) + x;
    else
      carry += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

void check_players(int n) {
  if (n < 1) throw ArgumentError("at least one player is required");
  if (n > 62) throw CapacityError("at most 62 players fit a coalition bitmask");
}

}  // namespace

std::string_view to_string(ShapleyMethod m) {
  switch (m) {
    case ShapleyMethod::exact_ensemble: return "exact_ensemble";
    case ShapleyMethod::exact_retrain: return "exact_retrain";
    case ShapleyMethod::tmc: return "tmc";
    case ShapleyMethod::permutation_exact: return "permutation_exact";
  }
  return "?";
}

ShapleyMethod shapley_method_from_string(std::string_view s) {
  if (s == "exact_ensemble") return ShapleyMethod::exact_ensemble;
  if (s == "exact_retrain") return ShapleyMethod::exact_retrain;
  if (s == "tmc") return ShapleyMethod::tmc;
  if (s == "permutation_exact") return ShapleyMethod::permutation_exact;
  throw ArgumentError("unknown Shapley method '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// UtilityTable

UtilityTable::UtilityTable(int players, Metric metric) : players_(players), metric_(metric) {
  if (players < 0) throw ArgumentError("player count must be non-negative");
  if (players > 40) throw CapacityError("utility table for " + std::to_string(players) +
                                        " players does not fit in memory; use TMC");
  values_.assign(std::size_t{1} << players, std::numeric_limits<double>::quiet_NaN());
  values_[0] = 0.0;
}

void UtilityTable::set(Coalition s, double value) {
  if (s >= values_.size())
    throw ArgumentError("coalition " + std::to_string(s) + " out of range for " +
                        std::to_string(players_) + " players");
  if (!(value >= 0.0 && value <= 1.0))
    throw ArgumentError("utility " + std::to_string(value) + " for coalition " +
                        std::to_string(s) + " outside [0, 1]");
  if (s == 0 && value != 0.0) throw ArgumentError("v(empty) is fixed at 0");
  values_[s] = value;
}

bool UtilityTable::contains(Coalition s) const {
  return s < values_.size() && !std::isnan(values_[s]);
}

std::optional<double> UtilityTable::find(Coalition s) const {
  if (!contains(s)) return std::nullopt;
  return values_[s];
}

double UtilityTable::at(Coalition s) const {
  if (!contains(s)) throw ArgumentError("utility table has no entry for coalition " + std::to_string(s));
  return values_[s];
}

std::optional<Coalition> UtilityTable::first_missing() const {
  for (std::size_t s = 0; s < values_.size(); ++s)
    if (std::isnan(values_[s])) return static_cast<Coalition>(s);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Ensembles

Matrix ensemble_predict(std::span<const LocalLRModel> models, const Matrix& features,
                        bool weighted) {
  if (models.empty()) throw ArgumentError("ensemble_predict needs at least one model");
  Matrix sum;
  double total = 0.0;
  for (const auto& m : models) {
    Matrix p = predict_proba(m, features);
    if (sum.size() == 0) {
      sum = Matrix::Zero(p.rows(), p.cols());
    } else if (p.cols() != sum.cols()) {
      throw ArgumentError("ensemble members disagree on the number of classes");
    }
    const double w = weighted ? static_cast<double>(m.train_samples) : 1.0;
    if (weighted)
      sum += w * p;
    else
      sum += p;
    total += w;
  }
  return sum / total;
}

CoalitionEvaluator::CoalitionEvaluator(std::span<const LocalLRModel> models,
                                       const LabeledDataset& test_set, Metric metric,
                                       bool weighted)
    : labels_(test_set.labels), metric_(metric), weighted_(weighted) {
  if (models.empty()) throw ArgumentError("coalition evaluation needs at least one model");
  check_players(static_cast<int>(models.size()));
  test_set.validate();
  member_proba_.reserve(models.size());
  for (const auto& m : models) {
    if (static_cast<int>(m.num_classes()) != test_set.num_classes)
      throw ArgumentError("model of institution " + std::to_string(m.institution_id) + " has " +
                          std::to_string(m.num_classes()) + " classes, test set has " +
                          std::to_string(test_set.num_classes));
    member_proba_.push_back(predict_proba(m, test_set.features));
    member_weight_.push_back(weighted ? static_cast<double>(m.train_samples) : 1.0);
  }
  if (metric == Metric::macro_auroc) {
    const auto counts = test_set.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (counts[c] == 0 || counts[c] == test_set.size()) skipped_classes_.push_back(static_cast<int>(c));
  }
}

double CoalitionEvaluator::score(const Matrix& sum, double weight) const {
  if (metric_ == Metric::accuracy) {
    std::size_t hits = 0;
    for (Eigen::Index r = 0; r < sum.rows(); ++r) {
      Eigen::Index best = 0;
      double best_p = sum(r, 0) / weight;
      for (Eigen::Index c = 1; c < sum.cols(); ++c) {
        const double p = sum(r, c) / weight;
        if (p > best_p) {
          best_p = p;
          best = c;
        }
      }
      hits += best == labels_[static_cast<std::size_t>(r)] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels_.size());
  }
  const Matrix probs = sum / weight;
  return macro_auroc(probs, labels_).value;
}

double CoalitionEvaluator::utility(Coalition s) const {
  const int n = players();
  if (s > grand_coalition(n))
    throw ArgumentError("coalition " + std::to_string(s) + " out of range for " +
                        std::to_string(n) + " players");
  if (s == 0) return 0.0;
  Matrix sum = Matrix::Zero(member_proba_.front().rows(), member_proba_.front().cols());
  double weight = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!(s >> i & 1)) continue;
    if (weighted_)
      sum += member_weight_[static_cast<std::size_t>(i)] * member_proba_[static_cast<std::size_t>(i)];
    else
      sum += member_proba_[static_cast<std::size_t>(i)];
    weight += member_weight_[static_cast<std::size_t>(i)];
  }
  return score(sum, weight);
}

UtilityTable CoalitionEvaluator::complete_table(std::size_t parallelism,
                                                const ValuationLimits& limits) const {
  const int n = players();
  if (n > limits.max_ensemble_players)
    throw CapacityError(std::to_string(n) + " institutions exceed the ensemble table cap of " +
                        std::to_string(limits.max_ensemble_players) +
                        " (2^n utilities); use TMC or raise the cap");
  if (parallelism < 1) throw ArgumentError("parallelism must be >= 1");
  UtilityTable table(n, metric_);
  table.skipped_classes = skipped_classes_;

  // Each task walks at least 2^6 coalitions so rebuilding its prefix sum
  // stays cheap next to the walk.
  const int prefix_bits = std::clamp(n - 6, 0, 8);
  const std::size_t tasks = std::size_t{1} << prefix_bits;
  const auto rows = member_proba_.front().rows();
  const auto cols = member_proba_.front().cols();

  auto add_member = [&](Matrix& out, const Matrix& in, int i) {
    const auto k = static_cast<std::size_t>(i);
    if (weighted_)
      out.noalias() = in + member_weight_[k] * member_proba_[k];
    else
      out.noalias() = in + member_proba_[k];
  };

  parallel_for(tasks, parallelism, [&](std::size_t task) {
    const auto prefix = static_cast<Coalition>(task);
    std::vector<Matrix> sums(static_cast<std::size_t>(n - prefix_bits + 1), Matrix(rows, cols));
    std::vector<double> weights(sums.size(), 0.0);
    sums[0].setZero();
    for (int i = 0; i < prefix_bits; ++i) {
      if (!(prefix >> i & 1)) continue;
      const auto k = static_cast<std::size_t>(i);
      if (weighted_)
        sums[0] += member_weight_[k] * member_proba_[k];
      else
        sums[0] += member_proba_[k];
      weights[0] += member_weight_[k];
    }
    if (prefix != 0) table.set(prefix, score(sums[0], weights[0]));

    // Depth-first over the remaining members in ascending order, extending
    // the running sum by one matrix per visited coalition.
    auto walk = [&](auto&& self, int start, Coalition mask, std::size_t depth) -> void {
      for (int i = start; i < n; ++i) {
        add_member(sums[depth + 1], sums[depth], i);
        weights[depth + 1] = weights[depth] + member_weight_[static_cast<std::size_t>(i)];
        const Coalition next = mask | (Coalition{1} << i);
        table.set(next, score(sums[depth + 1], weights[depth + 1]));
        self(self, i + 1, next, depth + 1);
      }
    };
    walk(walk, prefix_bits, prefix, 0);
  });
  return table;
}

double UtilityCache::get_or_compute(Coalition s, const std::function<double(Coalition)>& compute) {
  if (auto v = find(s)) return *v;
  const double value = compute(s);
  std::unique_lock lock(mutex_);
  return values_.try_emplace(s, value).first->second;
}

std::optional<double> UtilityCache::find(Coalition s) const {
  std::shared_lock lock(mutex_);
  auto it = values_.find(s);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::size_t UtilityCache::size() const {
  std::shared_lock lock(mutex_);
  return values_.size();
}

double utility(Coalition s, std::span<const LocalLRModel> models, const LabeledDataset& test_set,
               Metric metric) {
  if (s == 0) return 0.0;
  return CoalitionEvaluator(models, test_set, metric).utility(s);
}

UtilityTable complete_utility_table(std::span<const LocalLRModel> models,
                                    const LabeledDataset& test_set, Metric metric,
                                    std::size_t parallelism, const ValuationLimits& limits) {
  if (static_cast<int>(models.size()) > limits.max_ensemble_players)
    throw CapacityError(std::to_string(models.size()) +
                        " institutions exceed the ensemble table cap of " +
                        std::to_string(limits.max_ensemble_players) + "; use TMC");
  return CoalitionEvaluator(models, test_set, metric).complete_table(parallelism, limits);
}

// ---------------------------------------------------------------------------
// Exact Shapley

ShapleyVector exact_shapley(const UtilityTable& table, ShapleyMethod tag) {
  const int n = table.players();
  check_players(n);
  if (auto missing = table.first_missing())
    throw ArgumentError("utility table is incomplete: coalition " + std::to_string(*missing) +
                        " is missing");

  // weight[s] = 1 / (n * C(n-1, s)), with C from Pascal's rule.
  std::vector<double> binom(static_cast<std::size_t>(n), 0.0);
  binom[0] = 1.0;
  for (int row = 1; row < n; ++row)
    for (int k = row; k > 0; --k) binom[static_cast<std::size_t>(k)] += binom[static_cast<std::size_t>(k - 1)];
  std::vector<double> weight(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s)
    weight[static_cast<std::size_t>(s)] = 1.0 / (static_cast<double>(n) * binom[static_cast<std::size_t>(s)]);

  ShapleyVector out;
  out.method = tag;
  out.metric = table.metric();
  out.grand_utility = table.at(grand_coalition(n));
  out.values.resize(static_cast<std::size_t>(n));
  const Coalition others = Coalition{1} << (n - 1);
  for (int i = 0; i < n; ++i) {
    const Coalition bit = Coalition{1} << i;
    const Coalition low = bit - 1;
    CompensatedSum phi;
    for (Coalition r = 0; r < others; ++r) {
      const Coalition s = ((r & ~low) << 1) | (r & low);
      const double marginal = table.at(s | bit) - table.at(s);
      phi.add(weight[static_cast<std::size_t>(std::popcount(s))] * marginal);
    }
    out.values[static_cast<std::size_t>(i)] = phi.value();
  }
  return out;
}

ShapleyVector permutation_shapley_exact(const UtilityTable& table, const ValuationLimits& limits) {
  const int n = table.players();
  check_players(n);
  if (n > limits.max_permutation_players)
    throw CapacityError(std::to_string(n) + " players exceed the permutation enumeration cap of " +
                        std::to_string(limits.max_permutation_players) + " (n! orderings)");
  if (auto missing = table.first_missing())
    throw ArgumentError("utility table is incomplete: coalition " + std::to_string(*missing) +
                        " is missing");

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<CompensatedSum> sums(static_cast<std::size_t>(n));
  double count = 0.0;
  do {
    Coalition s = 0;
    double prev = 0.0;
    for (int i : order) {
      s |= Coalition{1} << i;
      const double cur = table.at(s);
      sums[static_cast<std::size_t>(i)].add(cur - prev);
      prev = cur;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));

  ShapleyVector out;
  out.method = ShapleyMethod::permutation_exact;
  out.metric = table.metric();
  out.grand_utility = table.at(grand_coalition(n));
  out.permutations_used = static_cast<std::size_t>(count);
  for (const auto& s : sums) out.values.push_back(s.value() / count);
  return out;
}

ShapleyVector safe_shapley(std::span<const LocalLRModel> models, const LabeledDataset& test_set,
                           Metric metric, std::size_t parallelism, const ValuationLimits& limits,
                           bool weighted) {
  if (static_cast<int>(models.size()) > limits.max_ensemble_players)
    throw CapacityError(std::to_string(models.size()) +
                        " institutions exceed the ensemble table cap of " +
                        std::to_string(limits.max_ensemble_players) + "; use TMC");
  const CoalitionEvaluator evaluator(models, test_set, metric, weighted);
  return exact_shapley(evaluator.complete_table(parallelism, limits), ShapleyMethod::exact_ensemble);
}

// ---------------------------------------------------------------------------
// Retraining baseline

UtilityTable retrain_utility_table(std::span<const LabeledDataset> shards,
                                   const LabeledDataset& test_set, const FedConfig& config,
                                   Metric metric, const ValuationLimits& limits) {
  config.validate();
  const int n = static_cast<int>(shards.size());
  check_players(n);
  if (n > limits.max_retrain_players)
    throw CapacityError(std::to_string(n) + " institutions exceed the retraining cap of " +
                        std::to_string(limits.max_retrain_players) +
                        ": every coalition trains a full federated model, 2^n runs in total");
  test_set.validate();
  int classes = test_set.num_classes;
  for (const auto& s : shards) classes = std::max(classes, s.num_classes);

  UtilityTable table(n, metric);
  const std::size_t coalitions = (std::size_t{1} << n) - 1;
  std::mutex table_mutex;
  parallel_for(coalitions, config.parallelism, [&](std::size_t k) {
    const Coalition s = static_cast<Coalition>(k + 1);
    std::vector<LabeledDataset> members;
    for (int i = 0; i < n; ++i)
      if (s >> i & 1) members.push_back(shards[static_cast<std::size_t>(i)]);
    FedConfig cfg = config;
    cfg.seed = derive_seed(config.seed, "retrain", {s});
    cfg.parallelism = 1;
    const GlobalModel model = train_federated_from(
        init_global(members.front().num_features(), classes, cfg), members, cfg);
    const Matrix probs = predict_proba(model, test_set.features);
    const double value = evaluate_metric(metric, probs, test_set.labels);
    std::lock_guard lock(table_mutex);
    table.set(s, value);
  });
  if (metric == Metric::macro_auroc) {
    const auto counts = test_set.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (counts[c] == 0 || counts[c] == test_set.size())
        table.skipped_classes.push_back(static_cast<int>(c));
  }
  return table;
}

ShapleyVector exact_shapley_retrain(std::span<const LabeledDataset> shards,
                                    const LabeledDataset& test_set, const FedConfig& config,
                                    Metric metric, const ValuationLimits& limits) {
  auto out = exact_shapley(retrain_utility_table(shards, test_set, config, metric, limits),
                           ShapleyMethod::exact_retrain);
  out.seed = config.seed;
  return out;
}

// ---------------------------------------------------------------------------
// Truncated Monte Carlo

void TmcOptions::validate() const {
  if (truncation_tolerance && !(*truncation_tolerance >= 0.0))
    throw ArgumentError("truncation_tolerance must be >= 0");
  if (convergence_window < 1) throw ArgumentError("convergence_window must be >= 1");
  if (!(convergence_tolerance > 0.0)) throw ArgumentError("convergence_tolerance must be positive");
  if (max_permutations && *max_permutations < 1)
    throw ArgumentError("max_permutations must be >= 1");
}

ShapleyVector tmc_shapley(const CoalitionEvaluator& evaluator, const TmcOptions& options,
                          const ValuationLimits& limits, UtilityCache* cache) {
  options.validate();
  const int n = evaluator.players();
  check_players(n);
  if (options.exhaustive && n > limits.max_permutation_players)
    throw CapacityError(std::to_string(n) + " players exceed the permutation enumeration cap of " +
                        std::to_string(limits.max_permutation_players));

  UtilityCache local;
  UtilityCache& memo = cache ? *cache : local;
  const std::function<double(Coalition)> compute = [&](Coalition s) { return evaluator.utility(s); };
  auto v = [&](Coalition s) { return s == 0 ? 0.0 : memo.get_or_compute(s, compute); };

  const double grand = v(grand_coalition(n));
  const double truncation = options.truncation_tolerance.value_or(0.001 * grand);
  const std::size_t max_perms =
      options.max_permutations.value_or(n >= 58 ? std::numeric_limits<std::size_t>::max()
                                                : std::size_t{10} << n);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(options.seed, "tmc"));
  std::vector<CompensatedSum> sums(static_cast<std::size_t>(n));
  std::deque<std::vector<double>> history;
  std::vector<double> mean(static_cast<std::size_t>(n), 0.0);
  std::size_t used = 0;

  for (;;) {
    if (!options.exhaustive) std::shuffle(order.begin(), order.end(), rng);
    Coalition s = 0;
    double prev = 0.0;
    for (int i : order) {
      double marginal = 0.0;
      s |= Coalition{1} << i;
      if (!(std::abs(grand - prev) < truncation)) {
        const double cur = v(s);
        marginal = cur - prev;
        prev = cur;
      }
      sums[static_cast<std::size_t>(i)].add(marginal);
    }
    ++used;
    for (std::size_t i = 0; i < mean.size(); ++i)
      mean[i] = sums[i].value() / static_cast<double>(used);

    if (options.exhaustive) {
      if (!std::next_permutation(order.begin(), order.end())) break;
      continue;
    }
    history.push_back(mean);
    if (history.size() > options.convergence_window) {
      double change = 0.0;
      for (std::size_t i = 0; i < mean.size(); ++i)
        change = std::max(change, std::abs(history.back()[i] - history.front()[i]));
      history.pop_front();
      if (change < options.convergence_tolerance) break;
    }
    if (used >= max_perms) break;
  }

  ShapleyVector out;
  out.values = mean;
  out.method = ShapleyMethod::tmc;
  out.metric = evaluator.metric();
  out.seed = options.seed;
  out.permutations_used = used;
  out.grand_utility = grand;
  return out;
}

ShapleyVector tmc_shapley(std::span<const LocalLRModel> models, const LabeledDataset& test_set,
                          Metric metric, const TmcOptions& options, const ValuationLimits& limits) {
  return tmc_shapley(CoalitionEvaluator(models, test_set, metric), options, limits);
}

// ---------------------------------------------------------------------------

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ArgumentError("cosine similarity of vectors with lengths " + std::to_string(a.size()) +
                        " and " + std::to_string(b.size()));
  CompensatedSum dot, na, nb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot.add(a[i] * b[i]);
    na.add(a[i] * a[i]);
    nb.add(b[i] * b[i]);
  }
  if (!(na.value() > 0.0) || !(nb.value() > 0.0))
    throw NumericError("cosine similarity is undefined for a zero-norm vector");
  const double c = dot.value() / (std::sqrt(na.value()) * std::sqrt(nb.value()));
  return std::clamp(c, -1.0, 1.0);
}

double cosine_similarity(const ShapleyVector& a, const ShapleyVector& b) {
  return cosine_similarity(a.values, b.values);
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("l2 distance of vectors with different lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace safe
