#pragma once

#include "safe/data.hpp"
#include "safe/fedsim.hpp"
#include "safe/localmodel.hpp"
#include "safe/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace safe {

/// Bit i set iff institution i is a member.
using Coalition = std::uint64_t;

constexpr Coalition grand_coalition(int n) { return (Coalition{1} << n) - 1; }

enum class ShapleyMethod { exact_ensemble, exact_retrain, tmc, permutation_exact };

std::string_view to_string(ShapleyMethod m);
ShapleyMethod shapley_method_from_string(std::string_view s);

/// Size caps. Exceeding one raises CapacityError.
struct ValuationLimits {
  int max_ensemble_players = 25;
  int max_retrain_players = 8;
  int max_permutation_players = 10;
};

/// Dense coalition -> utility map. v(empty) is fixed at 0; other entries
/// start missing.
class UtilityTable {
 public:
  UtilityTable(int players, Metric metric);

  int players() const { return players_; }
  Metric metric() const { return metric_; }
  std::size_t size() const { return values_.size(); }

  /// Throws ArgumentError for an out-of-range mask, a score outside [0,1],
  /// or a non-zero value for the empty coalition.
  void set(Coalition s, double value);
  bool contains(Coalition s) const;
  std::optional<double> find(Coalition s) const;
  /// Throws ArgumentError naming the mask when missing.
  double at(Coalition s) const;

  bool complete() const { return !first_missing().has_value(); }
  std::optional<Coalition> first_missing() const;

  /// Classes skipped by macro_auroc on the test set, if any.
  std::vector<int> skipped_classes;

 private:
  int players_;
  Metric metric_;
  std::vector<double> values_;  // NaN marks a missing entry
};

struct ShapleyVector {
  std::vector<double> values;
  ShapleyMethod method = ShapleyMethod::exact_ensemble;
  Metric metric = Metric::accuracy;
  Seed seed = 0;
  std::size_t permutations_used = 0;
  /// v(N) of the game the vector was computed from.
  double grand_utility = 0.0;
};

/// Unweighted (or train-sample-weighted) mean of member softmax outputs.
Matrix ensemble_predict(std::span<const LocalLRModel> models, const Matrix& features,
                        bool weighted = false);

/// Coalition utilities over a fixed test set. Each member's test-set
/// probabilities are computed once; a coalition's ensemble is the sum of its
/// members' matrices in ascending index order divided by the total weight,
/// so every evaluation path yields bit-identical scores.
class CoalitionEvaluator {
 public:
  CoalitionEvaluator(std::span<const LocalLRModel> models, const LabeledDataset& test_set,
                     Metric metric, bool weighted = false);

  int players() const { return static_cast<int>(member_proba_.size()); }
  Metric metric() const { return metric_; }
  const std::vector<int>& skipped_classes() const { return skipped_classes_; }

  /// 0 for the empty coalition.
  double utility(Coalition s) const;

  /// All 2^n utilities; each coalition is evaluated exactly once. Work is
  /// split over the lowest bits so the table is identical for any
  /// parallelism.
  UtilityTable complete_table(std::size_t parallelism, const ValuationLimits& limits = {}) const;

 private:
  double score(const Matrix& sum, double weight) const;

  std::vector<Matrix> member_proba_;
  std::vector<double> member_weight_;
  std::vector<int> labels_;
  Metric metric_;
  bool weighted_;
  std::vector<int> skipped_classes_;
};

/// Insert-once memo shared between threads. Values for one key are equal
/// by determinism, so a racing second insert is harmless.
class UtilityCache {
 public:
  double get_or_compute(Coalition s, const std::function<double(Coalition)>& compute);
  std::optional<double> find(Coalition s) const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<Coalition, double> values_;
};

double utility(Coalition s, std::span<const LocalLRModel> models, const LabeledDataset& test_set,
               Metric metric);

UtilityTable complete_utility_table(std::span<const LocalLRModel> models,
                                    const LabeledDataset& test_set, Metric metric,
                                    std::size_t parallelism, const ValuationLimits& limits = {});

/// Combinatorial form: phi_i = sum over S not containing i of
/// (v(S+i) - v(S)) / (n * C(n-1, |S|)), with compensated summation.
ShapleyVector exact_shapley(const UtilityTable& table,
                            ShapleyMethod tag = ShapleyMethod::exact_ensemble);

/// Mean marginal contribution over all n! orderings.
ShapleyVector permutation_shapley_exact(const UtilityTable& table,
                                        const ValuationLimits& limits = {});

/// Ensemble utility table followed by exact_shapley.
ShapleyVector safe_shapley(std::span<const LocalLRModel> models, const LabeledDataset& test_set,
                           Metric metric, std::size_t parallelism,
                           const ValuationLimits& limits = {}, bool weighted = false);

/// v(S) is the test metric of a FedAvg model trained from scratch on the
/// shards in S (seed derive_seed(config.seed, "retrain", {S})).
UtilityTable retrain_utility_table(std::span<const LabeledDataset> shards,
                                   const LabeledDataset& test_set, const FedConfig& config,
                                   Metric metric, const ValuationLimits& limits = {});

ShapleyVector exact_shapley_retrain(std::span<const LabeledDataset> shards,
                                    const LabeledDataset& test_set, const FedConfig& config,
                                    Metric metric, const ValuationLimits& limits = {});

struct TmcOptions {
  /// Absolute; defaults to 0.001 * v(N).
  std::optional<double> truncation_tolerance;
  std::size_t convergence_window = 100;
  double convergence_tolerance = 1e-4;
  /// Defaults to 10 * 2^n.
  std::optional<std::size_t> max_permutations;
  Seed seed = 0;
  /// Walk all n! permutations in lexicographic order instead of sampling.
  bool exhaustive = false;

  void validate() const;
};

/// Truncated Monte Carlo over institution orderings. Truncated marginals
/// count as 0. Utilities are memoized in `cache` (a private one when null).
ShapleyVector tmc_shapley(const CoalitionEvaluator& evaluator, const TmcOptions& options,
                          const ValuationLimits& limits = {}, UtilityCache* cache = nullptr);

ShapleyVector tmc_shapley(std::span<const LocalLRModel> models, const LabeledDataset& test_set,
                          Metric metric, const TmcOptions& options,
                          const ValuationLimits& limits = {});

/// dot(a,b) / (|a| |b|). Throws NumericError when either norm is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const ShapleyVector& a, const ShapleyVector& b);

double l2_distance(std::span<const double> a, std::span<const double> b);

}  // namespace safe
