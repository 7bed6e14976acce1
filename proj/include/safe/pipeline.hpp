#pragma once

#include "safe/checkpoint.hpp"
#include "safe/data.hpp"
#include "safe/fedsim.hpp"
#include "safe/localmodel.hpp"
#include "safe/valuation.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace safe {

inline constexpr std::string_view kRunConfigSchema = "safe.run_config/1";
inline constexpr std::string_view kReportSchema = "safe.valuation_report/1";
inline constexpr std::string_view kManifestSchema = "safe.manifest/1";
inline constexpr std::string_view kBenchSchema = "safe.bench/1";

struct DatasetSource {
  enum class Kind { synthetic, idx, csv };
  Kind kind = Kind::synthetic;

  std::size_t num_samples = 1000;
  std::size_t num_features = 10;
  int num_classes = 5;
  double class_separation = 3.0;

  std::string images, labels;
  /// Optional pre-split test files; when set no test fraction is carved out.
  std::string test_images, test_labels;

  std::string csv_path, label_column = "label", test_csv_path;
};

struct TmcSettings {
  std::optional<double> truncation_tolerance;
  std::size_t convergence_window = 100;
  double convergence_tolerance = 1e-4;
  std::optional<std::size_t> max_permutations;
};

struct BenchSettings {
  std::vector<int> players = {4, 6, 8, 10};
  std::vector<std::size_t> workers = {1, 2, 4};
  int scaling_players = 10;
  std::size_t repeats = 3;
  int extrapolate_players = 20;
};

/// Everything needed to reproduce a run. Per-stage seeds are derived from
/// `seed` with derive_seed(seed, "<stage>", ...).
struct RunConfig {
  DatasetSource dataset;
  SplitSpec split;
  FedConfig fed;
  LRConfig lr;
  std::vector<std::string> methods = {"safe"};
  Metric metric = Metric::accuracy;
  bool weighted_ensemble = false;
  TmcSettings tmc;
  ValuationLimits limits;
  std::size_t parallelism = 1;
  std::filesystem::path output_dir = "safe_out";
  Seed seed = 0;
  BenchSettings bench;

  void validate() const;
};

/// Canonical JSON echo (no derived seeds).
Json to_json(const RunConfig& config);
/// Strict parse: unknown fields raise FormatError; absent fields keep defaults.
RunConfig run_config_from_json(const Json& j);

// Derived per-stage seeds.
Seed data_seed(const RunConfig& c);
SplitSpec effective_split(const RunConfig& c);
FedConfig effective_fed(const RunConfig& c);
LRConfig effective_lr(const RunConfig& c, int institution);
TmcOptions effective_tmc(const RunConfig& c);

/// Loads or generates the source data and splits it.
SplitResult load_and_split(const RunConfig& config);

/// Step 1 and 2 in memory: FedAvg model, then per-institution LR models on
/// hidden features.
struct TrainedSystem {
  GlobalModel global;
  std::vector<LocalLRModel> local_models;
};
TrainedSystem train_system(std::span<const LabeledDataset> shards, const RunConfig& config);

struct StagePaths {
  std::filesystem::path root;
  std::filesystem::path split_dir() const { return root / "split"; }
  std::filesystem::path train_dir() const { return root / "train"; }
  std::filesystem::path value_dir() const { return root / "value"; }
  std::filesystem::path bench_dir() const { return root / "bench"; }
  std::filesystem::path test_set() const { return split_dir() / "test.sfds"; }
  std::filesystem::path shard(int k) const;
  std::filesystem::path split_manifest() const { return split_dir() / "manifest.json"; }
  std::filesystem::path global_model() const { return train_dir() / "global_model.json"; }
  std::filesystem::path lr_model(int k) const;
  std::filesystem::path train_metrics() const { return train_dir() / "metrics.json"; }
  std::filesystem::path report() const { return value_dir() / "report.json"; }
  std::filesystem::path shapley_csv() const { return value_dir() / "shapley.csv"; }
  std::filesystem::path utility_table() const { return value_dir() / "utility_table.json"; }
  std::filesystem::path bench_report() const { return bench_dir() / "bench.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

/// Writes shards, test set and a manifest with per-shard label histograms.
Json cmd_split(const RunConfig& config);
/// Reads persisted shards; writes the global model, LR models and a metrics sidecar.
Json cmd_train(const RunConfig& config);
/// Reads persisted checkpoints (and shards only for exact_retrain); writes
/// report.json and shapley.csv.
Json cmd_value(const RunConfig& config);
/// Ensemble latency, 2^n scaling sweep, parallel speedup and a retraining
/// cost extrapolation.
Json cmd_bench(const RunConfig& config);

/// Throws FormatError unless `report` matches the versioned schema exactly.
void validate_report(const Json& report);
/// Human-readable tables for a validated report.
std::string format_report(const Json& report);

/// Report with timing fields removed, for determinism comparisons.
Json report_values(const Json& report);

}  // namespace safe
