#pragma once

#include "safe/types.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace safe {

/// Dense labeled data. Labels are class ids in [0, num_classes).
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t num_features() const { return static_cast<std::size_t>(features.cols()); }

  /// Throws ArgumentError if shapes disagree, a label is out of range,
  /// num_classes < 2, the set is empty, or a feature is non-finite.
  void validate() const;

  /// Rows selected by `indices`, in that order.
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;

  std::vector<std::size_t> class_counts() const;
};

struct InstitutionShard {
  int institution_id = 0;
  LabeledDataset data;
  /// Row indices into the dataset the shard was carved from.
  std::vector<std::size_t> source_indices;
};

enum class SplitScheme { iid, label_skew_pairs, linear_skew };

std::string to_string(SplitScheme s);
SplitScheme split_scheme_from_string(const std::string& s);

struct SplitSpec {
  SplitScheme scheme = SplitScheme::iid;
  int num_institutions = 1;
  double test_fraction = 0.20;
  double surplus_fraction = 0.95;
  /// linear_skew only; when unset the most frequent class (lowest id on ties).
  std::optional<int> majority_class;
  Seed seed = 0;

  void validate() const;
};

struct SplitResult {
  LabeledDataset test_set;
  std::vector<std::size_t> test_indices;
  std::vector<InstitutionShard> shards;
};

LabeledDataset generate_synthetic(std::size_t num_samples, std::size_t num_features,
                                  int num_classes, double class_separation, Seed seed);

/// MNIST-style IDX pair. Pixels are scaled to [0,1].
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

struct CsvDataset {
  LabeledDataset data;
  /// label_names[k] is the original text of class id k.
  std::vector<std::string> label_names;
  std::vector<std::string> feature_names;
};

CsvDataset load_csv(const std::filesystem::path& path, const std::string& label_column);

/// Stratified test extraction followed by partition().
SplitResult split(const LabeledDataset& dataset, const SplitSpec& spec);

/// Shards the whole dataset with no test extraction. Used when the test set
/// comes pre-split (e.g. the official MNIST test files).
std::vector<InstitutionShard> partition(const LabeledDataset& dataset, const SplitSpec& spec);

/// Compact binary container used for persisted shards:
/// "SFDS" | u32 version | u64 rows | u64 cols | u64 classes | i32 labels[rows] | f64 features[rows*cols],
/// all little-endian.
void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace safe
