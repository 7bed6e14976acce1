#include "safe/data.hpp"

#include "safe/errors.hpp"
#include "safe/seed.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>
#include <unordered_map>

namespace safe {

static_assert(std::endian::native == std::endian::little,
              "dataset container assumes a little-endian host");

void LabeledDataset::validate() const {
  if (labels.empty()) throw ArgumentError("dataset is empty");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ArgumentError("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                        std::to_string(labels.size()) + " labels");
  if (num_classes < 2) throw ArgumentError("dataset needs at least 2 classes");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ArgumentError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                          " outside [0, " + std::to_string(num_classes) + ")");
  }
  if (!features.allFinite()) throw ArgumentError("dataset contains non-finite feature values");
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) =
        features.row(static_cast<Eigen::Index>(indices[r]));
    out.labels.push_back(labels[indices[r]]);
  }
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

std::string to_string(SplitScheme s) {
  switch (s) {
    case SplitScheme::iid: return "iid";
    case SplitScheme::label_skew_pairs: return "label_skew_pairs";
    case SplitScheme::linear_skew: return "linear_skew";
  }
  return "?";
}

SplitScheme split_scheme_from_string(const std::string& s) {
  if (s == "iid") return SplitScheme::iid;
  if (s == "label_skew_pairs") return SplitScheme::label_skew_pairs;
  if (s == "linear_skew") return SplitScheme::linear_skew;
  throw ArgumentError("unknown split scheme '" + s + "'");
}

void SplitSpec::validate() const {
  if (num_institutions < 1) throw ArgumentError("num_institutions must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ArgumentError("test_fraction must lie in (0, 1)");
  if (!(surplus_fraction > 0.0 && surplus_fraction < 1.0))
    throw ArgumentError("surplus_fraction must lie in (0, 1)");
}

// ---------------------------------------------------------------------------
// Synthetic data

LabeledDataset generate_synthetic(std::size_t num_samples, std::size_t num_features,
                                  int num_classes, double class_separation, Seed seed) {
  if (num_classes < 2) throw ArgumentError("num_classes must be >= 2");
  if (num_features < 1) throw ArgumentError("num_features must be >= 1");
  if (num_samples < static_cast<std::size_t>(num_classes))
    throw ArgumentError("num_samples must be >= num_classes");
  if (!(class_separation > 0.0) || !std::isfinite(class_separation))
    throw ArgumentError("class_separation must be positive");

  const auto classes = static_cast<std::size_t>(num_classes);
  const auto d = static_cast<Eigen::Index>(num_features);

  // Class k sits at +/- class_separation on axis k mod d; classes beyond 2d
  // get a random direction of the same radius.
  Matrix means = Matrix::Zero(static_cast<Eigen::Index>(classes), d);
  std::mt19937_64 mean_rng(derive_seed(seed, "synthetic.means"));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < classes; ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (k < 2 * num_features) {
      const double sign = (k / num_features) % 2 == 0 ? 1.0 : -1.0;
      means(row, static_cast<Eigen::Index>(k % num_features)) = sign * class_separation;
    } else {
      RowVector dir(d);
      for (Eigen::Index j = 0; j < d; ++j) dir(j) = normal(mean_rng);
      means.row(row) = dir.normalized() * class_separation;
    }
  }

  std::vector<int> labels;
  labels.reserve(num_samples);
  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t count = num_samples / classes + (k < num_samples % classes ? 1 : 0);
    labels.insert(labels.end(), count, static_cast<int>(k));
  }
  std::mt19937_64 rng(derive_seed(seed, "synthetic.samples"));
  std::shuffle(labels.begin(), labels.end(), rng);

  LabeledDataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(num_samples), d);
  for (std::size_t i = 0; i < num_samples; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < d; ++j)
      out.features(r, j) = means(labels[i], j) + normal(rng);
  }
  out.labels = std::move(labels);
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > buf.size())
    throw FormatError(path.string() + ": truncated header at offset " + std::to_string(offset));
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void expect_magic(const std::vector<unsigned char>& buf, std::uint32_t magic,
                  const std::filesystem::path& path) {
  std::uint32_t got = read_be32(buf, 0, path);
  if (got != magic) {
    std::ostringstream msg;
    msg << path.string() << ": bad magic 0x" << std::hex << got << " at offset 0 (expected 0x"
        << magic << ")";
    throw FormatError(msg.str());
  }
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto images = read_all(images_path);
  const auto labels = read_all(labels_path);
  expect_magic(images, 0x00000803u, images_path);
  expect_magic(labels, 0x00000801u, labels_path);

  const std::size_t count = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t label_count = read_be32(labels, 4, labels_path);
  if (count != label_count)
    throw FormatError(images_path.string() + " holds " + std::to_string(count) + " images but " +
                      labels_path.string() + " holds " + std::to_string(label_count) +
                      " labels (count field at offset 4)");

  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + count * pixels)
    throw FormatError(images_path.string() + ": truncated at offset " +
                      std::to_string(images.size()) + ", expected " +
                      std::to_string(16 + count * pixels) + " bytes");
  if (labels.size() < 8 + count)
    throw FormatError(labels_path.string() + ": truncated at offset " +
                      std::to_string(labels.size()) + ", expected " + std::to_string(8 + count) +
                      " bytes");
  if (count == 0) throw FormatError(images_path.string() + ": zero items");

  LabeledDataset out;
  out.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
  out.labels.resize(count);
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* px = images.data() + 16 + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j)
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = px[j] / 255.0;
    out.labels[i] = labels[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = std::max(max_label + 1, 2);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    auto first = cell.find_first_not_of(" \t\r");
    auto last = cell.find_last_not_of(" \t\r");
    cells.push_back(first == std::string::npos ? std::string{}
                                               : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

CsvDataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header row");
  const auto header = split_csv_line(line);
  auto it = std::find(header.begin(), header.end(), label_column);
  if (it == header.end())
    throw ArgumentError(path.string() + ": no column named '" + label_column + "'");
  const auto label_idx = static_cast<std::size_t>(it - header.begin());

  CsvDataset out;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != label_idx) out.feature_names.push_back(header[c]);

  std::unordered_map<std::string, int> label_ids;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw FormatError(path.string() + ": row " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(header.size()));
    std::vector<double> row;
    row.reserve(header.size() - 1);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_idx) continue;
      double value = 0.0;
      const auto& s = cells[c];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError(path.string() + ": row " + std::to_string(line_no) + ", column '" +
                          header[c] + "': non-numeric value '" + s + "'");
      row.push_back(value);
    }
    auto [pos, inserted] =
        label_ids.try_emplace(cells[label_idx], static_cast<int>(out.label_names.size()));
    if (inserted) out.label_names.push_back(cells[label_idx]);
    labels.push_back(pos->second);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path.string() + ": no data rows");

  out.data.num_classes = static_cast<int>(out.label_names.size());
  out.data.labels = std::move(labels);
  out.data.features.resize(static_cast<Eigen::Index>(rows.size()),
                           static_cast<Eigen::Index>(header.size() - 1));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      out.data.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  if (!out.data.features.allFinite())
    throw FormatError(path.string() + ": non-finite feature value");
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

using IndexLists = std::vector<std::vector<std::size_t>>;

/// Source indices grouped by class, each group shuffled with its own seed.
IndexLists shuffled_by_class(const LabeledDataset& ds, const std::vector<std::size_t>& pool,
                             Seed seed, std::string_view label) {
  IndexLists by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t idx : pool) by_class[static_cast<std::size_t>(ds.labels[idx])].push_back(idx);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::mt19937_64 rng(derive_seed(seed, label, {c}));
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
  }
  return by_class;
}

/// Integer allotment of `count` proportional to `weights`; the rounding
/// residue goes to `residue_to`.
std::vector<std::size_t> allot(std::size_t count, const std::vector<std::size_t>& weights,
                               std::size_t residue_to) {
  const std::size_t total = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  std::vector<std::size_t> out(weights.size());
  std::size_t used = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    out[k] = count * weights[k] / total;
    used += out[k];
  }
  out[residue_to] += count - used;
  return out;
}

IndexLists partition_iid(const IndexLists& by_class, std::size_t n) {
  IndexLists shards(n);
  std::size_t next = 0;
  for (const auto& members : by_class)
    for (std::size_t idx : members) shards[next++ % n].push_back(idx);
  return shards;
}

/// Unit-capacity-increment max flow from institutions to non-owned classes.
/// need[k] units must leave institution k, supply[c] units must reach class
/// c; allowed[k][c] marks usable edges. Returns flow[k][c] or throws with
/// the first class whose supply could not be placed.
std::vector<std::vector<std::size_t>> transport(const std::vector<std::size_t>& need,
                                                const std::vector<std::size_t>& supply,
                                                const std::vector<std::vector<bool>>& allowed) {
  const std::size_t n = need.size();
  const std::size_t classes = supply.size();
  std::vector<std::vector<std::size_t>> flow(n, std::vector<std::size_t>(classes, 0));
  std::vector<std::size_t> sent(n, 0), received(classes, 0);
  const std::size_t total = std::accumulate(need.begin(), need.end(), std::size_t{0});

  std::vector<std::size_t> cap(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t options = 0;
    for (std::size_t c = 0; c < classes; ++c) options += allowed[k][c] ? 1 : 0;
    cap[k] = options == 0 ? 0 : (need[k] + options - 1) / options;
  }

  std::size_t moved = 0;
  const std::size_t max_need = need.empty() ? 0 : *std::max_element(need.begin(), need.end());
  for (;;) {
    // BFS in the residual graph; nodes are institutions [0,n) and classes [n,n+classes).
    for (;;) {
      std::vector<long> parent(n + classes, -2);
      std::queue<std::size_t> q;
      for (std::size_t k = 0; k < n; ++k) {
        if (sent[k] < need[k]) {
          parent[k] = -1;
          q.push(k);
        }
      }
      long sink_class = -1;
      while (!q.empty() && sink_class < 0) {
        std::size_t u = q.front();
        q.pop();
        if (u < n) {
          for (std::size_t c = 0; c < classes; ++c) {
            if (allowed[u][c] && flow[u][c] < cap[u] && parent[n + c] == -2) {
              parent[n + c] = static_cast<long>(u);
              if (received[c] < supply[c]) {
                sink_class = static_cast<long>(c);
                break;
              }
              q.push(n + c);
            }
          }
        } else {
          std::size_t c = u - n;
          for (std::size_t k = 0; k < n; ++k) {
            if (flow[k][c] > 0 && parent[k] == -2) {
              parent[k] = static_cast<long>(u);
              q.push(k);
            }
          }
        }
      }
      if (sink_class < 0) break;
      // Walk back alternating class <- institution (forward) and institution <- class (reverse).
      std::size_t node = n + static_cast<std::size_t>(sink_class);
      ++received[static_cast<std::size_t>(sink_class)];
      for (;;) {
        auto k = static_cast<std::size_t>(parent[node]);
        ++flow[k][node - n];
        if (parent[k] == -1) {
          ++sent[k];
          break;
        }
        auto prev_class = static_cast<std::size_t>(parent[k]);
        --flow[k][prev_class - n];
        node = prev_class;
      }
      ++moved;
    }
    if (moved == total) return flow;
    bool raised = false;
    for (std::size_t k = 0; k < n; ++k) {
      if (cap[k] < max_need) {
        ++cap[k];
        raised = true;
      }
    }
    if (!raised) break;
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (received[c] < supply[c])
      throw SplitInfeasibleError("label_skew_pairs: class " + std::to_string(c) + " has " +
                                     std::to_string(supply[c] - received[c]) +
                                     " samples that no institution outside its owner can absorb",
                                 static_cast<int>(c));
  }
  throw SplitInfeasibleError("label_skew_pairs: remainder allocation failed", -1);
}

IndexLists partition_label_skew(const IndexLists& by_class, const SplitSpec& spec) {
  const auto n = static_cast<std::size_t>(spec.num_institutions);
  const std::size_t classes = by_class.size();
  if (classes < 2 * n)
    throw SplitInfeasibleError("label_skew_pairs with " + std::to_string(n) +
                                   " institutions needs at least " + std::to_string(2 * n) +
                                   " classes, dataset has " + std::to_string(classes),
                               static_cast<int>(classes));

  std::size_t pool = 0;
  for (const auto& m : by_class) pool += m.size();
  std::vector<std::size_t> size(n), surplus(n), need(n);
  std::vector<std::size_t> owner_take(classes, 0);
  for (std::size_t k = 0; k < n; ++k) {
    size[k] = pool / n + (k < pool % n ? 1 : 0);
    surplus[k] = static_cast<std::size_t>(std::llround(spec.surplus_fraction * static_cast<double>(size[k])));
    need[k] = size[k] - surplus[k];
    owner_take[2 * k] = (surplus[k] + 1) / 2;
    owner_take[2 * k + 1] = surplus[k] / 2;
    for (std::size_t c : {2 * k, 2 * k + 1}) {
      if (by_class[c].size() < owner_take[c])
        throw SplitInfeasibleError("label_skew_pairs: class " + std::to_string(c) + " has " +
                                       std::to_string(by_class[c].size()) +
                                       " samples, institution " + std::to_string(k) + " needs " +
                                       std::to_string(owner_take[c]),
                                   static_cast<int>(c));
    }
  }

  std::vector<std::size_t> supply(classes);
  std::vector<std::vector<bool>> allowed(n, std::vector<bool>(classes, true));
  for (std::size_t c = 0; c < classes; ++c) supply[c] = by_class[c].size() - owner_take[c];
  for (std::size_t k = 0; k < n; ++k) allowed[k][2 * k] = allowed[k][2 * k + 1] = false;
  const auto flow = transport(need, supply, allowed);

  IndexLists shards(n);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t pos = 0;
    const auto& members = by_class[c];
    if (c < 2 * n) {
      for (; pos < owner_take[c]; ++pos) shards[c / 2].push_back(members[pos]);
    }
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < flow[k][c]; ++j) shards[k].push_back(members[pos++]);
  }
  return shards;
}

IndexLists partition_linear_skew(const IndexLists& by_class, const SplitSpec& spec) {
  const auto n = static_cast<std::size_t>(spec.num_institutions);
  std::size_t majority = 0;
  if (spec.majority_class) {
    if (*spec.majority_class < 0 || static_cast<std::size_t>(*spec.majority_class) >= by_class.size())
      throw ArgumentError("majority_class out of range");
    majority = static_cast<std::size_t>(*spec.majority_class);
  } else {
    for (std::size_t c = 1; c < by_class.size(); ++c)
      if (by_class[c].size() > by_class[majority].size()) majority = c;
  }
  std::vector<std::size_t> rising(n), falling(n);
  for (std::size_t k = 0; k < n; ++k) {
    rising[k] = k + 1;
    falling[k] = n - k;
  }
  IndexLists shards(n);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto counts = c == majority ? allot(by_class[c].size(), rising, n - 1)
                                      : allot(by_class[c].size(), falling, 0);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < counts[k]; ++j) shards[k].push_back(by_class[c][pos++]);
  }
  return shards;
}

std::vector<InstitutionShard> build_shards(const LabeledDataset& ds, const std::vector<std::size_t>& pool,
                                           const SplitSpec& spec) {
  const auto n = static_cast<std::size_t>(spec.num_institutions);
  const auto by_class = shuffled_by_class(ds, pool, spec.seed, "split.partition");
  IndexLists lists;
  switch (spec.scheme) {
    case SplitScheme::iid: lists = partition_iid(by_class, n); break;
    case SplitScheme::label_skew_pairs: lists = partition_label_skew(by_class, spec); break;
    case SplitScheme::linear_skew: lists = partition_linear_skew(by_class, spec); break;
  }
  std::vector<InstitutionShard> shards;
  shards.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto& idx = lists[k];
    if (idx.empty())
      throw SplitInfeasibleError(to_string(spec.scheme) + ": institution " + std::to_string(k) +
                                     " would receive no samples from a pool of " +
                                     std::to_string(pool.size()),
                                 -1);
    std::sort(idx.begin(), idx.end());
    InstitutionShard shard;
    shard.institution_id = static_cast<int>(k);
    shard.data = ds.subset(idx);
    shard.source_indices = std::move(idx);
    shards.push_back(std::move(shard));
  }
  return shards;
}

}  // namespace

std::vector<InstitutionShard> partition(const LabeledDataset& dataset, const SplitSpec& spec) {
  dataset.validate();
  spec.validate();
  std::vector<std::size_t> pool(dataset.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  return build_shards(dataset, pool, spec);
}

SplitResult split(const LabeledDataset& dataset, const SplitSpec& spec) {
  dataset.validate();
  spec.validate();
  const auto by_class = shuffled_by_class(dataset, [&] {
    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }(), spec.seed, "split.test");

  SplitResult out;
  std::vector<std::size_t> pool;
  for (const auto& members : by_class) {
    const auto take = static_cast<std::size_t>(
        std::llround(spec.test_fraction * static_cast<double>(members.size())));
    out.test_indices.insert(out.test_indices.end(), members.begin(),
                            members.begin() + static_cast<std::ptrdiff_t>(take));
    pool.insert(pool.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  if (out.test_indices.empty()) throw SplitInfeasibleError("test split would be empty", -1);
  std::sort(out.test_indices.begin(), out.test_indices.end());
  std::sort(pool.begin(), pool.end());
  out.test_set = dataset.subset(out.test_indices);
  out.shards = build_shards(dataset, pool, spec);
  return out;
}

// ---------------------------------------------------------------------------
// Binary container

namespace {
constexpr char kMagic[4] = {'S', 'F', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  auto offset = in.tellg();
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError(path.string() + ": truncated at offset " + std::to_string(offset));
  return v;
}
}  // namespace

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(kMagic, 4);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(dataset.size()));
  put(out, static_cast<std::uint64_t>(dataset.features.cols()));
  put(out, static_cast<std::uint64_t>(dataset.num_classes));
  for (int y : dataset.labels) put(out, static_cast<std::int32_t>(y));
  out.write(reinterpret_cast<const char*>(dataset.features.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(dataset.features.size())));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path.string() + ": bad magic at offset 0 (expected SFDS)");
  if (auto v = get<std::uint32_t>(in, path); v != kVersion)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(v) + " at offset 4");
  const auto rows = get<std::uint64_t>(in, path);
  const auto cols = get<std::uint64_t>(in, path);
  const auto classes = get<std::uint64_t>(in, path);
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(classes);
  ds.labels.resize(rows);
  for (auto& y : ds.labels) y = get<std::int32_t>(in, path);
  ds.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  auto offset = in.tellg();
  if (!in.read(reinterpret_cast<char*>(ds.features.data()),
               static_cast<std::streamsize>(sizeof(double) * rows * cols)))
    throw FormatError(path.string() + ": truncated feature block at offset " + std::to_string(offset));
  ds.validate();
  return ds;
}

}  // namespace safe
