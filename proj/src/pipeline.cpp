#include "safe/pipeline.hpp"

#include "safe/errors.hpp"
#include "safe/metrics.hpp"
#include "safe/parallel.hpp"
#include "safe/seed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace safe {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

const std::vector<std::string> kKnownMethods = {"safe", "exact_retrain", "tmc"};

void reject_unknown(const Json& obj, std::initializer_list<std::string_view> allowed,
                    std::string_view context) {
  if (!obj.is_object()) throw FormatError(std::string(context) + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw FormatError("unknown field '" + key + "' in " + std::string(context));
  }
}

template <typename T>
void read_opt(const Json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::string kind_name(DatasetSource::Kind k) {
  switch (k) {
    case DatasetSource::Kind::synthetic: return "synthetic";
    case DatasetSource::Kind::idx: return "idx";
    case DatasetSource::Kind::csv: return "csv";
  }
  return "?";
}

void require_file(const fs::path& p, std::string_view what, std::string_view hint) {
  if (!fs::exists(p))
    throw IoError(std::string(what) + " not found at '" + p.string() + "'; " + std::string(hint));
}

Json histogram(const LabeledDataset& ds) { return ds.class_counts(); }

void update_manifest(const StagePaths& paths, const std::string& stage, const Json& entry) {
  Json m = fs::exists(paths.manifest()) ? read_json_file(paths.manifest())
                                        : Json{{"schema", kManifestSchema}, {"stages", Json::object()}};
  m["stages"][stage] = entry;
  write_json_file(paths.manifest(), m);
}

std::string rel(const StagePaths& paths, const fs::path& p) {
  return fs::relative(p, paths.root).generic_string();
}

Json metric_pair(const Matrix& probs, const LabeledDataset& test) {
  Json j;
  j["accuracy"] = accuracy(probs, test.labels);
  try {
    j["macro_auroc"] = macro_auroc(probs, test.labels).value;
  } catch (const NumericError&) {
    j["macro_auroc"] = nullptr;
  }
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
  split.validate();
  fed.validate();
  lr.validate();
  if (parallelism < 1) throw ArgumentError("parallelism must be >= 1");
  if (methods.empty()) throw ArgumentError("at least one valuation method is required");
  std::set<std::string> seen;
  for (const auto& m : methods) {
    if (std::find(kKnownMethods.begin(), kKnownMethods.end(), m) == kKnownMethods.end())
      throw ArgumentError("unknown valuation method '" + m + "' (expected safe, exact_retrain, tmc)");
    if (!seen.insert(m).second) throw ArgumentError("valuation method '" + m + "' listed twice");
  }
  if (seen.count("exact_retrain") && split.num_institutions > limits.max_retrain_players)
    throw CapacityError("exact_retrain with " + std::to_string(split.num_institutions) +
                        " institutions exceeds the cap of " +
                        std::to_string(limits.max_retrain_players) +
                        ": it trains 2^n federated models");
  TmcOptions t;
  t.truncation_tolerance = tmc.truncation_tolerance;
  t.convergence_window = tmc.convergence_window;
  t.convergence_tolerance = tmc.convergence_tolerance;
  t.max_permutations = tmc.max_permutations;
  t.validate();
  switch (dataset.kind) {
    case DatasetSource::Kind::synthetic:
      if (dataset.num_classes < 2 || dataset.num_features < 1 ||
          dataset.num_samples < static_cast<std::size_t>(dataset.num_classes) ||
          !(dataset.class_separation > 0.0))
        throw ArgumentError("invalid synthetic dataset parameters");
      break;
    case DatasetSource::Kind::idx:
      if (dataset.images.empty() || dataset.labels.empty())
        throw ArgumentError("idx dataset needs both images and labels paths");
      if (dataset.test_images.empty() != dataset.test_labels.empty())
        throw ArgumentError("idx test set needs both test_images and test_labels");
      break;
    case DatasetSource::Kind::csv:
      if (dataset.csv_path.empty()) throw ArgumentError("csv dataset needs a path");
      break;
  }
  if (bench.repeats < 1) throw ArgumentError("bench.repeats must be >= 1");
}

Json to_json(const RunConfig& c) {
  Json ds = {{"source", kind_name(c.dataset.kind)}};
  switch (c.dataset.kind) {
    case DatasetSource::Kind::synthetic:
      ds["num_samples"] = c.dataset.num_samples;
      ds["num_features"] = c.dataset.num_features;
      ds["num_classes"] = c.dataset.num_classes;
      ds["class_separation"] = c.dataset.class_separation;
      break;
    case DatasetSource::Kind::idx:
      ds["images"] = c.dataset.images;
      ds["labels"] = c.dataset.labels;
      ds["test_images"] = c.dataset.test_images;
      ds["test_labels"] = c.dataset.test_labels;
      break;
    case DatasetSource::Kind::csv:
      ds["path"] = c.dataset.csv_path;
      ds["label_column"] = c.dataset.label_column;
      ds["test_path"] = c.dataset.test_csv_path;
      break;
  }
  Json split = {{"scheme", to_string(c.split.scheme)},
                {"num_institutions", c.split.num_institutions},
                {"test_fraction", c.split.test_fraction},
                {"surplus_fraction", c.split.surplus_fraction}};
  split["majority_class"] = c.split.majority_class ? Json(*c.split.majority_class) : Json(nullptr);
  Json tmc = {{"convergence_window", c.tmc.convergence_window},
              {"convergence_tolerance", c.tmc.convergence_tolerance}};
  tmc["truncation_tolerance"] =
      c.tmc.truncation_tolerance ? Json(*c.tmc.truncation_tolerance) : Json(nullptr);
  tmc["max_permutations"] = c.tmc.max_permutations ? Json(*c.tmc.max_permutations) : Json(nullptr);
  return {{"schema", kRunConfigSchema},
          {"seed", c.seed},
          {"output_dir", c.output_dir.generic_string()},
          {"parallelism", c.parallelism},
          {"dataset", ds},
          {"split", split},
          {"fed",
           {{"rounds", c.fed.rounds},
            {"local_epochs", c.fed.local_epochs},
            {"batch_size", c.fed.batch_size},
            {"learning_rate", c.fed.learning_rate},
            {"hidden_dim", c.fed.hidden_dim}}},
          {"lr",
           {{"l1_ratio", c.lr.l1_ratio},
            {"reg_strength", c.lr.reg_strength},
            {"max_epochs", c.lr.max_epochs},
            {"tolerance", c.lr.tolerance}}},
          {"valuation",
           {{"methods", c.methods},
            {"metric", to_string(c.metric)},
            {"weighted_ensemble", c.weighted_ensemble},
            {"tmc", tmc},
            {"max_ensemble_players", c.limits.max_ensemble_players},
            {"max_retrain_players", c.limits.max_retrain_players},
            {"max_permutation_players", c.limits.max_permutation_players}}},
          {"bench",
           {{"players", c.bench.players},
            {"workers", c.bench.workers},
            {"scaling_players", c.bench.scaling_players},
            {"repeats", c.bench.repeats},
            {"extrapolate_players", c.bench.extrapolate_players}}}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  try {
    reject_unknown(j, {"schema", "seed", "output_dir", "parallelism", "dataset", "split", "fed", "lr",
                       "valuation", "bench"},
                   "run config");
    if (j.contains("schema") && j["schema"] != kRunConfigSchema)
      throw FormatError("run config schema must be '" + std::string(kRunConfigSchema) + "'");
    read_opt(j, "seed", c.seed);
    read_opt(j, "parallelism", c.parallelism);
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();

    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      const std::string source = d.value("source", "synthetic");
      if (source == "synthetic") {
        reject_unknown(d, {"source", "num_samples", "num_features", "num_classes", "class_separation"},
                       "dataset");
        c.dataset.kind = DatasetSource::Kind::synthetic;
        read_opt(d, "num_samples", c.dataset.num_samples);
        read_opt(d, "num_features", c.dataset.num_features);
        read_opt(d, "num_classes", c.dataset.num_classes);
        read_opt(d, "class_separation", c.dataset.class_separation);
      } else if (source == "idx") {
        reject_unknown(d, {"source", "images", "labels", "test_images", "test_labels"}, "dataset");
        c.dataset.kind = DatasetSource::Kind::idx;
        read_opt(d, "images", c.dataset.images);
        read_opt(d, "labels", c.dataset.labels);
        read_opt(d, "test_images", c.dataset.test_images);
        read_opt(d, "test_labels", c.dataset.test_labels);
      } else if (source == "csv") {
        reject_unknown(d, {"source", "path", "label_column", "test_path"}, "dataset");
        c.dataset.kind = DatasetSource::Kind::csv;
        read_opt(d, "path", c.dataset.csv_path);
        read_opt(d, "label_column", c.dataset.label_column);
        read_opt(d, "test_path", c.dataset.test_csv_path);
      } else {
        throw FormatError("unknown dataset source '" + source + "'");
      }
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      reject_unknown(s, {"scheme", "num_institutions", "test_fraction", "surplus_fraction", "majority_class"},
                     "split");
      if (s.contains("scheme")) c.split.scheme = split_scheme_from_string(s["scheme"].get<std::string>());
      read_opt(s, "num_institutions", c.split.num_institutions);
      read_opt(s, "test_fraction", c.split.test_fraction);
      read_opt(s, "surplus_fraction", c.split.surplus_fraction);
      if (s.contains("majority_class") && !s["majority_class"].is_null())
        c.split.majority_class = s["majority_class"].get<int>();
    }
    if (j.contains("fed")) {
      const auto& f = j["fed"];
      reject_unknown(f, {"rounds", "local_epochs", "batch_size", "learning_rate", "hidden_dim"}, "fed");
      read_opt(f, "rounds", c.fed.rounds);
      read_opt(f, "local_epochs", c.fed.local_epochs);
      read_opt(f, "batch_size", c.fed.batch_size);
      read_opt(f, "learning_rate", c.fed.learning_rate);
      read_opt(f, "hidden_dim", c.fed.hidden_dim);
    }
    if (j.contains("lr")) {
      const auto& l = j["lr"];
      reject_unknown(l, {"l1_ratio", "reg_strength", "max_epochs", "tolerance"}, "lr");
      read_opt(l, "l1_ratio", c.lr.l1_ratio);
      read_opt(l, "reg_strength", c.lr.reg_strength);
      read_opt(l, "max_epochs", c.lr.max_epochs);
      read_opt(l, "tolerance", c.lr.tolerance);
    }
    if (j.contains("valuation")) {
      const auto& v = j["valuation"];
      reject_unknown(v, {"methods", "metric", "weighted_ensemble", "tmc", "max_ensemble_players",
                         "max_retrain_players", "max_permutation_players"},
                     "valuation");
      read_opt(v, "methods", c.methods);
      if (v.contains("metric")) c.metric = metric_from_string(v["metric"].get<std::string>());
      read_opt(v, "weighted_ensemble", c.weighted_ensemble);
      read_opt(v, "max_ensemble_players", c.limits.max_ensemble_players);
      read_opt(v, "max_retrain_players", c.limits.max_retrain_players);
      read_opt(v, "max_permutation_players", c.limits.max_permutation_players);
      if (v.contains("tmc")) {
        const auto& t = v["tmc"];
        reject_unknown(t, {"truncation_tolerance", "convergence_window", "convergence_tolerance",
                           "max_permutations"},
                       "valuation.tmc");
        if (t.contains("truncation_tolerance") && !t["truncation_tolerance"].is_null())
          c.tmc.truncation_tolerance = t["truncation_tolerance"].get<double>();
        if (t.contains("max_permutations") && !t["max_permutations"].is_null())
          c.tmc.max_permutations = t["max_permutations"].get<std::size_t>();
        read_opt(t, "convergence_window", c.tmc.convergence_window);
        read_opt(t, "convergence_tolerance", c.tmc.convergence_tolerance);
      }
    }
    if (j.contains("bench")) {
      const auto& b = j["bench"];
      reject_unknown(b, {"players", "workers", "scaling_players", "repeats", "extrapolate_players"}, "bench");
      read_opt(b, "players", c.bench.players);
      read_opt(b, "workers", c.bench.workers);
      read_opt(b, "scaling_players", c.bench.scaling_players);
      read_opt(b, "repeats", c.bench.repeats);
      read_opt(b, "extrapolate_players", c.bench.extrapolate_players);
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("run config: ") + e.what());
  }
  return c;
}

Seed data_seed(const RunConfig& c) { return derive_seed(c.seed, "data"); }

SplitSpec effective_split(const RunConfig& c) {
  SplitSpec s = c.split;
  s.seed = derive_seed(c.seed, "split");
  return s;
}

FedConfig effective_fed(const RunConfig& c) {
  FedConfig f = c.fed;
  f.seed = derive_seed(c.seed, "fed");
  f.parallelism = c.parallelism;
  return f;
}

LRConfig effective_lr(const RunConfig& c, int institution) {
  LRConfig l = c.lr;
  l.seed = derive_seed(c.seed, "lr", {static_cast<std::uint64_t>(institution)});
  return l;
}

TmcOptions effective_tmc(const RunConfig& c) {
  TmcOptions t;
  t.truncation_tolerance = c.tmc.truncation_tolerance;
  t.convergence_window = c.tmc.convergence_window;
  t.convergence_tolerance = c.tmc.convergence_tolerance;
  t.max_permutations = c.tmc.max_permutations;
  t.seed = derive_seed(c.seed, "tmc");
  return t;
}

// ---------------------------------------------------------------------------
// Stages

fs::path StagePaths::shard(int k) const {
  return split_dir() / ("shard_" + std::to_string(k) + ".sfds");
}

fs::path StagePaths::lr_model(int k) const {
  return train_dir() / ("lr_model_" + std::to_string(k) + ".json");
}

SplitResult load_and_split(const RunConfig& config) {
  const SplitSpec spec = effective_split(config);
  const auto& src = config.dataset;
  switch (src.kind) {
    case DatasetSource::Kind::synthetic:
      return split(generate_synthetic(src.num_samples, src.num_features, src.num_classes,
                                      src.class_separation, data_seed(config)),
                   spec);
    case DatasetSource::Kind::idx: {
      LabeledDataset train = load_idx(src.images, src.labels);
      if (src.test_images.empty()) return split(train, spec);
      LabeledDataset test = load_idx(src.test_images, src.test_labels);
      const int classes = std::max(train.num_classes, test.num_classes);
      train.num_classes = test.num_classes = classes;
      SplitResult out;
      out.test_set = std::move(test);
      out.shards = partition(train, spec);
      return out;
    }
    case DatasetSource::Kind::csv: {
      CsvDataset train = load_csv(src.csv_path, src.label_column);
      if (src.test_csv_path.empty()) return split(train.data, spec);
      CsvDataset test = load_csv(src.test_csv_path, src.label_column);
      // Re-encode test labels with the training file's ids.
      std::vector<int> remap;
      for (const auto& name : test.label_names) {
        auto it = std::find(train.label_names.begin(), train.label_names.end(), name);
        if (it == train.label_names.end())
          throw FormatError(src.test_csv_path + ": label '" + name + "' never appears in " +
                            src.csv_path);
        remap.push_back(static_cast<int>(it - train.label_names.begin()));
      }
      for (auto& y : test.data.labels) y = remap[static_cast<std::size_t>(y)];
      test.data.num_classes = train.data.num_classes;
      if (test.data.num_features() != train.data.num_features())
        throw FormatError(src.test_csv_path + ": feature columns differ from " + src.csv_path);
      SplitResult out;
      out.test_set = std::move(test.data);
      out.shards = partition(train.data, spec);
      return out;
    }
  }
  throw ArgumentError("unknown dataset source");
}

TrainedSystem train_system(std::span<const LabeledDataset> shards, const RunConfig& config) {
  TrainedSystem sys;
  sys.global = train_federated(shards, effective_fed(config));
  sys.local_models.resize(shards.size());
  parallel_for(shards.size(), config.parallelism, [&](std::size_t k) {
    const int id = static_cast<int>(k);
    sys.local_models[k] =
        train_lr(extract_features(sys.global, shards[k]), effective_lr(config, id), id);
  });
  return sys;
}

Json cmd_split(const RunConfig& config) {
  config.validate();
  const StagePaths paths{config.output_dir};
  fs::create_directories(paths.split_dir());
  const SplitResult result = load_and_split(config);

  save_dataset(result.test_set, paths.test_set());
  Json shards = Json::array();
  Json files = {rel(paths, paths.test_set())};
  for (const auto& shard : result.shards) {
    save_dataset(shard.data, paths.shard(shard.institution_id));
    files.push_back(rel(paths, paths.shard(shard.institution_id)));
    shards.push_back({{"institution", shard.institution_id},
                      {"num_samples", shard.data.size()},
                      {"label_histogram", histogram(shard.data)},
                      {"file", rel(paths, paths.shard(shard.institution_id))}});
  }
  Json manifest = {{"schema", "safe.split_manifest/1"},
                   {"scheme", to_string(config.split.scheme)},
                   {"num_institutions", config.split.num_institutions},
                   {"num_classes", result.test_set.num_classes},
                   {"num_features", result.test_set.num_features()},
                   {"test_set",
                    {{"num_samples", result.test_set.size()},
                     {"label_histogram", histogram(result.test_set)},
                     {"file", rel(paths, paths.test_set())}}},
                   {"shards", shards},
                   {"config", to_json(config)}};
  write_json_file(paths.split_manifest(), manifest);
  files.push_back(rel(paths, paths.split_manifest()));
  update_manifest(paths, "split", {{"files", files}});
  return manifest;
}

Json cmd_train(const RunConfig& config) {
  config.validate();
  const StagePaths paths{config.output_dir};
  const int n = config.split.num_institutions;
  const std::string hint = "run the 'split' subcommand first";
  require_file(paths.test_set(), "test set", hint);
  std::vector<LabeledDataset> shards;
  for (int k = 0; k < n; ++k) {
    require_file(paths.shard(k), "shard file for institution " + std::to_string(k), hint);
    shards.push_back(load_dataset(paths.shard(k)));
  }
  const LabeledDataset test = load_dataset(paths.test_set());

  const auto start = Clock::now();
  const TrainedSystem sys = train_system(shards, config);
  const double train_ms = elapsed_ms(start);

  fs::create_directories(paths.train_dir());
  write_json_file(paths.global_model(), to_json(sys.global));
  Json files = {rel(paths, paths.global_model())};
  const LabeledDataset test_features = extract_features(sys.global, test);
  Json lr_metrics = Json::array();
  for (const auto& m : sys.local_models) {
    write_json_file(paths.lr_model(m.institution_id), to_json(m));
    files.push_back(rel(paths, paths.lr_model(m.institution_id)));
    Json entry = metric_pair(predict_proba(m, test_features.features), test);
    entry["institution"] = m.institution_id;
    entry["train_samples"] = m.train_samples;
    entry["degenerate"] = m.degenerate_class.has_value();
    lr_metrics.push_back(entry);
  }
  Json metrics = {
      {"schema", "safe.train_metrics/1"},
      {"num_institutions", n},
      {"global_model", metric_pair(predict_proba(sys.global, test.features), test)},
      {"lr_ensemble",
       metric_pair(ensemble_predict(sys.local_models, test_features.features, config.weighted_ensemble),
                   test)},
      {"lr_models", lr_metrics},
      {"timings_ms", {{"train", train_ms}}}};
  write_json_file(paths.train_metrics(), metrics);
  files.push_back(rel(paths, paths.train_metrics()));
  update_manifest(paths, "train", {{"files", files}});
  return metrics;
}

Json cmd_value(const RunConfig& config) {
  config.validate();
  const StagePaths paths{config.output_dir};
  const int n = config.split.num_institutions;
  const std::string hint = "run the 'train' subcommand first";

  const auto load_start = Clock::now();
  require_file(paths.test_set(), "test set", "run the 'split' subcommand first");
  require_file(paths.global_model(), "global model checkpoint", hint);
  const LabeledDataset test = load_dataset(paths.test_set());
  const GlobalModel global = global_model_from_json(read_json_file(paths.global_model()));
  std::vector<LocalLRModel> models;
  for (int k = 0; k < n; ++k) {
    require_file(paths.lr_model(k), "LR model for institution " + std::to_string(k), hint);
    models.push_back(lr_model_from_json(read_json_file(paths.lr_model(k))));
  }
  const LabeledDataset test_features = extract_features(global, test);
  const CoalitionEvaluator evaluator(models, test_features, config.metric, config.weighted_ensemble);
  Json timings = {{"load", elapsed_ms(load_start)}};

  Json warnings = Json::array();
  for (int c : evaluator.skipped_classes())
    warnings.push_back("macro_auroc: class " + std::to_string(c) +
                       " has no positive or no negative test sample and was skipped");

  fs::create_directories(paths.value_dir());
  Json files = Json::array();
  std::vector<std::pair<std::string, ShapleyVector>> results;
  for (const auto& method : kKnownMethods) {
    if (std::find(config.methods.begin(), config.methods.end(), method) == config.methods.end())
      continue;
    const auto start = Clock::now();
    if (method == "safe") {
      const UtilityTable table = evaluator.complete_table(config.parallelism, config.limits);
      ShapleyVector v = exact_shapley(table, ShapleyMethod::exact_ensemble);
      results.emplace_back(method, std::move(v));
      write_json_file(paths.utility_table(), to_json(table));
      files.push_back(rel(paths, paths.utility_table()));
    } else if (method == "exact_retrain") {
      if (n > config.limits.max_retrain_players)
        throw CapacityError("exact_retrain refused for " + std::to_string(n) +
                            " institutions (cap " + std::to_string(config.limits.max_retrain_players) +
                            "): it trains 2^n federated models");
      std::vector<LabeledDataset> shards;
      for (int k = 0; k < n; ++k) {
        require_file(paths.shard(k), "shard file for institution " + std::to_string(k),
                     "exact_retrain needs the raw shards from 'split'");
        shards.push_back(load_dataset(paths.shard(k)));
      }
      FedConfig fed = effective_fed(config);
      fed.seed = derive_seed(config.seed, "retrain");
      results.emplace_back(method,
                           exact_shapley_retrain(shards, test, fed, config.metric, config.limits));
    } else {
      results.emplace_back(method, tmc_shapley(evaluator, effective_tmc(config), config.limits));
    }
    timings[method] = elapsed_ms(start);
  }

  Json methods = Json::object();
  Json names = Json::array();
  for (const auto& [name, v] : results) {
    methods[name] = to_json(v);
    names.push_back(name);
  }
  Json matrix = Json::array();
  for (const auto& [a_name, a] : results) {
    Json row = Json::array();
    for (const auto& [b_name, b] : results) {
      try {
        row.push_back(cosine_similarity(a, b));
      } catch (const NumericError&) {
        row.push_back(nullptr);
        if (a_name <= b_name)
          warnings.push_back("cosine similarity undefined between " + a_name + " and " + b_name +
                             " (zero vector)");
      }
    }
    matrix.push_back(row);
  }

  Json report = {
      {"schema", kReportSchema},
      {"num_institutions", n},
      {"metric", to_string(config.metric)},
      {"performance",
       {{"fl_global", metric_pair(predict_proba(global, test.features), test)},
        {"lr_ensemble",
         metric_pair(ensemble_predict(models, test_features.features, config.weighted_ensemble),
                     test)}}},
      {"methods", methods},
      {"similarity", {{"methods", names}, {"matrix", matrix}}},
      {"warnings", warnings},
      {"timings_ms", timings},
      {"config", to_json(config)}};
  validate_report(report);
  write_json_file(paths.report(), report);

  std::ofstream csv(paths.shapley_csv(), std::ios::trunc);
  if (!csv) throw IoError("cannot write '" + paths.shapley_csv().string() + "'");
  csv << "institution";
  for (const auto& [name, _] : results) csv << ',' << name;
  csv << '\n' << std::setprecision(17);
  for (int k = 0; k < n; ++k) {
    csv << k;
    for (const auto& [_, v] : results) csv << ',' << v.values[static_cast<std::size_t>(k)];
    csv << '\n';
  }
  files.push_back(rel(paths, paths.report()));
  files.push_back(rel(paths, paths.shapley_csv()));
  update_manifest(paths, "value", {{"files", files}});
  return report;
}

// ---------------------------------------------------------------------------
// Benchmark

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <typename Fn>
double median_ms(std::size_t repeats, Fn&& fn) {
  std::vector<double> times;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto start = Clock::now();
    fn();
    times.push_back(elapsed_ms(start));
  }
  return median(times);
}

}  // namespace

Json cmd_bench(const RunConfig& config) {
  config.validate();
  const StagePaths paths{config.output_dir};
  const auto& b = config.bench;
  int max_players = std::max(b.scaling_players, config.split.num_institutions);
  for (int p : b.players) max_players = std::max(max_players, p);
  if (max_players > config.limits.max_ensemble_players)
    throw CapacityError("bench sweep reaches " + std::to_string(max_players) +
                        " institutions, above the ensemble cap");

  RunConfig bench_cfg = config;
  bench_cfg.split.scheme = SplitScheme::iid;
  bench_cfg.split.num_institutions = max_players;
  const SplitResult data = load_and_split(bench_cfg);

  // Ensembling cost does not depend on how members were trained, so the
  // sweep uses LR models fitted directly on each shard's raw features.
  std::vector<LocalLRModel> models(data.shards.size());
  parallel_for(models.size(), config.parallelism, [&](std::size_t k) {
    models[k] = train_lr(data.shards[k].data, effective_lr(config, static_cast<int>(k)),
                         static_cast<int>(k));
  });
  auto first = [&](int n) { return std::span<const LocalLRModel>(models.data(), static_cast<std::size_t>(n)); };

  // Latency of building and scoring one ensemble from scratch.
  const CoalitionEvaluator scaling_eval(first(b.scaling_players), data.test_set, config.metric);
  std::mt19937_64 rng(derive_seed(config.seed, "bench"));
  std::uniform_int_distribution<Coalition> pick(1, grand_coalition(b.scaling_players));
  std::vector<Coalition> sample(200);
  for (auto& s : sample) s = pick(rng);
  double sink = 0.0;
  const double direct_ms = median_ms(b.repeats, [&] {
    for (Coalition s : sample) sink += scaling_eval.utility(s);
  }) / static_cast<double>(sample.size());

  Json sweep = Json::array();
  std::vector<double> xs, ys;
  for (int n : b.players) {
    const CoalitionEvaluator eval(first(n), data.test_set, config.metric);
    const double ms = median_ms(b.repeats, [&] { eval.complete_table(1, config.limits); });
    sweep.push_back({{"players", n},
                     {"coalitions", (std::size_t{1} << n)},
                     {"table_ms", ms},
                     {"per_coalition_ms", ms / static_cast<double>(std::size_t{1} << n)}});
    xs.push_back(n);
    ys.push_back(std::log2(std::max(ms, 1e-9)));
  }
  double slope = 0.0;
  if (xs.size() >= 2) {
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      num += (xs[i] - mx) * (ys[i] - my);
      den += (xs[i] - mx) * (xs[i] - mx);
    }
    slope = num / den;
  }

  Json scaling = Json::array();
  double base_ms = 0.0;
  for (std::size_t w : b.workers) {
    const double ms = median_ms(b.repeats, [&] { scaling_eval.complete_table(w, config.limits); });
    if (base_ms == 0.0) base_ms = ms;
    scaling.push_back({{"workers", w}, {"table_ms", ms}, {"speedup", base_ms / ms}});
  }

  const auto n_fl = static_cast<std::size_t>(config.split.num_institutions);
  std::vector<LabeledDataset> fl_shards;
  for (std::size_t k = 0; k < n_fl; ++k) fl_shards.push_back(data.shards[k].data);
  const auto fl_start = Clock::now();
  train_federated(fl_shards, effective_fed(config));
  const double fl_ms = elapsed_ms(fl_start);
  const double coalitions = std::ldexp(1.0, b.extrapolate_players);
  const double retrain_s = fl_ms / 1000.0 * coalitions;
  const double safe_s = direct_ms / 1000.0 * coalitions;

  Json out = {{"schema", kBenchSchema},
              {"hardware_threads", std::thread::hardware_concurrency()},
              {"test_samples", data.test_set.size()},
              {"per_coalition_latency_ms", {{"direct_ensemble", direct_ms}, {"repeats", b.repeats}}},
              {"table_sweep", sweep},
              {"log2_time_slope", slope},
              {"parallel_scaling", scaling},
              {"retrain_extrapolation",
               {{"institutions", b.extrapolate_players},
                {"single_fl_run_ms", fl_ms},
                {"fl_institutions", n_fl},
                {"estimated_seconds", retrain_s},
                {"estimated_years", retrain_s / (365.25 * 24 * 3600)},
                {"executed", false}}},
              {"safe_extrapolation",
               {{"institutions", b.extrapolate_players}, {"estimated_seconds", safe_s}}},
              {"checksum", sink}};
  fs::create_directories(paths.bench_dir());
  write_json_file(paths.bench_report(), out);
  update_manifest(paths, "bench", {{"files", {rel(paths, paths.bench_report())}}});
  return out;
}

// ---------------------------------------------------------------------------
// Reports

void validate_report(const Json& r) {
  try {
    reject_unknown(r, {"schema", "num_institutions", "metric", "performance", "methods", "similarity",
                       "warnings", "timings_ms", "config"},
                   "report");
    for (const char* key : {"schema", "num_institutions", "metric", "performance", "methods",
                            "similarity", "warnings", "timings_ms", "config"})
      if (!r.contains(key)) throw FormatError(std::string("report is missing '") + key + "'");
    if (r["schema"] != kReportSchema) throw FormatError("report schema must be " + std::string(kReportSchema));
    const auto n = r["num_institutions"].get<std::size_t>();
    metric_from_string(r["metric"].get<std::string>());

    const auto& perf = r["performance"];
    reject_unknown(perf, {"fl_global", "lr_ensemble"}, "report.performance");
    for (const char* k : {"fl_global", "lr_ensemble"}) {
      reject_unknown(perf.at(k), {"accuracy", "macro_auroc"}, std::string("report.performance.") + k);
      perf.at(k).at("accuracy").get<double>();
    }

    const auto& methods = r["methods"];
    if (!methods.is_object() || methods.empty()) throw FormatError("report.methods must be a non-empty object");
    for (const auto& [name, v] : methods.items()) {
      if (std::find(kKnownMethods.begin(), kKnownMethods.end(), name) == kKnownMethods.end())
        throw FormatError("report.methods has unknown method '" + name + "'");
      reject_unknown(v, {"schema", "method", "metric", "seed", "permutations_used", "grand_utility", "values"},
                     "report.methods." + name);
      const ShapleyVector sv = shapley_vector_from_json(v);
      if (sv.values.size() != n)
        throw FormatError("report.methods." + name + " has " + std::to_string(sv.values.size()) +
                          " values, expected " + std::to_string(n));
    }

    const auto& sim = r["similarity"];
    reject_unknown(sim, {"methods", "matrix"}, "report.similarity");
    const auto names = sim.at("methods").get<std::vector<std::string>>();
    if (names.size() != methods.size()) throw FormatError("similarity methods do not match report methods");
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size()) throw FormatError("similarity lists a method twice");
    for (const auto& name : names)
      if (!methods.contains(name)) throw FormatError("similarity names unknown method '" + name + "'");
    const auto& m = sim.at("matrix");
    if (!m.is_array() || m.size() != names.size()) throw FormatError("similarity matrix has the wrong shape");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!m[i].is_array() || m[i].size() != names.size())
        throw FormatError("similarity matrix has the wrong shape");
      for (std::size_t j = 0; j < names.size(); ++j) {
        const auto& a = m[i][j];
        if (a != m[j][i]) throw FormatError("similarity matrix is not symmetric");
        if (i == j && !a.is_null() && std::abs(a.get<double>() - 1.0) > 1e-12)
          throw FormatError("similarity matrix diagonal must be 1");
      }
    }
    if (!r["warnings"].is_array()) throw FormatError("report.warnings must be an array");
    if (!r["timings_ms"].is_object()) throw FormatError("report.timings_ms must be an object");
    run_config_from_json(r["config"]);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

std::string format_report(const Json& r) {
  validate_report(r);
  std::ostringstream out;
  out << std::fixed;
  const auto n = r["num_institutions"].get<std::size_t>();
  out << "Institutions: " << n << "    metric: " << r["metric"].get<std::string>() << "\n\n";

  out << "Model performance on the global test set\n";
  for (const char* k : {"fl_global", "lr_ensemble"}) {
    const auto& p = r["performance"][k];
    out << "  " << std::left << std::setw(12) << k << " accuracy " << std::setprecision(4)
        << p["accuracy"].get<double>();
    if (!p["macro_auroc"].is_null()) out << "  macro AUROC " << p["macro_auroc"].get<double>();
    out << '\n';
  }

  out << "\nShapley values\n  " << std::setw(16) << "method";
  for (std::size_t k = 0; k < n; ++k) out << std::right << std::setw(9) << k;
  out << std::setw(10) << "sum" << '\n';
  for (const auto& [name, v] : r["methods"].items()) {
    const auto values = v["values"].get<std::vector<double>>();
    out << "  " << std::left << std::setw(16) << name << std::right;
    double sum = 0.0;
    for (double x : values) {
      out << std::setw(9) << std::setprecision(4) << x;
      sum += x;
    }
    out << std::setw(10) << sum;
    if (v["permutations_used"].get<std::size_t>() > 0 && name == "tmc")
      out << "  (" << v["permutations_used"].get<std::size_t>() << " permutations)";
    out << '\n';
  }

  const auto names = r["similarity"]["methods"].get<std::vector<std::string>>();
  if (names.size() > 1) {
    out << "\nCosine similarity\n";
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = i + 1; j < names.size(); ++j) {
        const auto& s = r["similarity"]["matrix"][i][j];
        out << "  " << names[i] << " vs " << names[j] << ": ";
        if (s.is_null())
          out << "undefined";
        else
          out << std::setprecision(4) << s.get<double>();
        out << '\n';
      }
  }
  for (const auto& w : r["warnings"]) out << "warning: " << w.get<std::string>() << '\n';
  return out.str();
}

Json report_values(const Json& report) {
  Json copy = report;
  copy.erase("timings_ms");
  return copy;
}

}  // namespace safe
