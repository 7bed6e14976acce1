// safe_cli: split, train, value, bench and report stages of the valuation
// pipeline. Every stage reads a run config (optional) and applies flag
// overrides on top.

#include "safe/errors.hpp"
#include "safe/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::string> output;
  std::optional<safe::Seed> seed;
  std::optional<std::size_t> parallelism;
  std::optional<int> institutions;
  std::optional<std::string> scheme;
  std::optional<double> test_fraction;
  std::optional<int> majority_class;
  std::vector<std::string> methods;
  std::optional<std::string> metric;
  std::optional<bool> weighted;
  std::optional<int> rounds;
  std::optional<int> local_epochs;
  std::optional<double> learning_rate;
  std::optional<int> hidden_dim;
  std::optional<double> reg_strength;
  std::optional<double> l1_ratio;
  std::optional<std::size_t> tmc_max_permutations;
  std::optional<std::size_t> samples;
  std::optional<std::size_t> features;
  std::optional<int> classes;
  std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
  std::string csv, csv_test, label_column;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", o.output, "Output directory");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("-j,--parallelism", o.parallelism, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("-n,--institutions", o.institutions, "Number of institutions");
  cmd->add_option("--scheme", o.scheme, "iid | label_skew_pairs | linear_skew");
  cmd->add_option("--test-fraction", o.test_fraction);
  cmd->add_option("--majority-class", o.majority_class, "linear_skew majority class");
  cmd->add_option("--methods", o.methods, "safe, exact_retrain, tmc")->delimiter(',');
  cmd->add_option("--metric", o.metric, "accuracy | macro_auroc");
  cmd->add_flag("--weighted{true},--unweighted{false}", o.weighted, "Ensemble weighting");
  cmd->add_option("--rounds", o.rounds);
  cmd->add_option("--local-epochs", o.local_epochs);
  cmd->add_option("--learning-rate", o.learning_rate);
  cmd->add_option("--hidden-dim", o.hidden_dim);
  cmd->add_option("--reg", o.reg_strength, "Elastic-net strength");
  cmd->add_option("--l1-ratio", o.l1_ratio);
  cmd->add_option("--tmc-max-permutations", o.tmc_max_permutations);
  cmd->add_option("--samples", o.samples, "Synthetic sample count");
  cmd->add_option("--features", o.features, "Synthetic feature count");
  cmd->add_option("--classes", o.classes, "Synthetic class count");
  cmd->add_option("--idx-images", o.idx_images);
  cmd->add_option("--idx-labels", o.idx_labels);
  cmd->add_option("--idx-test-images", o.idx_test_images);
  cmd->add_option("--idx-test-labels", o.idx_test_labels);
  cmd->add_option("--csv", o.csv, "CSV file with a header row");
  cmd->add_option("--csv-test", o.csv_test, "Pre-split CSV test file");
  cmd->add_option("--label-column", o.label_column);
}

safe::RunConfig resolve(const Overrides& o) {
  safe::RunConfig c;
  if (!o.config_path.empty()) c = safe::run_config_from_json(safe::read_json_file(o.config_path));
  if (o.output) c.output_dir = *o.output;
  if (o.seed) c.seed = *o.seed;
  if (o.parallelism) c.parallelism = *o.parallelism;
  if (o.institutions) c.split.num_institutions = *o.institutions;
  if (o.scheme) c.split.scheme = safe::split_scheme_from_string(*o.scheme);
  if (o.test_fraction) c.split.test_fraction = *o.test_fraction;
  if (o.majority_class) c.split.majority_class = *o.majority_class;
  if (!o.methods.empty()) c.methods = o.methods;
  if (o.metric) c.metric = safe::metric_from_string(*o.metric);
  if (o.weighted) c.weighted_ensemble = *o.weighted;
  if (o.rounds) c.fed.rounds = *o.rounds;
  if (o.local_epochs) c.fed.local_epochs = *o.local_epochs;
  if (o.learning_rate) c.fed.learning_rate = *o.learning_rate;
  if (o.hidden_dim) c.fed.hidden_dim = *o.hidden_dim;
  if (o.reg_strength) c.lr.reg_strength = *o.reg_strength;
  if (o.l1_ratio) c.lr.l1_ratio = *o.l1_ratio;
  if (o.tmc_max_permutations) c.tmc.max_permutations = *o.tmc_max_permutations;
  if (o.samples) c.dataset.num_samples = *o.samples;
  if (o.features) c.dataset.num_features = *o.features;
  if (o.classes) c.dataset.num_classes = *o.classes;
  if (!o.idx_images.empty() || !o.idx_labels.empty()) {
    c.dataset.kind = safe::DatasetSource::Kind::idx;
    c.dataset.images = o.idx_images;
    c.dataset.labels = o.idx_labels;
    c.dataset.test_images = o.idx_test_images;
    c.dataset.test_labels = o.idx_test_labels;
  }
  if (!o.csv.empty()) {
    c.dataset.kind = safe::DatasetSource::Kind::csv;
    c.dataset.csv_path = o.csv;
    c.dataset.test_csv_path = o.csv_test;
  }
  if (!o.label_column.empty()) c.dataset.label_column = o.label_column;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapley valuation of federated institutions via LR ensembles"};
  app.require_subcommand(1);

  Overrides o;
  auto* split = app.add_subcommand("split", "Carve the test set and institution shards");
  auto* train = app.add_subcommand("train", "Train the FedAvg model and per-institution LR models");
  auto* value = app.add_subcommand("value", "Compute Shapley values from the trained checkpoints");
  auto* bench = app.add_subcommand("bench", "Time coalition utilities and extrapolate retraining cost");
  for (auto* cmd : {split, train, value, bench}) add_common(cmd, o);

  auto* report = app.add_subcommand("report", "Print a saved valuation report");
  std::string report_path;
  bool as_json = false;
  report->add_option("path", report_path, "report.json or an output directory")->required();
  report->add_flag("--json", as_json, "Echo the validated JSON instead of tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : safe::ArgumentError("").exit_code();
  }

  try {
    if (report->parsed()) {
      std::filesystem::path p = report_path;
      if (std::filesystem::is_directory(p)) p = safe::StagePaths{p}.report();
      const safe::Json r = safe::read_json_file(p);
      if (as_json) {
        safe::validate_report(r);
        std::cout << r.dump(2) << '\n';
      } else {
        std::cout << safe::format_report(r);
      }
      return 0;
    }

    const safe::RunConfig config = resolve(o);
    if (split->parsed()) {
      const auto m = safe::cmd_split(config);
      std::cout << "wrote " << m["shards"].size() << " shards and a " << m["test_set"]["num_samples"]
                << "-sample test set to " << safe::StagePaths{config.output_dir}.split_dir().string()
                << '\n';
    } else if (train->parsed()) {
      const auto m = safe::cmd_train(config);
      std::cout << "FL accuracy " << m["global_model"]["accuracy"].get<double>()
                << ", LR ensemble accuracy " << m["lr_ensemble"]["accuracy"].get<double>() << '\n';
    } else if (value->parsed()) {
      std::cout << safe::format_report(safe::cmd_value(config));
    } else if (bench->parsed()) {
      std::cout << safe::cmd_bench(config).dump(2) << '\n';
    }
    return 0;
  } catch (const safe::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
