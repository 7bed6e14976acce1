#include "safe/errors.hpp"
#include "safe/metrics.hpp"
#include "safe/pipeline.hpp"
#include "safe/seed.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;

namespace {

safe::LabeledDataset make_dataset(const safe::Matrix& x, const std::vector<int>& y) {
  safe::LabeledDataset ds;
  ds.features = x;
  ds.labels = y;
  ds.num_classes = y.empty() ? 0 : *std::max_element(y.begin(), y.end()) + 1;
  return ds;
}

safe::UtilityTable table_from(const std::vector<double>& utilities) {
  const std::size_t size = utilities.size();
  if (size < 2 || (size & (size - 1)) != 0)
    throw safe::ArgumentError("utilities must have length 2^n with n >= 1");
  int n = 0;
  while ((std::size_t{1} << n) < size) ++n;
  safe::UtilityTable t(n, safe::Metric::accuracy);
  for (safe::Coalition s = 1; s < size; ++s) t.set(s, utilities[s]);
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shapley valuation of federated institutions through LR ensembles.";

  auto base = py::register_exception<safe::Error>(m, "SafeError", PyExc_RuntimeError);
  py::register_exception<safe::ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<safe::FormatError>(m, "FormatError", base.ptr());
  py::register_exception<safe::CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<safe::NumericError>(m, "NumericError", base.ptr());

  m.def(
      "generate_synthetic",
      [](std::size_t samples, std::size_t features, int classes, double separation, safe::Seed seed) {
        auto ds = safe::generate_synthetic(samples, features, classes, separation, seed);
        return py::make_tuple(ds.features, ds.labels);
      },
      py::arg("samples"), py::arg("features"), py::arg("classes"), py::arg("separation") = 3.0,
      py::arg("seed") = 0, "Gaussian class clusters as (X, y).");

  m.def(
      "accuracy",
      [](const safe::Matrix& probs, const std::vector<int>& labels) { return safe::accuracy(probs, labels); },
      py::arg("probs"), py::arg("labels"));
  m.def(
      "macro_auroc",
      [](const safe::Matrix& probs, const std::vector<int>& labels) {
        return safe::macro_auroc(probs, labels).value;
      },
      py::arg("probs"), py::arg("labels"));

  m.def(
      "exact_shapley", [](const std::vector<double>& u) { return safe::exact_shapley(table_from(u)).values; },
      py::arg("utilities"),
      "Shapley values of a game given as 2^n utilities indexed by coalition bitmask; u[0] must be 0.");
  m.def(
      "permutation_shapley",
      [](const std::vector<double>& u) { return safe::permutation_shapley_exact(table_from(u)).values; },
      py::arg("utilities"), "Mean marginal contribution over all n! orderings.");

  m.def(
      "ensemble_shapley",
      [](const std::vector<std::pair<safe::Matrix, std::vector<int>>>& shards, const safe::Matrix& test_x,
         const std::vector<int>& test_y, const std::string& metric, safe::Seed seed) {
        safe::LabeledDataset test = make_dataset(test_x, test_y);
        int classes = test.num_classes;
        std::vector<safe::LabeledDataset> data;
        for (const auto& [x, y] : shards) {
          data.push_back(make_dataset(x, y));
          classes = std::max(classes, data.back().num_classes);
        }
        test.num_classes = classes;
        std::vector<safe::LocalLRModel> models;
        for (std::size_t k = 0; k < data.size(); ++k) {
          data[k].num_classes = classes;
          safe::LRConfig cfg;
          cfg.seed = safe::derive_seed(seed, "lr", {k});
          models.push_back(safe::train_lr(data[k], cfg, static_cast<int>(k)));
        }
        py::gil_scoped_release release;
        return safe::safe_shapley(models, test, safe::metric_from_string(metric), 1).values;
      },
      py::arg("shards"), py::arg("test_x"), py::arg("test_y"), py::arg("metric") = "accuracy",
      py::arg("seed") = 0,
      "Fit one LR model per (X, y) shard and value the shards by exact Shapley over ensembles.");

  m.def(
      "cosine_similarity",
      [](const std::vector<double>& a, const std::vector<double>& b) { return safe::cosine_similarity(a, b); },
      py::arg("a"), py::arg("b"));

  m.def(
      "run_stage",
      [](const std::string& stage, const std::string& config_json) {
        safe::Json parsed;
        try {
          parsed = safe::Json::parse(config_json);
        } catch (const safe::Json::exception& e) {
          throw safe::FormatError(std::string("run config: ") + e.what());
        }
        const auto config = safe::run_config_from_json(parsed);
        safe::Json out;
        {
          py::gil_scoped_release release;
          if (stage == "split") out = safe::cmd_split(config);
          else if (stage == "train") out = safe::cmd_train(config);
          else if (stage == "value") out = safe::cmd_value(config);
          else if (stage == "bench") out = safe::cmd_bench(config);
          else throw safe::ArgumentError("unknown stage '" + stage + "'");
        }
        return out.dump();
      },
      py::arg("stage"), py::arg("config_json"));
}
