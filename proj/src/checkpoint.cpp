#include "safe/checkpoint.hpp"

#include "safe/errors.hpp"

#include <fstream>
#include <string>

namespace safe {

namespace {

Json matrix_json(const Matrix& m) {
  Json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

Json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Matrix matrix_from(const Json& j, std::string_view field) {
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
      throw FormatError("checkpoint field '" + std::string(field) + "' has inconsistent shape");
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
  } catch (const Json::exception& e) {
    throw FormatError("checkpoint field '" + std::string(field) + "': " + e.what());
  }
}

Vector vector_from(const Json& j, std::string_view field) {
  try {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
  } catch (const Json::exception& e) {
    throw FormatError("checkpoint field '" + std::string(field) + "': " + e.what());
  }
}

void expect_schema(const Json& j, std::string_view schema) {
  if (!j.is_object() || !j.contains("schema") || j["schema"] != schema)
    throw FormatError("expected a document with schema '" + std::string(schema) + "'");
}

template <typename Fn>
auto guarded(std::string_view what, Fn&& fn) {
  try {
    return fn();
  } catch (const Json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

Json to_json(const GlobalModel& model) {
  return {{"schema", kGlobalModelSchema},
          {"activation", "relu"},
          {"hidden_weights", matrix_json(model.hidden_weights)},
          {"hidden_bias", vector_json(model.hidden_bias)},
          {"output_weights", matrix_json(model.output_weights)},
          {"output_bias", vector_json(model.output_bias)}};
}

GlobalModel global_model_from_json(const Json& j) {
  expect_schema(j, kGlobalModelSchema);
  return guarded("global model checkpoint", [&] {
    GlobalModel m;
    m.hidden_weights = matrix_from(j.at("hidden_weights"), "hidden_weights");
    m.hidden_bias = vector_from(j.at("hidden_bias"), "hidden_bias");
    m.output_weights = matrix_from(j.at("output_weights"), "output_weights");
    m.output_bias = vector_from(j.at("output_bias"), "output_bias");
    m.validate();
    return m;
  });
}

Json to_json(const LocalLRModel& model) {
  Json j = {{"schema", kLRModelSchema},
            {"institution_id", model.institution_id},
            {"train_samples", model.train_samples},
            {"weights", matrix_json(model.weights)},
            {"bias", vector_json(model.bias)},
            {"feature_mean", vector_json(model.feature_mean)},
            {"feature_scale", vector_json(model.feature_scale)}};
  j["degenerate_class"] = model.degenerate_class ? Json(*model.degenerate_class) : Json(nullptr);
  return j;
}

LocalLRModel lr_model_from_json(const Json& j) {
  expect_schema(j, kLRModelSchema);
  return guarded("LR model checkpoint", [&] {
    LocalLRModel m;
    m.institution_id = j.at("institution_id").get<int>();
    m.train_samples = j.at("train_samples").get<std::size_t>();
    m.weights = matrix_from(j.at("weights"), "weights");
    m.bias = vector_from(j.at("bias"), "bias");
    m.feature_mean = vector_from(j.at("feature_mean"), "feature_mean");
    m.feature_scale = vector_from(j.at("feature_scale"), "feature_scale");
    if (!j.at("degenerate_class").is_null()) m.degenerate_class = j["degenerate_class"].get<int>();
    m.validate();
    return m;
  });
}

Json to_json(const UtilityTable& table) {
  Json values = Json::object();
  for (Coalition s = 0; s < table.size(); ++s)
    if (auto v = table.find(s)) values[std::to_string(s)] = *v;
  return {{"schema", kUtilityTableSchema},
          {"n", table.players()},
          {"metric", to_string(table.metric())},
          {"skipped_classes", table.skipped_classes},
          {"values", values}};
}

UtilityTable utility_table_from_json(const Json& j) {
  expect_schema(j, kUtilityTableSchema);
  return guarded("utility table", [&] {
    UtilityTable t(j.at("n").get<int>(), metric_from_string(j.at("metric").get<std::string>()));
    t.skipped_classes = j.value("skipped_classes", std::vector<int>{});
    for (const auto& [key, value] : j.at("values").items()) {
      std::size_t pos = 0;
      Coalition s = 0;
      try {
        s = std::stoull(key, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != key.size() || key.empty())
        throw FormatError("utility table key '" + key + "' is not a decimal bitmask");
      t.set(s, value.get<double>());
    }
    return t;
  });
}

Json to_json(const ShapleyVector& v) {
  return {{"schema", kShapleySchema},
          {"method", to_string(v.method)},
          {"metric", to_string(v.metric)},
          {"seed", v.seed},
          {"permutations_used", v.permutations_used},
          {"grand_utility", v.grand_utility},
          {"values", v.values}};
}

ShapleyVector shapley_vector_from_json(const Json& j) {
  expect_schema(j, kShapleySchema);
  return guarded("Shapley vector", [&] {
    ShapleyVector v;
    v.method = shapley_method_from_string(j.at("method").get<std::string>());
    v.metric = metric_from_string(j.at("metric").get<std::string>());
    v.seed = j.at("seed").get<Seed>();
    v.permutations_used = j.at("permutations_used").get<std::size_t>();
    v.grand_utility = j.at("grand_utility").get<double>();
    v.values = j.at("values").get<std::vector<double>>();
    return v;
  });
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace safe
