#pragma once

#include "safe/fedsim.hpp"
#include "safe/localmodel.hpp"
#include "safe/valuation.hpp"

#include <json.hpp>

#include <filesystem>
#include <string_view>

namespace safe {

using Json = nlohmann::json;

inline constexpr std::string_view kGlobalModelSchema = "safe.global_model/1";
inline constexpr std::string_view kLRModelSchema = "safe.lr_model/1";
inline constexpr std::string_view kUtilityTableSchema = "safe.utility_table/1";
inline constexpr std::string_view kShapleySchema = "safe.shapley_vector/1";

// Doubles are written in shortest round-trip form, so reading a checkpoint
// back reproduces every 64-bit value exactly.

Json to_json(const GlobalModel& model);
GlobalModel global_model_from_json(const Json& j);

Json to_json(const LocalLRModel& model);
LocalLRModel lr_model_from_json(const Json& j);

/// Keys are decimal coalition bitmasks; missing entries are omitted.
Json to_json(const UtilityTable& table);
UtilityTable utility_table_from_json(const Json& j);

Json to_json(const ShapleyVector& v);
ShapleyVector shapley_vector_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace safe
