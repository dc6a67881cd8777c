#pragma once

// JSON helpers shared by the config and checkpoint readers. Internal header.

#include <set>
#include <string>

#include "json.hpp"
#include "siflow/errors.hpp"
#include "siflow/mlp.hpp"
#include "siflow/types.hpp"

namespace siflow::detail {

using Json = nlohmann::ordered_json;

/// Rejects keys of `obj` that are not in `allowed`, naming the full path.
void reject_unknown_keys(const Json& obj, const std::set<std::string>& allowed,
                         const std::string& where);

/// obj[key] as T, or ConfigError naming `where.key`.
template <class T>
T get_required(const Json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw ConfigError("missing required key '" + where + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("key '" + where + key + "' has the wrong type");
  }
}

template <class T>
T get_or(const Json& obj, const std::string& key, T fallback,
         const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return get_required<T>(obj, key, where);
}

Json vec_to_json(const Vec& v);
Vec vec_from_json(const Json& j, const std::string& where);
/// Row-major nested arrays.
Json mat_to_json(const Mat& m);
Mat mat_from_json(const Json& j, const std::string& where);

Json spec_to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const Json& j, Index data_dim, const std::string& where);

/// Stable FNV-1a 64-bit hash, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace siflow::detail
