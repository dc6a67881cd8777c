#include "json_io.hpp"

#include <cstdio>

namespace siflow::detail {

void reject_unknown_keys(const Json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!obj.is_object())
    throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.contains(key))
      throw ConfigError("unknown key '" + where + key + "'");
}

Json vec_to_json(const Vec& v) {
  Json j = Json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

Vec vec_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError("'" + where + "' must be an array");
  Vec v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw ConfigError("'" + where + "' must contain numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

Json mat_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}

Mat mat_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty())
    throw ConfigError("'" + where + "' must be a non-empty array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Vec first = vec_from_json(j[0], where);
  Mat m(rows, first.size());
  for (Index r = 0; r < rows; ++r) {
    const Vec row = vec_from_json(j[static_cast<std::size_t>(r)], where);
    if (row.size() != first.size())
      throw ConfigError("'" + where + "' rows differ in length");
    m.row(r) = row.transpose();
  }
  return m;
}

Json spec_to_json(const MlpSpec& spec) {
  Json j;
  j["data_dim"] = spec.data_dim;
  j["hidden"] = spec.hidden_widths;
  j["activation"] = spec.activation == Activation::ReLU ? "relu" : "elu";
  j["time_features"] =
      spec.time_features == TimeFeatures::RawConcat ? "raw" : "sincos";
  j["zero_init_output"] = spec.zero_init_output;
  if (spec.allow_no_hidden) j["allow_no_hidden"] = true;
  return j;
}

MlpSpec spec_from_json(const Json& j, Index data_dim, const std::string& where) {
  reject_unknown_keys(j, {"data_dim", "hidden", "activation", "time_features",
                          "zero_init_output", "allow_no_hidden"},
                      where);
  MlpSpec spec;
  spec.data_dim = get_or<Index>(j, "data_dim", data_dim, where);
  if (data_dim > 0 && spec.data_dim != data_dim)
    throw ConfigError("'" + where + "data_dim' disagrees with the data (" +
                      std::to_string(data_dim) + ")");
  spec.hidden_widths = get_required<std::vector<Index>>(j, "hidden", where);
  const auto act = get_or<std::string>(j, "activation", "relu", where);
  if (act == "relu") spec.activation = Activation::ReLU;
  else if (act == "elu") spec.activation = Activation::ELU;
  else throw ConfigError("'" + where + "activation' must be relu|elu");
  const auto tf = get_or<std::string>(j, "time_features", "raw", where);
  if (tf == "raw") spec.time_features = TimeFeatures::RawConcat;
  else if (tf == "sincos") spec.time_features = TimeFeatures::SinCosConcat;
  else throw ConfigError("'" + where + "time_features' must be raw|sincos");
  spec.zero_init_output = get_or<bool>(j, "zero_init_output", true, where);
  spec.allow_no_hidden = get_or<bool>(j, "allow_no_hidden", false, where);
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw ConfigError("'" + where + "': " + e.what());
  }
  return spec;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace siflow::detail
