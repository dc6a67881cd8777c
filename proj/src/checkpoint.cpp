#include <fstream>

#include "json_io.hpp"
#include "siflow/mlp.hpp"

namespace siflow {
namespace {

using detail::Json;

constexpr const char* kFormat = "siflow-checkpoint";
constexpr int kVersion = 1;

Json tensor_to_json(const Mat& m) {
  Json j;
  j["shape"] = {m.rows(), m.cols()};
  Json data = Json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = std::move(data);
  return j;
}

Mat tensor_from_json(const Json& j) {
  const auto shape = j.at("shape").get<std::vector<Index>>();
  const auto& data = j.at("data");
  if (shape.size() != 2 ||
      static_cast<Index>(data.size()) != shape[0] * shape[1])
    throw ConfigError("checkpoint tensor has inconsistent shape");
  Mat m(shape[0], shape[1]);
  std::size_t o = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = data[o++].get<double>();
  return m;
}

Json layers_to_json(const std::vector<DenseLayer>& layers) {
  Json arr = Json::array();
  for (const auto& l : layers)
    arr.push_back({{"weight", tensor_to_json(l.weight)},
                   {"bias", tensor_to_json(l.bias)}});
  return arr;
}

std::vector<DenseLayer> layers_from_json(const Json& arr) {
  std::vector<DenseLayer> layers;
  for (const auto& l : arr)
    layers.push_back({tensor_from_json(l.at("weight")),
                      tensor_from_json(l.at("bias")).col(0)});
  return layers;
}

}  // namespace

void save_checkpoint(const Mlp& mlp, const std::filesystem::path& path) {
  const MlpState& s = mlp.state();
  Json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["spec"] = detail::spec_to_json(mlp.spec());
  j["step"] = s.step;
  j["seed"] = s.seed;
  j["layout"] = "row-major";
  j["layers"] = layers_to_json(s.layers);
  j["adam_m"] = layers_to_json(s.adam_m.layers);
  j["adam_v"] = layers_to_json(s.adam_v.layers);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << j.dump(1) << '\n';
}

Mlp load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  try {
    const Json j = Json::parse(in);
    if (j.at("format") != kFormat)
      throw ConfigError(path.string() + " is not a siflow checkpoint");
    if (j.at("version").get<int>() != kVersion)
      throw ConfigError(path.string() + ": unsupported checkpoint version");
    const MlpSpec spec = detail::spec_from_json(j.at("spec"), 0, "spec.");
    MlpState state;
    state.layers = layers_from_json(j.at("layers"));
    state.adam_m.layers = layers_from_json(j.at("adam_m"));
    state.adam_v.layers = layers_from_json(j.at("adam_v"));
    state.step = j.at("step").get<std::int64_t>();
    state.seed = j.at("seed").get<std::uint64_t>();
    return Mlp(spec, std::move(state));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": malformed checkpoint (" + e.what() + ")");
  } catch (const ContractError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace siflow
