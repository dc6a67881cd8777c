#include "siflow/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json_io.hpp"
#include "siflow/csv.hpp"

namespace siflow {
namespace {

using detail::get_or;
using detail::get_required;
using detail::Json;
using detail::reject_unknown_keys;

GaussianMixture parse_mixture(const Json& j, const std::string& where) {
  const Json comps = j.at("components");
  if (!comps.is_array() || comps.empty())
    throw ConfigError("'" + where + "components' must be a non-empty array");
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Mat> covs;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const std::string w = where + "components[" + std::to_string(k) + "].";
    const Json& c = comps[k];
    reject_unknown_keys(c, {"weight", "mean", "covariance", "isotropic"}, w);
    weights.push_back(get_required<double>(c, "weight", w));
    if (!c.contains("mean")) throw ConfigError("missing required key '" + w + "mean'");
    const Vec mean = detail::vec_from_json(c["mean"], w + "mean");
    if (c.contains("covariance") == c.contains("isotropic"))
      throw ConfigError("'" + w + "' needs exactly one of covariance, isotropic");
    Mat cov;
    if (c.contains("isotropic")) {
      const double var = get_required<double>(c, "isotropic", w);
      cov = Mat::Identity(mean.size(), mean.size()) * var;
    } else {
      cov = detail::mat_from_json(c["covariance"], w + "covariance");
    }
    means.push_back(mean);
    covs.push_back(cov);
  }
  try {
    return GaussianMixture(weights, means, covs);
  } catch (const Error& e) {
    throw ConfigError("'" + where + "components': " + e.what());
  }
}

Json mixture_to_json(const GaussianMixture& g) {
  Json comps = Json::array();
  for (Index k = 0; k < g.size(); ++k) {
    Json c;
    c["weight"] = g.weight(k);
    c["mean"] = detail::vec_to_json(g.mean(k));
    c["covariance"] = detail::mat_to_json(g.covariance(k));
    comps.push_back(std::move(c));
  }
  return comps;
}

Index csv_width(const std::filesystem::path& path, const std::string& where) {
  std::ifstream in(path);
  if (!in) throw ConfigError("'" + where + "path': cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.empty()) throw ConfigError("'" + where + "path': empty file");
  return static_cast<Index>(std::count(line.begin(), line.end(), ',') + 1);
}

DistributionSpec parse_distribution(const Json& j, const std::string& where,
                                    Index default_dim, std::uint64_t seed) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  const auto type = get_required<std::string>(j, "type", where + ".");
  const std::string w = where + ".";
  DistributionSpec spec;
  if (type == "std_gaussian") {
    reject_unknown_keys(j, {"type", "dim"}, w);
    spec.kind = DistributionKind::StdGaussian;
    spec.dim = get_or<Index>(j, "dim", default_dim, w);
    if (spec.dim < 1) throw ConfigError("'" + w + "dim' must be given and >= 1");
    spec.mixture = GaussianMixture::standard_normal(spec.dim);
  } else if (type == "mixture") {
    reject_unknown_keys(j, {"type", "components"}, w);
    if (!j.contains("components")) throw ConfigError("missing required key '" + w + "components'");
    spec.kind = DistributionKind::Mixture;
    spec.mixture = parse_mixture(j, w);
    spec.dim = spec.mixture->dim();
  } else if (type == "eight_gaussians") {
    reject_unknown_keys(j, {"type"}, w);
    spec.kind = DistributionKind::EightGaussians;
    spec.mixture = eight_gaussians();
    spec.dim = 2;
  } else if (type == "checkerboard") {
    reject_unknown_keys(j, {"type"}, w);
    spec.kind = DistributionKind::Checkerboard;
    spec.dim = 2;
  } else if (type == "two_moons") {
    reject_unknown_keys(j, {"type"}, w);
    spec.kind = DistributionKind::TwoMoons;
    spec.dim = 2;
  } else if (type == "dataset") {
    reject_unknown_keys(j, {"type", "path", "dim", "split", "standardize", "mode", "split_seed"}, w);
    spec.kind = DistributionKind::Dataset;
    spec.dataset.path = get_required<std::string>(j, "path", w);
    if (j.contains("split")) {
      const Json& s = j["split"];
      reject_unknown_keys(s, {"train", "validation", "test"}, w + "split.");
      spec.dataset.fractions.train = get_required<double>(s, "train", w + "split.");
      spec.dataset.fractions.validation = get_required<double>(s, "validation", w + "split.");
      spec.dataset.fractions.test = get_required<double>(s, "test", w + "split.");
    }
    spec.dataset.standardize = get_or<bool>(j, "standardize", true, w);
    const auto mode = get_or<std::string>(j, "mode", "shuffle_epoch", w);
    if (mode == "shuffle_epoch") spec.dataset.mode = DatasetMode::ShuffleEpoch;
    else if (mode == "resample") spec.dataset.mode = DatasetMode::Resample;
    else throw ConfigError("'" + w + "mode' must be shuffle_epoch|resample");
    spec.dataset.split_seed = get_or<std::uint64_t>(j, "split_seed", seed, w);
    spec.dim = j.contains("dim") ? get_required<Index>(j, "dim", w)
                                 : csv_width(spec.dataset.path, w);
    if (spec.dim < 1) throw ConfigError("'" + w + "dim' must be >= 1");
  } else {
    throw ConfigError("'" + w + "type' has unknown value '" + type + "'");
  }
  return spec;
}

Json distribution_to_json(const DistributionSpec& s) {
  Json j;
  switch (s.kind) {
    case DistributionKind::StdGaussian:
      j["type"] = "std_gaussian";
      j["dim"] = s.dim;
      break;
    case DistributionKind::Mixture:
      j["type"] = "mixture";
      j["components"] = mixture_to_json(*s.mixture);
      break;
    case DistributionKind::EightGaussians: j["type"] = "eight_gaussians"; break;
    case DistributionKind::Checkerboard: j["type"] = "checkerboard"; break;
    case DistributionKind::TwoMoons: j["type"] = "two_moons"; break;
    case DistributionKind::Dataset:
      j["type"] = "dataset";
      j["path"] = s.dataset.path.string();
      j["dim"] = s.dim;
      j["split"] = {{"train", s.dataset.fractions.train},
                    {"validation", s.dataset.fractions.validation},
                    {"test", s.dataset.fractions.test}};
      j["standardize"] = s.dataset.standardize;
      j["mode"] = s.dataset.mode == DatasetMode::ShuffleEpoch ? "shuffle_epoch" : "resample";
      j["split_seed"] = s.dataset.split_seed;
      break;
  }
  return j;
}

BatchPlan parse_batch(const Json& j, const std::string& w) {
  reject_unknown_keys(j, {"base", "target", "time", "pairing", "time_beta"}, w);
  BatchPlan p;
  p.base_batch = get_required<Index>(j, "base", w);
  p.target_batch = get_required<Index>(j, "target", w);
  p.time_batch = get_required<Index>(j, "time", w);
  const auto pairing = get_or<std::string>(j, "pairing", "outer", w);
  if (pairing == "outer") p.pairing = Pairing::OuterProduct;
  else if (pairing == "paired") p.pairing = Pairing::Paired;
  else throw ConfigError("'" + w + "pairing' must be outer|paired");
  if (j.contains("time_beta")) {
    const auto ab = get_required<std::vector<double>>(j, "time_beta", w);
    if (ab.size() != 2) throw ConfigError("'" + w + "time_beta' must be [alpha, beta]");
    p.time_law = {ab[0], ab[1]};
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw ConfigError("'" + w + "': " + e.what());
  }
  return p;
}

Json batch_to_json(const BatchPlan& p) {
  return Json{{"base", p.base_batch},
              {"target", p.target_batch},
              {"time", p.time_batch},
              {"pairing", p.pairing == Pairing::OuterProduct ? "outer" : "paired"},
              {"time_beta", {p.time_law.alpha, p.time_law.beta}}};
}

void parse_train(const Json& j, RunConfig& cfg) {
  const std::string w = "train.";
  reject_unknown_keys(j, {"steps", "lr", "lr_decay", "decay_interval", "lambda_reg", "batch",
                          "diagnostic_batch", "diagnostic_interval", "adam", "shards",
                          "chunk", "precision", "checkpoint_interval"},
                      w);
  TrainConfig& t = cfg.train;
  if (!j.contains("batch")) throw ConfigError("missing required key 'train.batch'");
  t.plan = parse_batch(j["batch"], "train.batch.");
  t.diagnostic_plan =
      j.contains("diagnostic_batch") ? parse_batch(j["diagnostic_batch"], "train.diagnostic_batch.") : t.plan;
  t.steps = get_required<std::int64_t>(j, "steps", w);
  t.lr = get_or<double>(j, "lr", t.lr, w);
  t.lr_decay = get_or<double>(j, "lr_decay", t.lr_decay, w);
  t.decay_interval = get_or<std::int64_t>(j, "decay_interval", t.decay_interval, w);
  t.lambda_reg = get_or<double>(j, "lambda_reg", t.lambda_reg, w);
  t.diagnostic_interval = get_or<std::int64_t>(j, "diagnostic_interval", t.diagnostic_interval, w);
  t.shards = get_or<int>(j, "shards", t.shards, w);
  t.chunk = get_or<Index>(j, "chunk", t.chunk, w);
  const auto precision = get_or<std::string>(j, "precision", "float64", w);
  if (precision == "float64") t.precision = Precision::Float64;
  else if (precision == "float32") t.precision = Precision::Float32;
  else throw ConfigError("'train.precision' must be float64|float32");
  cfg.checkpoint_interval = get_or<std::int64_t>(j, "checkpoint_interval", 0, w);
  if (j.contains("adam")) {
    const Json& a = j["adam"];
    reject_unknown_keys(a, {"beta1", "beta2", "eps"}, "train.adam.");
    t.adam.beta1 = get_or<double>(a, "beta1", t.adam.beta1, "train.adam.");
    t.adam.beta2 = get_or<double>(a, "beta2", t.adam.beta2, "train.adam.");
    t.adam.eps = get_or<double>(a, "eps", t.adam.eps, "train.adam.");
  }
  t.adam.lr = t.lr;
  t.seed = cfg.seed;
  try {
    t.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("'train': ") + e.what());
  }
}

Json train_to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  return Json{{"steps", t.steps},
              {"lr", t.lr},
              {"lr_decay", t.lr_decay},
              {"decay_interval", t.decay_interval},
              {"lambda_reg", t.lambda_reg},
              {"batch", batch_to_json(t.plan)},
              {"diagnostic_batch", batch_to_json(t.diagnostic_plan)},
              {"diagnostic_interval", t.diagnostic_interval},
              {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
              {"shards", t.shards},
              {"chunk", t.chunk},
              {"precision", t.precision == Precision::Float64 ? "float64" : "float32"},
              {"checkpoint_interval", cfg.checkpoint_interval}};
}

void parse_solver(const Json& j, Dopri5Settings& s) {
  const std::string w = "solver.";
  reject_unknown_keys(j, {"rtol", "atol", "max_steps", "initial_step"}, w);
  s.rtol = get_or<double>(j, "rtol", s.rtol, w);
  s.atol = get_or<double>(j, "atol", s.atol, w);
  s.max_steps = get_or<std::int64_t>(j, "max_steps", s.max_steps, w);
  if (j.contains("initial_step") && !j["initial_step"].is_null())
    s.initial_step = get_required<double>(j, "initial_step", w);
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("'solver': ") + e.what());
  }
}

void parse_divergence(const Json& j, DivergenceOptions& d) {
  const std::string w = "divergence.";
  reject_unknown_keys(j, {"mode", "exact_limit", "probes", "seed"}, w);
  const auto mode = get_or<std::string>(j, "mode", "auto", w);
  if (mode == "auto") d.mode = DivergenceMode::Auto;
  else if (mode == "exact") d.mode = DivergenceMode::Exact;
  else if (mode == "hutchinson") d.mode = DivergenceMode::Hutchinson;
  else throw ConfigError("'divergence.mode' must be auto|exact|hutchinson");
  d.exact_limit = get_or<Index>(j, "exact_limit", d.exact_limit, w);
  d.probes = get_or<int>(j, "probes", d.probes, w);
  d.seed = get_or<std::uint64_t>(j, "seed", d.seed, w);
  if (d.probes < 1) throw ConfigError("'divergence.probes' must be >= 1");
}

std::string mode_name(DivergenceMode m) {
  switch (m) {
    case DivergenceMode::Auto: return "auto";
    case DivergenceMode::Exact: return "exact";
    case DivergenceMode::Hutchinson: return "hutchinson";
  }
  return "auto";
}

RunConfig parse_json(const Json& root) {
  reject_unknown_keys(root, {"seed", "output_dir", "schedule", "base", "target", "model",
                             "train", "solver", "divergence", "sample", "diagnose",
                             "langevin", "experimental_score_schedule"},
                      "");
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(root, "seed", 0, "");
  cfg.output_dir = get_or<std::string>(root, "output_dir", "runs", "");

  if (!root.contains("schedule")) throw ConfigError("missing required key 'schedule'");
  const Json& sched = root["schedule"];
  try {
    if (sched.is_string()) {
      cfg.schedule_source = sched.get<std::string>();
      cfg.schedule = Schedule::by_name(cfg.schedule_source);
    } else if (sched.is_object()) {
      reject_unknown_keys(sched, {"csv"}, "schedule.");
      const auto path = get_required<std::string>(sched, "csv", "schedule.");
      cfg.schedule_source = "csv:" + path;
      cfg.schedule = Schedule::from_csv(path);
    } else {
      throw ConfigError("'schedule' must be a name or {\"csv\": path}");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("'schedule': ") + e.what());
  }

  if (!root.contains("target")) throw ConfigError("missing required key 'target'");
  cfg.target = parse_distribution(root["target"], "target", 0, cfg.seed);
  cfg.base = root.contains("base")
                 ? parse_distribution(root["base"], "base", cfg.target.dim, cfg.seed)
                 : parse_distribution(Json{{"type", "std_gaussian"}}, "base", cfg.target.dim,
                                      cfg.seed);
  if (cfg.base.dim != cfg.target.dim)
    throw ConfigError("'base' dimension " + std::to_string(cfg.base.dim) +
                      " differs from 'target' dimension " + std::to_string(cfg.target.dim));

  if (root.contains("model")) {
    cfg.model = detail::spec_from_json(root["model"], cfg.dim(), "model.");
    try {
      cfg.model->validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("'model': ") + e.what());
    }
  }
  if (root.contains("train")) {
    parse_train(root["train"], cfg);
  } else {
    cfg.train.seed = cfg.seed;
  }
  if (root.contains("solver")) parse_solver(root["solver"], cfg.solver);
  cfg.divergence.seed = cfg.seed;
  if (root.contains("divergence")) parse_divergence(root["divergence"], cfg.divergence);

  if (root.contains("sample")) {
    const Json& s = root["sample"];
    reject_unknown_keys(s, {"n", "likelihood"}, "sample.");
    cfg.sample.n = get_or<Index>(s, "n", cfg.sample.n, "sample.");
    cfg.sample.likelihood = get_or<bool>(s, "likelihood", false, "sample.");
    if (cfg.sample.n < 0) throw ConfigError("'sample.n' must be >= 0");
  }
  if (root.contains("diagnose")) {
    const Json& d = root["diagnose"];
    const std::string w = "diagnose.";
    reject_unknown_keys(d, {"error_map", "bound_check", "bound_n", "h_samples", "grid_times",
                            "grid_points"},
                        w);
    DiagnoseSettings& s = cfg.diagnose;
    s.error_map = get_or<bool>(d, "error_map", s.error_map, w);
    s.bound_check = get_or<bool>(d, "bound_check", s.bound_check, w);
    s.bound_n = get_or<Index>(d, "bound_n", s.bound_n, w);
    s.h_samples = get_or<std::size_t>(d, "h_samples", s.h_samples, w);
    s.grid_times = get_or<Index>(d, "grid_times", s.grid_times, w);
    s.grid_points = get_or<Index>(d, "grid_points", s.grid_points, w);
    if (s.bound_n < 1 || s.bound_n > 4096 || s.grid_times < 1 ||
        s.grid_points < 1 || s.h_samples < 1)
      throw ConfigError("'diagnose' sizes out of range");
  }
  if (root.contains("langevin")) {
    const Json& l = root["langevin"];
    const std::string w = "langevin.";
    reject_unknown_keys(l, {"enabled", "t", "dtau", "steps", "chains"}, w);
    LangevinSettings& s = cfg.langevin;
    s.enabled = get_or<bool>(l, "enabled", true, w);
    s.t = get_or<double>(l, "t", s.t, w);
    s.dtau = get_or<double>(l, "dtau", s.dtau, w);
    s.steps = get_or<std::int64_t>(l, "steps", s.steps, w);
    s.chains = get_or<Index>(l, "chains", s.chains, w);
    if (!(s.t >= 0.0 && s.t <= 1.0) || !(s.dtau > 0.0) || s.steps < 0 || s.chains < 1)
      throw ConfigError("'langevin' settings out of range");
  }
  cfg.experimental_score_schedule = get_or<bool>(root, "experimental_score_schedule", false, "");
  return cfg;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (root.is_object() && root.value("format", "") == "siflow-manifest") {
    if (!root.contains("config")) throw ConfigError("manifest has no 'config'");
    root = root["config"];
  }
  return parse_json(root);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& cfg, int indent) {
  Json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  if (cfg.schedule_source.rfind("csv:", 0) == 0)
    j["schedule"] = Json{{"csv", cfg.schedule_source.substr(4)}};
  else
    j["schedule"] = cfg.schedule_source;
  j["base"] = distribution_to_json(cfg.base);
  j["target"] = distribution_to_json(cfg.target);
  if (cfg.model) j["model"] = detail::spec_to_json(*cfg.model);
  j["train"] = train_to_json(cfg);
  Json solver{{"rtol", cfg.solver.rtol}, {"atol", cfg.solver.atol}, {"max_steps", cfg.solver.max_steps}};
  if (cfg.solver.initial_step) solver["initial_step"] = *cfg.solver.initial_step;
  j["solver"] = solver;
  j["divergence"] = {{"mode", mode_name(cfg.divergence.mode)},
                     {"exact_limit", cfg.divergence.exact_limit},
                     {"probes", cfg.divergence.probes},
                     {"seed", cfg.divergence.seed}};
  j["sample"] = {{"n", cfg.sample.n}, {"likelihood", cfg.sample.likelihood}};
  j["diagnose"] = {{"error_map", cfg.diagnose.error_map},
                   {"bound_check", cfg.diagnose.bound_check},
                   {"bound_n", cfg.diagnose.bound_n},
                   {"h_samples", cfg.diagnose.h_samples},
                   {"grid_times", cfg.diagnose.grid_times},
                   {"grid_points", cfg.diagnose.grid_points}};
  j["langevin"] = {{"enabled", cfg.langevin.enabled},
                   {"t", cfg.langevin.t},
                   {"dtau", cfg.langevin.dtau},
                   {"steps", cfg.langevin.steps},
                   {"chains", cfg.langevin.chains}};
  j["experimental_score_schedule"] = cfg.experimental_score_schedule;
  return j.dump(indent);
}

std::string override_key(const std::string& text, const std::string& dotted_key,
                         const std::string& value) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Json* target = &root;
  if (root.is_object() && root.value("format", "") == "siflow-manifest") target = &root["config"];
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot - start);
    if (dot == std::string::npos) {
      Json parsed;
      try {
        parsed = Json::parse(value);
      } catch (const nlohmann::json::parse_error&) {
        parsed = value;
      }
      (*target)[part] = parsed;
      break;
    }
    target = &(*target)[part];
    if (!target->is_object() && !target->is_null())
      throw ConfigError("cannot override '" + dotted_key + "'");
    start = dot + 1;
  }
  return root.dump();
}

std::string config_hash(const RunConfig& cfg) {
  return detail::fnv1a_hex(config_to_json(cfg, -1));
}

std::unique_ptr<Sampler> make_sampler(const DistributionSpec& spec,
                                      std::shared_ptr<const TabularDataset>* dataset) {
  switch (spec.kind) {
    case DistributionKind::StdGaussian: return make_std_gaussian(spec.dim);
    case DistributionKind::Mixture: return make_mixture_sampler(*spec.mixture);
    case DistributionKind::EightGaussians: return make_eight_gaussians();
    case DistributionKind::Checkerboard: return std::make_unique<CheckerboardSampler>();
    case DistributionKind::TwoMoons: return std::make_unique<TwoMoonsSampler>();
    case DistributionKind::Dataset: {
      auto data = std::make_shared<const TabularDataset>(
          ingest_csv(spec.dataset.path, spec.dataset.fractions, spec.dataset.split_seed,
                     spec.dataset.standardize));
      if (data->dim() != spec.dim)
        throw ConfigError("dataset " + spec.dataset.path.string() + " has " +
                          std::to_string(data->dim()) + " columns, config says " +
                          std::to_string(spec.dim));
      if (dataset) *dataset = data;
      return std::make_unique<DatasetSampler>(data, Split::Train, spec.dataset.mode);
    }
  }
  throw ContractError("unknown distribution kind");
}

const GaussianMixture* analytic_mixture(const DistributionSpec& spec) {
  return spec.mixture ? &*spec.mixture : nullptr;
}

}  // namespace siflow
