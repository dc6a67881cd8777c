#include "siflow/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <utility>

#include "CLI11.hpp"
#include "json_io.hpp"
#include "siflow/config.hpp"
#include "siflow/csv.hpp"
#include "siflow/eval.hpp"
#include "siflow/score_sde.hpp"

#ifndef SIFLOW_VERSION
#define SIFLOW_VERSION "0.0.0"
#endif
#ifndef SIFLOW_GIT_REV
#define SIFLOW_GIT_REV "unknown"
#endif

namespace siflow {
namespace {

namespace fs = std::filesystem;
using detail::Json;

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> shards;
  std::optional<Index> n;
  std::string checkpoint;
  std::string input;
  bool oracle = false;
  bool likelihood = false;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return os.str();
}

fs::path make_run_dir(const RunConfig& cfg, const std::string& stamp) {
  const std::string base = stamp + "-" + config_hash(cfg);
  fs::path dir = cfg.output_dir / base;
  for (int k = 2; fs::exists(dir); ++k) dir = cfg.output_dir / (base + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

// Collects everything a run records about itself.
class Manifest {
 public:
  Manifest(const std::string& command, const RunConfig& cfg, std::string stamp) {
    doc_["format"] = "siflow-manifest";
    doc_["version"] = SIFLOW_VERSION;
    doc_["git"] = SIFLOW_GIT_REV;
    doc_["command"] = command;
    doc_["created"] = std::move(stamp);
    doc_["config_hash"] = config_hash(cfg);
    doc_["config"] = Json::parse(config_to_json(cfg));
    doc_["inputs"] = Json::object();
    doc_["outputs"] = Json::array();
    doc_["results"] = Json::object();
  }
  void input(const std::string& role, const fs::path& path) {
    doc_["inputs"][role] = {{"path", path.string()},
                            {"fnv1a", detail::fnv1a_hex(read_text(path))}};
  }
  void output(const std::string& name) { doc_["outputs"].push_back(name); }
  Json& results() { return doc_["results"]; }
  void set(const std::string& key, Json value) { doc_[key] = std::move(value); }
  void write(const fs::path& dir) const {
    std::ofstream out(dir / "manifest.json");
    out << doc_.dump(2) << '\n';
  }

 private:
  Json doc_;
};

struct Field {
  std::shared_ptr<const VelocityField> field;
  std::shared_ptr<Mlp> mlp;  // set for learned fields
  std::string kind;
};

MixturePath oracle_path(const RunConfig& cfg) {
  const GaussianMixture* base = analytic_mixture(cfg.base);
  const GaussianMixture* target = analytic_mixture(cfg.target);
  if (!base || !target)
    throw ConfigError("oracle mode needs Gaussian-mixture 'base' and 'target'");
  return MixturePath(*base, *target, cfg.schedule);
}

std::shared_ptr<Mlp> load_model(const RunConfig& cfg, const std::string& path) {
  auto mlp = std::make_shared<Mlp>(load_checkpoint(path));
  if (mlp->spec().data_dim != cfg.dim())
    throw ConfigError("checkpoint dimension " + std::to_string(mlp->spec().data_dim) +
                      " does not match config dimension " + std::to_string(cfg.dim()));
  if (cfg.model && !(*cfg.model == mlp->spec()))
    throw ConfigError("checkpoint model spec does not match config 'model'");
  return mlp;
}

Field resolve_field(const RunConfig& cfg, const Options& opt, Manifest& manifest,
                    bool fresh_fallback) {
  if (!opt.checkpoint.empty()) {
    auto mlp = load_model(cfg, opt.checkpoint);
    manifest.input("checkpoint", opt.checkpoint);
    return {std::make_shared<MlpField>(*mlp, cfg.divergence), mlp, "checkpoint"};
  }
  if (opt.oracle && !fresh_fallback)
    return {std::make_shared<OracleVelocity>(oracle_path(cfg)), nullptr, "oracle"};
  if (fresh_fallback) {
    if (!cfg.model) throw ConfigError("missing required key 'model'");
    auto mlp = std::make_shared<Mlp>(*cfg.model, cfg.seed);
    return {std::make_shared<MlpField>(*mlp, cfg.divergence), mlp, "fresh"};
  }
  throw ConfigError("give --checkpoint PATH or --oracle");
}

LogDensity base_log_density(const RunConfig& cfg) {
  const GaussianMixture* base = analytic_mixture(cfg.base);
  if (!base) throw ConfigError("likelihoods need an analytic 'base' density");
  return [g = *base](const Vec& x) { return g.log_density(x); };
}

std::shared_ptr<const TabularDataset> standardized_dataset(const RunConfig& cfg) {
  if (cfg.target.kind != DistributionKind::Dataset || !cfg.target.dataset.standardize)
    return nullptr;
  std::shared_ptr<const TabularDataset> data;
  make_sampler(cfg.target, &data);
  return data;
}

std::vector<std::string> point_header(Index d, const std::string& prefix = "x_") {
  std::vector<std::string> h;
  for (Index i = 0; i < d; ++i) h.push_back(prefix + std::to_string(i + 1));
  return h;
}

void write_csv_file(const fs::path& path, const std::vector<std::string>& header,
                    const Mat& columns) {
  std::ofstream out(path, std::ios::binary);
  write_csv(out, header, columns);
}

Json estimate_json(const Estimate& e) {
  return {{"mean", e.mean}, {"std_error", e.std_error}, {"count", e.count}};
}

int cmd_train(const RunConfig& cfg, const Options&, Manifest& manifest, const fs::path& dir,
              std::ostream& out) {
  if (!cfg.model) throw ConfigError("missing required key 'model'");
  Mlp mlp(*cfg.model, cfg.seed);
  auto base = make_sampler(cfg.base);
  auto target = make_sampler(cfg.target);

  TrainCallbacks callbacks;
  callbacks.checkpoint_interval = cfg.checkpoint_interval;
  callbacks.on_checkpoint = [&](const Mlp& m, std::int64_t step) {
    const std::string name = "checkpoint_step" + std::to_string(step) + ".json";
    save_checkpoint(m, dir / name);
    manifest.output(name);
  };

  TrainResult result;
  int code = kExitOk;
  std::string failure;
  std::vector<StepRecord> partial;
  callbacks.on_step = [&](const StepRecord& r) { partial.push_back(r); };
  try {
    result = train(mlp, cfg.schedule, *base, *target, cfg.train, callbacks);
  } catch (const NumericError& e) {
    code = kExitNumeric;
    failure = e.what();
    result.history = partial;
  }

  const bool with_penalty = cfg.train.lambda_reg > 0.0;
  std::vector<std::string> header{"step", "G", "G_tilde", "lr"};
  if (with_penalty) header.push_back("penalty");
  Mat loss(static_cast<Index>(header.size()), static_cast<Index>(result.history.size()));
  Mat timing(2, static_cast<Index>(result.history.size()));
  for (std::size_t k = 0; k < result.history.size(); ++k) {
    const StepRecord& r = result.history[k];
    const Index c = static_cast<Index>(k);
    loss(0, c) = static_cast<double>(r.step);
    loss(1, c) = r.G;
    loss(2, c) = r.G_tilde;
    loss(3, c) = r.lr;
    if (with_penalty) loss(4, c) = r.penalty;
    timing(0, c) = static_cast<double>(r.step);
    timing(1, c) = r.wall_ms;
  }
  write_csv_file(dir / "loss.csv", header, loss);
  write_csv_file(dir / "timing.csv", {"step", "wall_ms"}, timing);
  manifest.output("loss.csv");
  manifest.output("timing.csv");
  if (code != kExitOk) {
    manifest.set("error", failure);
    return code;
  }
  save_checkpoint(mlp, dir / "checkpoint.json");
  manifest.output("checkpoint.json");
  manifest.results()["final_G_tilde"] = estimate_json(result.final_diagnostic);
  if (!result.history.empty()) manifest.results()["final_G"] = result.history.back().G;
  out << "final_G_tilde=" << format_double(result.final_diagnostic.mean) << '\n';
  return kExitOk;
}

int cmd_sample(const RunConfig& cfg, const Options& opt, Manifest& manifest,
               const fs::path& dir, std::ostream& out) {
  const Field field = resolve_field(cfg, opt, manifest, false);
  manifest.set("field", field.kind);
  const Index d = cfg.dim();
  const Index n = cfg.sample.n;
  const bool with_ld = cfg.sample.likelihood;
  const std::uint64_t seed = derive_seed(cfg.seed, Stream::Eval, 0);
  manifest.results()["sample_seed"] = seed;
  if (with_ld && field.field->stochastic_divergence())
    manifest.results()["divergence"] = "hutchinson estimate";

  auto header = point_header(d);
  if (with_ld) header.push_back("log_density");
  if (n == 0) {
    write_csv_file(dir / "samples.csv", header, Mat(d + (with_ld ? 1 : 0), 0));
    manifest.output("samples.csv");
    out << "n=0\n";
    return kExitOk;
  }
  auto base = make_sampler(cfg.base);
  Mat points;
  Vec ld;
  if (with_ld) {
    SamplesWithDensity s = sample_with_likelihood(*field.field, *base, base_log_density(cfg), n,
                                                  cfg.solver, seed);
    points = std::move(s.points);
    ld = std::move(s.log_density);
  } else {
    points = push_samples(*field.field, *base, n, cfg.solver, seed);
  }
  if (auto data = standardized_dataset(cfg)) {
    points = data->to_raw(points);
    if (with_ld) ld.array() += data->log_det_correction();
  }
  Mat table(d + (with_ld ? 1 : 0), n);
  table.topRows(d) = points;
  if (with_ld) table.row(d) = ld.transpose();
  write_csv_file(dir / "samples.csv", header, table);
  manifest.output("samples.csv");
  const Vec mean = points.rowwise().mean();
  manifest.results()["mean"] = detail::vec_to_json(mean);
  out << "n=" << n << '\n';
  for (Index i = 0; i < d; ++i) out << "mean_" << i + 1 << '=' << format_double(mean[i]) << '\n';
  return kExitOk;
}

int cmd_likelihood(const RunConfig& cfg, const Options& opt, Manifest& manifest,
                   const fs::path& dir, std::ostream& out) {
  if (opt.input.empty()) throw ConfigError("likelihood needs --input CSV");
  const CsvTable table = read_csv(opt.input);
  manifest.input("points", opt.input);
  const Index d = cfg.dim();
  if (table.rows.rows() == 0) throw ConfigError("input " + opt.input + " has no rows");
  if (table.rows.cols() != d)
    throw ConfigError("input has " + std::to_string(table.rows.cols()) +
                      " columns, model dimension is " + std::to_string(d));
  const Field field = resolve_field(cfg, opt, manifest, false);
  manifest.set("field", field.kind);
  Mat points = table.rows.transpose();
  double correction = 0.0;
  if (auto data = standardized_dataset(cfg)) {
    points = data->to_model(points);
    correction = data->log_det_correction();
  }
  const NllResult r =
      heldout_nll(*field.field, points, base_log_density(cfg), cfg.solver, correction);
  Mat rows(d + 1, points.cols());
  rows.topRows(d) = table.rows.transpose();
  rows.row(d) = r.log_density.transpose();
  auto header = point_header(d);
  header.push_back("log_density");
  write_csv_file(dir / "log_density.csv", header, rows);
  manifest.output("log_density.csv");

  EvalReport report;
  report.metric = "nll";
  report.value = r.nll.mean;
  report.std_error = r.nll.std_error;
  report.valid = r.valid;
  report.sizes = {{"points", points.cols()}, {"failures", r.failures}};
  report.seeds = {{"run", cfg.seed}};
  report.settings_hash = config_hash(cfg);
  if (field.field->stochastic_divergence()) report.note = "divergence estimated stochastically";
  std::ofstream rep(dir / "report.json");
  write_reports(rep, {report});
  manifest.output("report.json");
  manifest.results()["nll"] = estimate_json(r.nll);
  manifest.results()["failures"] = r.failures;
  out << "nll=" << format_double(r.nll.mean) << '\n';
  out << "failures=" << r.failures << '\n';
  return r.valid ? kExitOk : kExitNumeric;
}

Mat bulk_grid(const MixturePath& path, Index per_axis, std::uint64_t seed) {
  const Index d = path.dim();
  const Index count = d == 1 ? per_axis : d == 2 ? per_axis * per_axis : per_axis;
  return probe_points(bulk_box(path), count, seed);
}

EvalReport error_map_report(const RunConfig& cfg, const MixturePath& path,
                            const VelocityField& v, const fs::path& dir, Manifest& manifest) {
  const Vec ts = linspace(0.05, 0.95, cfg.diagnose.grid_times);
  const Mat pts = bulk_grid(path, cfg.diagnose.grid_points, cfg.seed);
  const ErrorMap map = velocity_error_map(path, v, ts, pts);
  std::ofstream csv(dir / "velocity_error.csv", std::ios::binary);
  write_error_map(csv, map);
  manifest.output("velocity_error.csv");
  EvalReport r;
  r.metric = "max_velocity_error";
  r.value = map.max();
  r.sizes = {{"times", ts.size()}, {"points", pts.cols()}};
  r.seeds = {{"grid", cfg.seed}};
  r.settings_hash = config_hash(cfg);
  return r;
}

int cmd_diagnose(const RunConfig& cfg, const Options& opt, Manifest& manifest,
                 const fs::path& dir, std::ostream& out) {
  std::optional<MixturePath> path;
  if (opt.oracle) path.emplace(oracle_path(cfg));
  Options field_opt = opt;
  field_opt.oracle = false;
  const Field field = resolve_field(cfg, field_opt, manifest, true);
  manifest.set("field", field.kind);
  auto base = make_sampler(cfg.base);
  auto target = make_sampler(cfg.target);
  const std::uint64_t seed = derive_seed(cfg.seed, Stream::Diagnostic);
  TripleBatch batch = draw_triples(cfg.schedule, *base, *target, cfg.train.diagnostic_plan, seed);
  const ObjectiveTerms terms = objective_terms(*field.field, batch);

  std::vector<EvalReport> reports;
  EvalReport g;
  g.metric = "G";
  g.value = terms.G.mean;
  g.std_error = terms.G.std_error;
  g.sizes = {{"triples", batch.size()}};
  g.seeds = {{"batch", seed}};
  g.settings_hash = config_hash(cfg);
  reports.push_back(g);
  EvalReport gt = g;
  gt.metric = "G_tilde";
  gt.value = terms.shifted.mean;
  gt.std_error = terms.shifted.std_error;
  reports.push_back(gt);
  out << "G=" << format_double(g.value) << '\n';
  out << "G_tilde=" << format_double(gt.value) << '\n';

  if (path) {
    if (cfg.diagnose.error_map) {
      reports.push_back(error_map_report(cfg, *path, *field.field, dir, manifest));
      out << "max_velocity_error=" << format_double(reports.back().value) << '\n';
    }
    if (cfg.diagnose.bound_check) {
      BoundCheckOptions bo;
      bo.h_samples = cfg.diagnose.h_samples;
      const std::uint64_t bseed = derive_seed(cfg.seed, Stream::Eval, 2);
      const BoundCheck b = wasserstein_bound_check(*path, *field.field, cfg.diagnose.bound_n,
                                                   cfg.solver, bseed, bo);
      EvalReport r;
      r.metric = "wasserstein_bound";
      r.value = b.lhs;
      r.valid = !b.violation;
      r.sizes = {{"n", b.n}, {"h_samples", static_cast<std::int64_t>(bo.h_samples)}};
      r.seeds = {{"check", bseed}};
      r.extra = {{"lhs", b.lhs},           {"rhs", b.rhs},
                 {"lipschitz", b.lipschitz}, {"H", b.h.mean},
                 {"H_std_error", b.h.std_error}, {"noise_floor", b.noise_floor},
                 {"violation", b.violation ? 1.0 : 0.0}};
      r.settings_hash = config_hash(cfg);
      r.note = "Lipschitz constant estimated on a finite probe grid";
      reports.push_back(r);
      out << "bound_lhs=" << format_double(b.lhs) << '\n';
      out << "bound_rhs=" << format_double(b.rhs) << '\n';
      out << "bound_violation=" << (b.violation ? 1 : 0) << '\n';
    }
  }
  std::ofstream rep(dir / "report.json");
  write_reports(rep, reports);
  manifest.output("report.json");
  manifest.results()["G_tilde"] = estimate_json(terms.shifted);
  return kExitOk;
}

int cmd_validate_schedule(const RunConfig& cfg, Manifest& manifest, const fs::path& dir,
                          std::ostream& out) {
  const ScheduleReport report = validate_schedule(cfg.schedule);
  Json checks = Json::array();
  for (const ScheduleCheck& c : report.checks) {
    checks.push_back({{"name", c.name},
                      {"passed", c.passed},
                      {"worst_t", c.worst_t},
                      {"worst_value", c.worst_value}});
    out << c.name << '=' << (c.passed ? "pass" : "fail") << '\n';
  }
  const Json doc{{"schedule", cfg.schedule.name()}, {"passed", report.all_passed()},
                 {"checks", checks}};
  std::ofstream rep(dir / "schedule_report.json");
  rep << doc.dump(2) << '\n';
  manifest.output("schedule_report.json");
  manifest.results()["passed"] = report.all_passed();
  return report.all_passed() ? kExitOk : kExitConfig;
}

int cmd_oracle_compare(const RunConfig& cfg, const Options& opt, Manifest& manifest,
                       const fs::path& dir, std::ostream& out) {
  const MixturePath path = oracle_path(cfg);
  Options field_opt = opt;
  field_opt.oracle = true;
  const Field field = resolve_field(cfg, field_opt, manifest, false);
  manifest.set("field", field.kind);

  std::vector<EvalReport> reports;
  reports.push_back(error_map_report(cfg, path, *field.field, dir, manifest));
  out << "max_velocity_error=" << format_double(reports.back().value) << '\n';

  const bool score_ok = path.base().is_standard_normal() &&
                        (cfg.schedule.kind() == ScheduleKind::Trigonometric ||
                         cfg.experimental_score_schedule);
  if (score_ok) {
    ScoreField sf;
    sf.velocity = field.field;
    sf.schedule = cfg.schedule;
    sf.experimental_schedule = cfg.experimental_score_schedule;
    const Index d = cfg.dim();
    const Vec ts = linspace(0.05, 0.95, cfg.diagnose.grid_times);
    const Mat pts = bulk_grid(path, cfg.diagnose.grid_points, cfg.seed);
    Mat rows(1 + 3 * d + 1, ts.size() * pts.cols());
    double worst = 0.0;
    Index c = 0;
    for (Index i = 0; i < ts.size(); ++i) {
      const Mat s = score_from_velocity(sf, ts[i], pts);
      const PathSlice slice = path.at(ts[i]);
      for (Index j = 0; j < pts.cols(); ++j, ++c) {
        const Vec exact = slice.score(pts.col(j));
        const double e = (s.col(j) - exact).norm();
        worst = std::max(worst, e);
        rows(0, c) = ts[i];
        rows.block(1, c, d, 1) = pts.col(j);
        rows.block(1 + d, c, d, 1) = s.col(j);
        rows.block(1 + 2 * d, c, d, 1) = exact;
        rows(1 + 3 * d, c) = e;
      }
    }
    std::vector<std::string> header{"t"};
    for (const auto& h : point_header(d)) header.push_back(h);
    for (const auto& h : point_header(d, "score_")) header.push_back(h);
    for (const auto& h : point_header(d, "exact_score_")) header.push_back(h);
    header.push_back("error");
    write_csv_file(dir / "score_grid.csv", header, rows);
    manifest.output("score_grid.csv");
    EvalReport r;
    r.metric = "max_score_error";
    r.value = worst;
    r.sizes = {{"times", ts.size()}, {"points", pts.cols()}};
    r.settings_hash = config_hash(cfg);
    reports.push_back(r);
    out << "max_score_error=" << format_double(worst) << '\n';

    if (cfg.langevin.enabled) {
      const LangevinSettings& l = cfg.langevin;
      Rng init_rng(derive_seed(cfg.seed, Stream::Langevin, 0));
      const Mat init = path.base().sample(l.chains, init_rng);
      const std::uint64_t lseed = derive_seed(cfg.seed, Stream::Langevin, 1);
      const Mat chains = langevin_sample(sf, l.t, init, l.dtau, l.steps, lseed);
      write_csv_file(dir / "langevin.csv", point_header(d), chains);
      manifest.output("langevin.csv");
      EvalReport lr;
      lr.metric = "langevin_mean_norm";
      lr.value = chains.rowwise().mean().norm();
      lr.sizes = {{"chains", l.chains}, {"steps", l.steps}};
      lr.seeds = {{"chains", lseed}};
      lr.settings_hash = config_hash(cfg);
      reports.push_back(lr);
    }
  }
  std::ofstream rep(dir / "report.json");
  write_reports(rep, reports);
  manifest.output("report.json");
  return kExitOk;
}

int dispatch(const Options& opt, std::ostream& out) {
  std::string text = read_text(opt.config_path);
  if (opt.seed) text = override_key(text, "seed", std::to_string(*opt.seed));
  if (opt.out) text = override_key(text, "output_dir", Json(*opt.out).dump());
  if (opt.shards) text = override_key(text, "train.shards", std::to_string(*opt.shards));
  if (opt.n) text = override_key(text, "sample.n", std::to_string(*opt.n));
  if (opt.likelihood) text = override_key(text, "sample.likelihood", "true");
  const RunConfig cfg = parse_config(text);

  const std::string stamp = utc_stamp();
  const fs::path dir = make_run_dir(cfg, stamp);
  Manifest manifest(opt.command, cfg, stamp);
  manifest.set("run_dir", dir.string());
  out << "run_dir=" << dir.string() << '\n';
  int code = kExitOk;
  try {
    if (opt.command == "train") code = cmd_train(cfg, opt, manifest, dir, out);
    else if (opt.command == "sample") code = cmd_sample(cfg, opt, manifest, dir, out);
    else if (opt.command == "likelihood") code = cmd_likelihood(cfg, opt, manifest, dir, out);
    else if (opt.command == "diagnose") code = cmd_diagnose(cfg, opt, manifest, dir, out);
    else if (opt.command == "validate-schedule") code = cmd_validate_schedule(cfg, manifest, dir, out);
    else if (opt.command == "oracle-compare") code = cmd_oracle_compare(cfg, opt, manifest, dir, out);
  } catch (const std::exception& e) {
    manifest.set("error", e.what());
    manifest.write(dir);
    throw;
  }
  manifest.set("exit_code", code);
  manifest.write(dir);
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stochastic-interpolant normalizing flows"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  std::string out_dir;
  int shards = 1;
  Index n = 0;
  std::vector<CLI::App*> subs;
  const std::pair<const char*, const char*> commands[] = {
      {"train", "Fit a velocity field and write loss.csv and checkpoint.json"},
      {"sample", "Push base samples through a trained or oracle field"},
      {"likelihood", "Log-density of --input points under the flow"},
      {"diagnose", "G-tilde, velocity error map and Wasserstein bound check"},
      {"validate-schedule", "Check a schedule's boundary and monotonicity conditions"},
      {"oracle-compare", "Velocity, score and Langevin checks against the analytic path"}};
  for (const auto& [name, about] : commands) {
    CLI::App* sub = app.add_subcommand(name, about);
    sub->add_option("--config", opt.config_path, "Run config or manifest (JSON)")->required();
    sub->add_option("--seed", seed, "Override the run seed");
    sub->add_option("--out", out_dir, "Override the output directory");
    sub->add_option("--shards", shards, "Override train.shards");
    sub->add_option("--n", n, "Override sample.n");
    sub->add_option("--checkpoint", opt.checkpoint, "Model checkpoint");
    sub->add_option("--input", opt.input, "Input CSV of points");
    sub->add_flag("--oracle", opt.oracle, "Use or compare against the analytic velocity");
    sub->add_flag("--likelihood", opt.likelihood, "Also emit log-densities");
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  for (CLI::App* sub : subs) {
    if (!sub->parsed()) continue;
    opt.command = sub->get_name();
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--out")) opt.out = out_dir;
    if (sub->count("--shards")) opt.shards = shards;
    if (sub->count("--n")) opt.n = n;
  }
  try {
    return dispatch(opt, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace siflow
