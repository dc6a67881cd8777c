// Acceptance run: one PASS/FAIL line per criterion.
//
// Exit status is 0 when every check ran to completion, whatever its verdict,
// and 1 when a check could not be evaluated. Pass --strict to also exit 1 on
// any FAIL. The lines are also written to acceptance_report.txt in the
// working directory, since test drivers tend to hide output of passing runs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "siflow/cli.hpp"
#include "siflow/config.hpp"
#include "siflow/data.hpp"
#include "siflow/eval.hpp"
#include "siflow/flow_ode.hpp"
#include "siflow/gmm.hpp"
#include "siflow/interpolant.hpp"
#include "siflow/mlp.hpp"
#include "siflow/objective.hpp"
#include "siflow/random.hpp"
#include "siflow/score_sde.hpp"
#include "test_paths.hpp"

namespace fs = std::filesystem;
using namespace siflow;
using testing::kPi;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() /
                       ("siflow_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// Runs the command-line front end in-process; returns the run directory.
fs::path cli(const std::vector<std::string>& args, const std::string& tag) {
  std::vector<const char*> argv{"siflow"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  const std::string out_dir = (scratch_root() / tag).string();
  argv.push_back("--out");
  argv.push_back(out_dir.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != kExitOk)
    throw std::runtime_error(args[0] + " exited " + std::to_string(code) + ": " + err.str());
  std::istringstream lines(out.str());
  std::string line;
  while (std::getline(lines, line))
    if (line.rfind("run_dir=", 0) == 0) return line.substr(8);
  throw std::runtime_error("no run_dir in CLI output");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const std::string& text, const std::string& name) {
  const fs::path p = scratch_root() / name;
  std::ofstream(p) << text;
  return p;
}

double central4(const std::function<double(double)>& f, double h) {
  return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
}

Verdict continuity() {
  const auto t0 = std::chrono::steady_clock::now();
  const double h = 1e-4;
  double worst = 0.0;
  for (const MixturePath& p : {testing::gaussian_pair_1d(), testing::eight_gaussian_path(),
                               testing::two_to_three_path()}) {
    Rng rng(2024);
    for (int k = 0; k < 1000; ++k) {
      const double t = rng.uniform(0.01, 0.99);
      const Vec x = interpolate(p.schedule(), t, p.base().sample(1, rng).col(0),
                                p.target().sample(1, rng).col(0));
      const double drho = central4([&](double s) { return p.density(t + s, x); }, h);
      double div = 0.0;
      for (Index i = 0; i < p.dim(); ++i)
        div += central4(
            [&](double s) {
              Vec y = x;
              y[i] += s;
              return p.current(t, y)[i];
            },
            h);
      worst = std::max(worst, std::abs(drho + div) / (std::abs(drho) + 1e-12));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10.0,
          "worst relative residual " + fmt("%.3g", worst) + " over 3x1000 points, " +
              fmt("%.1f", secs) + " s"};
}

Verdict objective_floor() {
  const auto t0 = std::chrono::steady_clock::now();
  const MixturePath path = testing::gaussian_pair_1d();
  const OracleVelocity v(path);
  MixtureSampler base(path.base()), target(path.target());
  BatchPlan plan;
  plan.pairing = Pairing::Paired;
  plan.base_batch = plan.target_batch = plan.time_batch = 1000000;
  const Estimate g = empirical_G(v, path.schedule(), base, target, plan, 0);
  const Estimate s = shifted_diagnostic(v, path.schedule(), base, target, plan, 12);
  const double secs = seconds_since(t0);
  const bool ok = g.within(-kPi * kPi / 2, 3.0) && s.within(0.0, 3.0) && secs < 30.0;
  return {ok, "G=" + fmt("%.5f", g.mean) + " (se " + fmt("%.4f", g.std_error) +
                  ", target -4.9348), G_tilde=" + fmt("%.5f", s.mean) + " (se " +
                  fmt("%.4f", s.std_error) + "), " + fmt("%.1f", secs) + " s"};
}

Verdict training_1d() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = load_config(fs::path(SIFLOW_CONFIG_DIR) / "gaussian_1d.json");
  const fs::path run = cli({"train", "--config", (fs::path(SIFLOW_CONFIG_DIR) / "gaussian_1d.json").string()},
                           "train_1d");
  const double secs = seconds_since(t0);
  const Mlp mlp = load_checkpoint(run / "checkpoint.json");
  const MlpField field(mlp);
  const MixturePath path = testing::gaussian_pair_1d();
  const ErrorMap map = velocity_error_map(path, field, linspace(0.05, 0.95, 19),
                                          linspace(-3.0, 5.0, 81).transpose());
  // G-tilde on the held-out diagnostic batch, re-evaluated independently of
  // the training loop.
  auto base = make_sampler(cfg.base);
  auto target = make_sampler(cfg.target);
  const TripleBatch batch = draw_triples(cfg.schedule, *base, *target, cfg.train.diagnostic_plan,
                                         derive_seed(cfg.seed, Stream::Diagnostic));
  const Estimate gt = objective_terms(field, batch).shifted;
  const bool ok = map.max() < 0.05 && std::abs(gt.mean) < 0.1 && secs < 300.0;
  return {ok, "max grid error " + fmt("%.4f", map.max()) + " (limit 0.05), G_tilde=" +
                  fmt("%.4f", gt.mean) + " (se " + fmt("%.4f", gt.std_error) + "), train " +
                  fmt("%.0f", secs) + " s"};
}

Verdict training_2d() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path cfg_path = fs::path(SIFLOW_CONFIG_DIR) / "eight_gaussians.json";
  const RunConfig cfg = load_config(cfg_path);
  const fs::path run = cli({"train", "--config", cfg_path.string()}, "train_2d");
  const Mlp mlp = load_checkpoint(run / "checkpoint.json");
  const MlpField field(mlp);
  const MixturePath path(GaussianMixture::standard_normal(2), eight_gaussians(), cfg.schedule);
  const OracleVelocity oracle(path);

  const Index n = 2048;
  Rng base_rng(derive_seed(cfg.seed, Stream::Eval, 0));
  Rng target_rng(derive_seed(cfg.seed, Stream::Eval, 1));
  const Mat x0 = path.base().sample(n, base_rng);
  const Mat y = path.target().sample(n, target_rng);
  const double w2 = exact_w2(integrate(field, x0, 0.0, 1.0, cfg.solver), y);
  const double w2_oracle = exact_w2(integrate(oracle, x0, 0.0, 1.0, cfg.solver), y);
  const double secs = seconds_since(t0);
  const bool ok = w2 < 0.15 && w2 <= 2.0 * w2_oracle && secs < 1200.0;
  return {ok, "W2=" + fmt("%.4f", w2) + " (limit 0.15), oracle W2=" + fmt("%.4f", w2_oracle) +
                  " (ratio " + fmt("%.2f", w2 / w2_oracle) + ", limit 2), " + fmt("%.0f", secs) +
                  " s"};
}

Verdict likelihood() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = true;
  for (const auto& [name, path] :
       {std::pair{"1D", testing::gaussian_pair_1d()}, std::pair{"EightGaussians", testing::eight_gaussian_path()}}) {
    const OracleVelocity v(path);
    Rng rng(77);
    const Mat pts = path.target().sample(256, rng);
    const GaussianMixture base = path.base();
    const NllResult r = heldout_nll(
        v, pts, [&base](const Vec& x) { return base.log_density(x); }, Dopri5Settings{});
    double err = 0.0;
    for (Index j = 0; j < pts.cols(); ++j)
      err += std::abs(r.log_density[j] - path.target().log_density(pts.col(j)));
    err /= static_cast<double>(pts.cols());
    ok = ok && r.valid && err < 5e-3;
    detail += std::string(detail.empty() ? "" : ", ") + name + " mean |error| " + fmt("%.2e", err);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, detail + ", " + fmt("%.1f", secs) + " s"};
}

Verdict score_duality() {
  double worst = 0.0;
  for (const MixturePath& path : {testing::gaussian_pair_1d(), testing::eight_gaussian_path()}) {
    ScoreField sf;
    sf.velocity = std::make_shared<OracleVelocity>(path);
    const Mat pts = path.dim() == 1 ? Mat(linspace(-3.0, 5.0, 81).transpose())
                                    : probe_points(bulk_box(path), 41 * 41, 0);
    for (double t : linspace(0.05, 0.95, 19)) {
      const Mat s = score_from_velocity(sf, t, pts);
      for (Index j = 0; j < pts.cols(); ++j)
        worst = std::max(worst, (s.col(j) - path.score(t, pts.col(j))).cwiseAbs().maxCoeff());
    }
  }
  ScoreField sf;
  sf.velocity = std::make_shared<OracleVelocity>(testing::gaussian_pair_1d());
  const Mat xs = linspace(-3.0, 5.0, 81).transpose();
  const Mat s1 = score_from_velocity(sf, 1.0, xs);
  const double limit = (s1 - (2.0 - xs.array()).matrix()).cwiseAbs().maxCoeff();
  return {worst < 1e-6 && limit < 1e-3,
          "max grid error " + fmt("%.2e", worst) + ", t=1 limit vs 2-x " + fmt("%.2e", limit)};
}

Verdict integrator() {
  const AffineField decay(-Mat::Identity(1, 1), Vec::Zero(1));
  const double e = std::abs(integrate(decay, Mat::Ones(1, 1), 0.0, 1.0, Dopri5Settings{})(0, 0) -
                            std::exp(-1.0));
  bool ok = e < 1e-6;
  std::string detail = "e^-1 error " + fmt("%.3g", e);
  for (const auto& [name, path] :
       {std::pair{"1D", testing::gaussian_pair_1d()}, std::pair{"EightGaussians", testing::eight_gaussian_path()}}) {
    const OracleVelocity v(path);
    Rng rng(5);
    const Mat xs = path.base().sample(512, rng);
    const Mat back = integrate(v, integrate(v, xs, 0.0, 1.0, Dopri5Settings{}), 1.0, 0.0,
                               Dopri5Settings{});
    const double rt = (back - xs).cwiseAbs().maxCoeff();
    ok = ok && rt < 1e-4;
    detail += std::string(", ") + name + " round trip " + fmt("%.3g", rt);
  }
  return {ok, detail + " (limits 1e-6, 1e-4)"};
}

MlpSpec small_spec(Index d, std::vector<Index> widths, Activation act) {
  MlpSpec s;
  s.data_dim = d;
  s.hidden_widths = std::move(widths);
  s.activation = act;
  s.zero_init_output = false;
  return s;
}

Verdict gradients() {
  const double h = 1e-4;
  double worst_grad = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Mlp mlp(small_spec(2, {8}, Activation::ReLU), seed);
    Rng rng(5000 + seed);
    Vec ts(4);
    Mat xs(2, 4);
    // Inputs away from ReLU kinks, where the loss is not differentiable.
    for (Index j = 0; j < 4; ++j) {
      double m = 0.0;
      do {
        ts[j] = rng.uniform();
        xs.col(j) = rng.normal_matrix(2, 1);
        Mlp::Cache cache;
        mlp.forward(Vec::Constant(1, ts[j]), xs.col(j), &cache);
        m = std::numeric_limits<double>::infinity();
        for (const Mat& z : cache.pre) m = std::min(m, z.cwiseAbs().minCoeff());
      } while (m < 1e-3);
    }
    const Mat adjoint = rng.normal_matrix(2, 4);
    Mlp::Cache cache;
    mlp.forward(ts, xs, &cache);
    const Vec g = mlp.param_gradient(cache, adjoint).flatten();
    ParamPack params;
    params.layers = mlp.state().layers;
    const Vec theta = params.flatten();
    auto loss = [&](const Vec& p) {
      ParamPack q = params;
      q.unflatten(p);
      mlp.mutable_state().layers = q.layers;
      return (adjoint.array() * mlp.forward(ts, xs).array()).sum();
    };
    for (Index i = 0; i < theta.size(); ++i) {
      Vec up = theta, dn = theta;
      up[i] += h;
      dn[i] -= h;
      const double fd = (loss(up) - loss(dn)) / (2 * h);
      worst_grad = std::max(worst_grad, std::abs(g[i] - fd) /
                                            std::max({std::abs(g[i]), std::abs(fd), 1e-8}));
    }
  }
  double worst_div = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Mlp mlp(small_spec(3, {16, 16}, Activation::ELU), seed);
    Rng rng(seed + 9000);
    const double t = rng.uniform();
    const Vec x = rng.normal_matrix(3, 1);
    double fd = 0.0;
    for (Index i = 0; i < 3; ++i) {
      Vec up = x, dn = x;
      up[i] += h;
      dn[i] -= h;
      fd += (mlp(t, up)[i] - mlp(t, dn)[i]) / (2 * h);
    }
    const double exact = mlp.divergence(t, x);
    worst_div = std::max(worst_div, std::abs(exact - fd) / std::max(std::abs(fd), 1e-8));
  }
  return {worst_grad < 1e-5 && worst_div < 1e-4,
          "param gradient worst relative error " + fmt("%.2e", worst_grad) +
              " (50 seeds), divergence " + fmt("%.2e", worst_div)};
}

Verdict bound_sanity() {
  const MixturePath path = testing::two_to_three_path();
  const OffsetField v(std::make_shared<OracleVelocity>(path), testing::Vec2(0.5, 0.0));
  int violations = 0;
  double h_dev = 0.0, worst_ratio = 0.0;
  bool h_ok = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const BoundCheck b = wasserstein_bound_check(path, v, 512, Dopri5Settings{}, seed);
    violations += b.violation ? 1 : 0;
    h_ok = h_ok && b.h.within(0.25, 3.0, 1e-12);
    h_dev = std::max(h_dev, std::abs(b.h.mean - 0.25));
    worst_ratio = std::max(worst_ratio, b.lhs / b.rhs);
  }
  return {violations == 0 && h_ok,
          std::to_string(violations) + " violations over 20 seeds, max |H-0.25| " +
              fmt("%.2e", h_dev) + ", max lhs/rhs " + fmt("%.3g", worst_ratio)};
}

Verdict determinism() {
  std::string text = read_file(fs::path(SIFLOW_CONFIG_DIR) / "gaussian_1d.json");
  text = override_key(text, "train.steps", "200");
  text = override_key(text, "train.shards", "1");
  const std::string cfg = write_config(text, "determinism.json").string();
  const std::string a = read_file(cli({"train", "--config", cfg}, "det_a") / "loss.csv");
  const std::string b = read_file(cli({"train", "--config", cfg}, "det_b") / "loss.csv");
  return {!a.empty() && a == b, std::to_string(a.size()) + " bytes of loss.csv, " +
                                    (a == b ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i) strict = strict || std::strcmp(argv[i], "--strict") == 0;

  const std::vector<std::pair<std::string, std::function<Verdict()>>> checks{
      {"oracle self-consistency", continuity},
      {"objective floor", objective_floor},
      {"1D training convergence", training_1d},
      {"2D generative quality", training_2d},
      {"likelihood correctness", likelihood},
      {"score duality", score_duality},
      {"integrator order and inversion", integrator},
      {"gradient and divergence numerics", gradients},
      {"Wasserstein bound sanity", bound_sanity},
      {"determinism", determinism},
  };
  int passed = 0, errors = 0;
  std::ofstream report("acceptance_report.txt");
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Verdict v;
    try {
      v = checks[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
      ++errors;
    }
    passed += v.pass ? 1 : 0;
    std::ostringstream line;
    line << (v.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << checks[i].first
         << "): " << v.detail << '\n';
    std::cout << line.str() << std::flush;
    report << line.str() << std::flush;
  }
  std::cout << passed << "/" << checks.size() << " criteria passed" << std::endl;
  report << passed << "/" << checks.size() << " criteria passed\n";
  fs::remove_all(scratch_root());
  if (errors > 0) return 1;
  return strict && passed != static_cast<int>(checks.size()) ? 1 : 0;
}
