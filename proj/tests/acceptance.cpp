// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "mpccbf/checkpoint.hpp"
#include "mpccbf/cli.hpp"
#include "mpccbf/config.hpp"
#include "mpccbf/merge_sim.hpp"
#include "mpccbf/nn.hpp"
#include "mpccbf/sac.hpp"
#include "mpccbf/training.hpp"
#include "oracles.hpp"

using namespace mpccbf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Options {
  std::string checkpoint;
  std::string save_checkpoint;
  long train_steps = 50000;
  std::uint64_t train_seed = 7;
  int eval_cavs = 15;
  std::string work_dir = (fs::temp_directory_path() / "mpccbf_acceptance").string();
};

Outcome forward_invariance() {
  const auto t0 = std::chrono::steady_clock::now();
  double min_b = 1e300;
  std::size_t audited = 0;
  int violations = 0;
  for (int k = 0; k < 10; ++k) {
    ScenarioConfig cfg;
    cfg.seed = 100 + k;
    cfg.target_cavs = 10 + k;
    const double slope = std::array<double, 4>{0.178, 0.562, 1.78, 5.62}[k % 4];
    const EpisodeResult r = run_episode(cfg, fixed_theta(preset_theta(slope)));
    for (const AuditEntry& e : r.log.audit) {
      min_b = std::min(min_b, e.value);
      if (e.value < World::kAuditTolerance) ++violations;
    }
    audited += r.log.audit.size();
  }
  const double t = seconds_since(t0);
  return {violations == 0 && audited > 0 && t < 600.0,
          fmt("%zu audited barrier values over 10 episodes, min %.3e, %d below -1e-6, %.0f s", audited, min_b,
              violations, t)};
}

Outcome lie_derivatives_fd() {
  const VehicleParams params;
  std::mt19937_64 g(2718);
  int states = 0, bad = 0;
  double worst = 0.0;
  auto track = [&](double a, double ref) {
    const double err = std::abs(a - ref);
    if (!oracle::close(a, ref)) ++bad;
    if (err > 1e-8) worst = std::max(worst, err / std::max(std::abs(ref), 1e-300));
  };
  for (BarrierKind kind : oracle::kAllKinds) {
    for (int i = 0; i < 200; ++i) {
      const oracle::LieCase c = oracle::random_case(kind, g);
      const LieDerivatives ld = lie_derivatives(c.spec, c.ego, c.other, params);
      const oracle::LieFd fd = oracle::lie_fd(c.spec, c.ego, c.other, params);
      track(ld.lf_b, fd.lf_b);
      track(ld.lg_b[0], fd.lg_b[0]);
      track(ld.lg_b[1], fd.lg_b[1]);
      if (ld.order == 2) {
        track(ld.lf2_b, fd.lf2_b);
        track(ld.lglf_b[0], fd.lglf_b[0]);
        track(ld.lglf_b[1], fd.lglf_b[1]);
      }
      ++states;
    }
  }
  return {bad == 0 && states >= 1000,
          fmt("%d states over 6 kinds, worst relative error %.2e (above the 1e-8 floor), %d failures", states,
              worst, bad)};
}

Outcome solver_oracles() {
  std::mt19937_64 g(1618);
  int compared = 0, bad = 0, drawn = 0, thin = 0;
  double worst_gap = 0.0, worst_cells = 0.0;
  while (compared < 100) {
    ++drawn;
    const oracle::MpcCase c = oracle::random_mpc_case(g);
    const oracle::GridComparison r = oracle::compare_with_grid(c);
    if (!r.grid_feasible) continue;
    if (!r.grid_resolved) {
      ++thin;
      continue;
    }
    ++compared;
    if (!r.ok()) ++bad;
    worst_gap = std::max(worst_gap, std::abs(r.objective_gap));
    worst_cells = std::max({worst_cells, r.u_cells, r.phi_cells});
  }
  std::mt19937_64 q(1414);
  std::uniform_int_distribution<int> nd(1, 20);
  int qp_bad = 0;
  double worst_kkt = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = nd(q);
    const int m = std::uniform_int_distribution<int>(0, 40)(q);
    const int me = trial % 3 == 0 ? std::uniform_int_distribution<int>(0, n / 2)(q) : 0;
    const QpProblem p = oracle::random_qp(q, n, m, me);
    const QpSolution s = solve_qp(p);
    const double k = s.status == QpStatus::Optimal ? oracle::kkt_residual(p, s) : 1e300;
    worst_kkt = std::max(worst_kkt, k);
    if (!(k < 1e-8)) ++qp_bad;
  }
  return {bad == 0 && qp_bad == 0,
          fmt("%d grid instances (%d drawn, %d skipped as thinner than the grid): worst |objective gap| %.2e, worst offset %.2f cells, %d failures; "
              "100 QPs: worst KKT residual %.2e, %d failures",
              compared, drawn, thin, worst_gap, worst_cells, bad, worst_kkt, qp_bad)};
}

Outcome integrator() {
  const VehicleParams p;
  std::mt19937_64 g(99);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const VehicleState s0{uniform(g, -50, 50), uniform(g, -10, 10), uniform(g, -3, 3), uniform(g, 0, 20)};
    const double u = uniform(g, -1, 1);
    VehicleState s = s0;
    for (int k = 1; k <= 100; ++k) {
      s = step_rk4(s, {u, 0.0}, p, 0.2);
      const double t = 0.2 * k;
      const double d = s0.v * t + 0.5 * u * t * t;
      worst = std::max({worst, std::abs(s.x - s0.x - d * std::cos(s0.psi)), std::abs(s.y - s0.y - d * std::sin(s0.psi)),
                        std::abs(s.psi - s0.psi), std::abs(s.v - s0.v - u * t)});
    }
  }
  return {worst <= 1e-9, fmt("20 trajectories x 100 steps, worst deviation %.2e", worst)};
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

Outcome sac_machinery() {
  std::mt19937_64 g(4);
  auto randm = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = standard_normal(g);
    return m;
  };
  double worst = 0.0;
  const double h = 1e-6;
  // Critic-shaped network.
  {
    Mlp net({30, 16, 16, 1});
    net.initialize(g);
    const Eigen::MatrixXd x = randm(30, 8), w = randm(1, 8);
    Mlp::Cache cache;
    net.forward(x, &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<int>(net.parameter_count()));
    net.backward(cache, w, &grad);
    const Eigen::VectorXd p0 = net.parameters();
    for (int i = 0; i < p0.size(); i += 7) {
      Eigen::VectorXd pa = p0, pb = p0;
      pa[i] += h;
      pb[i] -= h;
      Mlp a = net, b = net;
      a.set_parameters(pa);
      b.set_parameters(pb);
      const double fd = ((a.forward(x) - b.forward(x)).array() * w.array()).sum() / (2 * h);
      worst = std::max(worst, rel_err(grad[i], fd));
    }
  }
  // Actor objective through the squashed Gaussian and both critics.
  {
    SacHyperparams hp = SacHyperparams::desk_scale();
    hp.hidden = {16, 16};
    SacAgent agent(kObservationSize, ControllerTheta::kSize, hp, 3);
    const Eigen::MatrixXd obs = randm(kObservationSize, 6), noise = randm(ControllerTheta::kSize, 6);
    Eigen::VectorXd grad;
    agent.actor_objective(obs, noise, &grad);
    const Eigen::VectorXd p0 = agent.policy.net.parameters();
    for (int i = 0; i < p0.size(); i += 5) {
      Eigen::VectorXd pa = p0, pb = p0;
      pa[i] += h;
      pb[i] -= h;
      agent.policy.net.set_parameters(pa);
      const double fa = agent.actor_objective(obs, noise, nullptr);
      agent.policy.net.set_parameters(pb);
      const double fb = agent.actor_objective(obs, noise, nullptr);
      worst = std::max(worst, rel_err(grad[i], (fa - fb) / (2 * h)));
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  SacHyperparams toy = SacHyperparams::desk_scale();
  toy.warmup_steps = 256;
  toy.batch_size = 64;
  toy.hidden = {32, 32};
  const long steps = 10000;
  const double mean = train_toy(toy, steps, 1);
  const double t = seconds_since(t0);
  return {worst < 1e-4 && std::abs(mean - 0.5) <= 0.1 && t < 300.0,
          fmt("worst gradient relative error %.2e; toy policy mean %.4f after %ld steps in %.0f s", worst, mean, steps,
              t)};
}

struct Tally {
  int infeasible = 0;
  double travel_time = 0.0;
};

Tally evaluate(const ThetaSource& theta, int cavs) {
  Tally t;
  for (int seed = 1; seed <= 10; ++seed) {
    ScenarioConfig cfg;
    cfg.target_cavs = cavs;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const EpisodeResult r = run_episode(cfg, theta);
    t.infeasible += r.metrics.total_infeasible_count;
    t.travel_time += r.metrics.avg_travel_time / 10.0;
  }
  return t;
}

Outcome table_reproduction(const Options& o) {
  const AppConfig app = parse_config("");
  PolicyCheckpoint ck;
  std::string how;
  double train_s = 0.0;
  std::string curve_note;
  if (!o.checkpoint.empty()) {
    ck = load_checkpoint(o.checkpoint);
    how = "loaded " + o.checkpoint;
  } else {
    TrainingSetup setup = app.training_setup();
    setup.sac = SacHyperparams::desk_scale();
    setup.sac.total_steps = o.train_steps;
    setup.sac.reward_scale = 0.1;
    setup.sac.alpha = 0.05;
    setup.scenario.target_cavs = o.eval_cavs;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res = train_policy(setup, o.train_seed);
    train_s = seconds_since(t0);
    ck.policy = res.policy;
    ck.ranges = res.ranges;
    ck.bounds = setup.bounds;
    ck.config_hash = config_hash(app);
    if (!o.save_checkpoint.empty()) {
      const fs::path parent = fs::path(o.save_checkpoint).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
      save_checkpoint(o.save_checkpoint, ck);
    }
    how = fmt("trained %ld steps (2x64) in %.0f s", o.train_steps, train_s);
    if (res.curve.size() >= 20) {
      double first = 0.0, last = 0.0;
      for (int i = 0; i < 10; ++i) {
        first += res.curve[i].reward / 10.0;
        last += res.curve[res.curve.size() - 1 - i].reward / 10.0;
      }
      curve_note = fmt("; episode reward %.1f (first 10) -> %.1f (last 10)", first, last);
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  int best = 1 << 30;
  double best_tt = 1e300;
  std::string presets;
  for (std::size_t i = 0; i < kPresetNames.size(); ++i) {
    const Tally t = evaluate(fixed_theta(preset_theta(app.preset_slopes[i])), o.eval_cavs);
    presets += fmt("%s%d/%.2f", i ? ", " : "", t.infeasible, t.travel_time);
    best = std::min(best, t.infeasible);
    best_tt = std::min(best_tt, t.travel_time);
  }
  const auto policy = std::make_shared<const GaussianPolicy>(ck.policy);
  const Tally learned = evaluate(policy_theta(policy, ck.ranges, ck.bounds), o.eval_cavs);
  const double eval_s = seconds_since(t1);
  // Thresholds come from the best preset on each metric separately.
  const bool fewer = learned.infeasible < best;
  const bool reduction = learned.infeasible <= 0.7 * best;
  const bool time_ok = learned.travel_time <= 1.02 * best_tt;
  const bool budget = train_s <= 7200.0 && eval_s <= 900.0;
  return {fewer && reduction && time_ok && budget,
          fmt("%s; presets infeasible/travel time: %s; learned %d/%.2f (%.0f%% fewer than best %d, travel time "
              "%+.1f%% vs best %.2f); eval %.0f s%s",
              how.c_str(), presets.c_str(), learned.infeasible, learned.travel_time,
              100.0 * (1.0 - learned.infeasible / std::max(1.0, 1.0 * best)), best,
              100.0 * (learned.travel_time / best_tt - 1.0), best_tt, eval_s, curve_note.c_str())};
}

Outcome metric_arithmetic() {
  const oracle::ScriptedLog s = oracle::scripted_log();
  const MetricsReport r = compute_metrics(s.log);
  const double e = std::max({std::abs(r.avg_travel_time - s.avg_tt), std::abs(r.avg_half_u_sq - s.avg_half_u_sq),
                             std::abs(r.avg_fuel - s.avg_fuel)});
  return {e <= 1e-9 && r.total_infeasible_count == s.infeasible,
          fmt("worst deviation from hand values %.2e, infeasible %d (expected %d)", e, r.total_infeasible_count,
              s.infeasible)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const Options& o) {
  const fs::path root = fs::path(o.work_dir) / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "small.json") << R"({"sac": {"hidden": [8, 8], "warmup_steps": 30, "batch_size": 16}})";
  const std::string cfg = (root / "small.json").string();
  const std::string ck = "checkpoint:" + (root / "a_train" / "checkpoint.json").string();
  struct Cmd {
    std::string name;
    std::vector<std::string> args;
  };
  const std::vector<Cmd> cmds{
      {"train", {"train", "--config", cfg, "--steps", "120", "--cavs", "3"}},
      {"simulate", {"simulate", "--config", cfg, "--cavs", "4", "--seed", "3", "--theta", "baseline:aggressive"}},
      {"evaluate", {"evaluate", "--config", cfg, "--cavs", "3", "--seeds", "2", "--theta", ck}},
      {"sweep", {"sweep", "--config", cfg, "--cavs", "2", "--seeds", "2", "--theta", ck}},
      {"export-table", {"export-table", (root / "a_sweep" / "table.json").string()}},
  };
  int compared = 0;
  std::string mismatched;
  for (const Cmd& c : cmds) {
    for (const char* run : {"a_", "b_"}) {
      std::vector<std::string> args = c.args;
      // Both runs read the checkpoint and table written by the first one.
      args.push_back("--out");
      args.push_back((root / (run + c.name)).string());
      std::ostringstream out, err;
      if (run_command(args, out, err) != kExitOk) return {false, c.name + " failed: " + err.str()};
    }
    for (const auto& f : fs::directory_iterator(root / ("a_" + c.name))) {
      if (f.path().extension() != ".csv") continue;
      ++compared;
      if (slurp(f.path()) != slurp(root / ("b_" + c.name) / f.path().filename())) mismatched += " " + f.path().string();
    }
  }
  return {compared > 0 && mismatched.empty(),
          fmt("%d CSV files from 5 commands compared byte for byte%s", compared,
              mismatched.empty() ? "" : (", mismatched:" + mismatched).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  Options o;
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-8)");
  app.add_option("--checkpoint", o.checkpoint, "Evaluate this checkpoint instead of training for criterion 6");
  app.add_option("--save-checkpoint", o.save_checkpoint, "Write the trained checkpoint here");
  app.add_option("--train-steps", o.train_steps, "Training steps for criterion 6")->check(CLI::Range(50000L, 10000000L));
  app.add_option("--train-seed", o.train_seed, "Training seed for criterion 6");
  app.add_option("--eval-cavs", o.eval_cavs, "CAVs per evaluation episode for criterion 6");
  app.add_option("--work-dir", o.work_dir, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"forward invariance", forward_invariance},
      {"lie derivatives vs finite differences", lie_derivatives_fd},
      {"solver oracles", solver_oracles},
      {"rk4 straight line", integrator},
      {"sac machinery", sac_machinery},
      {"comparison table direction", [&] { return table_reproduction(o); }},
      {"metric arithmetic", metric_arithmetic},
      {"determinism", [&] { return determinism(o); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    if (!r.pass) ++failed;
    std::printf("[%s] %d %s: %s\n", r.pass ? "PASS" : "FAIL", id, criteria[i].first, r.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
