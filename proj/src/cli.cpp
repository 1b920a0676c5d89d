#include "mpccbf/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpccbf/checkpoint.hpp"
#include "mpccbf/errors.hpp"

namespace mpccbf {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr std::array<const char*, 5> kTableColumns{"Conservative", "Moderately conservative",
                                                  "Moderately aggressive", "Aggressive", "MPC-CBF w/ RL"};
constexpr std::array<const char*, 4> kTableRows{"Ave. travel time", "Ave. half u^2", "Ave. fuel consumption",
                                                "Total infeasibility"};

struct Options {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int seeds = 10;
  std::string theta = "baseline:moderately_conservative";
  std::string out_dir = "out";
  int cavs = -1;
  double time_cap = -1.0;
  long steps = -1;
  std::string table_path;
};

AppConfig effective_config(const Options& o) {
  AppConfig cfg = o.config_path.empty() ? parse_config("") : load_config(o.config_path);
  if (o.seed_set) cfg.scenario.seed = o.seed;
  if (o.cavs >= 0) cfg.scenario.target_cavs = o.cavs;
  if (o.time_cap > 0.0) cfg.scenario.time_cap = o.time_cap;
  if (o.steps >= 0) cfg.sac.total_steps = o.steps;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const AppConfig& cfg, const std::vector<std::string>& outputs) {
  fs::create_directories(dir);
  ordered_json j;
  j["command"] = command;
  j["args"] = args;
  j["artifact_version"] = kArtifactVersion;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.scenario.seed;
  j["config"] = "config.json";
  j["outputs"] = outputs;
  open_out(dir / "manifest.json") << j.dump(2) << '\n';
  save_config((dir / "config.json").string(), cfg);
}

void write_metrics_csv_header(std::ostream& out) {
  out << "seed,avg_travel_time,avg_half_u_sq,avg_fuel,total_infeasible_count,completed,incomplete\n";
}

void write_metrics_csv_row(std::ostream& out, std::uint64_t seed, const MetricsReport& m) {
  out << seed << ',' << std::setprecision(10) << m.avg_travel_time << ',' << m.avg_half_u_sq << ','
      << m.avg_fuel << ',' << m.total_infeasible_count << ',' << m.completed << ','
      << m.incomplete_cavs.size() << '\n';
}

std::vector<MetricsReport> run_seeds(const AppConfig& cfg, const ThetaSource& theta, int seeds, std::ostream& csv) {
  std::vector<MetricsReport> runs;
  write_metrics_csv_header(csv);
  for (int k = 0; k < seeds; ++k) {
    ScenarioConfig sc = cfg.scenario;
    sc.seed = cfg.scenario.seed + static_cast<std::uint64_t>(k);
    runs.push_back(run_episode(sc, theta).metrics);
    write_metrics_csv_row(csv, sc.seed, runs.back());
  }
  return runs;
}

ordered_json summary_json(const MetricSummary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

int cmd_simulate(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const ThetaSpec spec = ThetaSpec::parse(o.theta);
  const AppConfig cfg = effective_config(o);
  const fs::path dir = o.out_dir;
  write_manifest(dir, "simulate", args, cfg, {"rollout.csv", "metrics.json"});
  const EpisodeResult res = run_episode(cfg.scenario, make_theta_source(spec, cfg, err));
  auto csv = open_out(dir / "rollout.csv");
  write_rollout_csv(res.log, csv);
  open_out(dir / "metrics.json") << metrics_to_json(res.metrics) << '\n';
  out << "simulate: " << res.metrics.completed << " CAVs completed, " << res.metrics.total_infeasible_count
      << " infeasible steps\n";
  return kExitOk;
}

int cmd_evaluate(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const ThetaSpec spec = ThetaSpec::parse(o.theta);
  if (o.seeds < 1) throw UsageError("--seeds must be >= 1");
  const AppConfig cfg = effective_config(o);
  const fs::path dir = o.out_dir;
  write_manifest(dir, "evaluate", args, cfg, {"metrics.csv", "aggregate.json"});
  const ThetaSource theta = make_theta_source(spec, cfg, err);
  auto csv = open_out(dir / "metrics.csv");
  const std::vector<MetricsReport> runs = run_seeds(cfg, theta, o.seeds, csv);
  const TableColumn col = summarize(spec.label(), runs);
  ordered_json j;
  j["theta"] = spec.label();
  j["seeds"] = o.seeds;
  j["Ave. travel time"] = summary_json(col.travel_time);
  j["Ave. half u^2"] = summary_json(col.half_u_sq);
  j["Ave. fuel consumption"] = summary_json(col.fuel);
  j["Total infeasibility"] = col.total_infeasible;
  open_out(dir / "aggregate.json") << j.dump(2) << '\n';
  out << "evaluate " << spec.label() << ": travel time " << col.travel_time.mean << ", infeasible "
      << col.total_infeasible << '\n';
  return kExitOk;
}

int cmd_sweep(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const ThetaSpec spec = ThetaSpec::parse(o.theta);
  if (!spec.is_checkpoint) throw UsageError("sweep needs --theta checkpoint:<path> for the learned column");
  if (o.seeds < 1) throw UsageError("--seeds must be >= 1");
  const AppConfig cfg = effective_config(o);
  const fs::path dir = o.out_dir;
  std::vector<std::string> outputs;
  for (std::string_view p : kPresetNames) outputs.push_back("metrics_" + std::string(p) + ".csv");
  outputs.push_back("metrics_learned.csv");
  outputs.push_back("table.json");
  outputs.push_back("table.csv");
  write_manifest(dir, "sweep", args, cfg, outputs);

  std::vector<TableColumn> cols;
  for (std::size_t i = 0; i < kPresetNames.size(); ++i) {
    auto csv = open_out(dir / outputs[i]);
    const auto runs = run_seeds(cfg, fixed_theta(cfg.preset(kPresetNames[i])), o.seeds, csv);
    cols.push_back(summarize(kTableColumns[i], runs));
  }
  {
    auto csv = open_out(dir / "metrics_learned.csv");
    const auto runs = run_seeds(cfg, make_theta_source(spec, cfg, err), o.seeds, csv);
    cols.push_back(summarize(kTableColumns[4], runs));
  }
  open_out(dir / "table.json") << table_to_json(cols) << '\n';
  auto csv = open_out(dir / "table.csv");
  write_table_csv(cols, csv);
  write_table_text(cols, out);
  return kExitOk;
}

int cmd_train(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream&) {
  const AppConfig cfg = effective_config(o);
  const fs::path dir = o.out_dir;
  write_manifest(dir, "train", args, cfg, {"learning_curve.csv", "checkpoint.json"});
  auto curve = open_out(dir / "learning_curve.csv");
  curve << "step,episode,reward,critic_loss,actor_loss,infeasible_count\n" << std::setprecision(10);
  const TrainResult res = train_policy(cfg.training_setup(), cfg.scenario.seed, [&](const LearningCurveRow& r) {
    curve << r.step << ',' << r.episode << ',' << r.reward << ',' << r.critic_loss << ',' << r.actor_loss << ','
          << r.infeasible_count << '\n';
    curve.flush();
  });
  PolicyCheckpoint ck;
  ck.policy = res.policy;
  ck.ranges = res.ranges;
  ck.bounds = cfg.theta_bounds;
  ck.config_hash = config_hash(cfg);
  save_checkpoint((dir / "checkpoint.json").string(), ck);
  out << "train: " << res.curve.size() << " episodes, checkpoint " << (dir / "checkpoint.json").string() << '\n';
  return kExitOk;
}

int cmd_export(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream&) {
  std::ifstream in(o.table_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + o.table_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto cols = table_from_json(ss.str());
  const AppConfig cfg = effective_config(o);
  const fs::path dir = o.out_dir;
  write_manifest(dir, "export-table", args, cfg, {"table.txt", "table.csv"});
  auto txt = open_out(dir / "table.txt");
  write_table_text(cols, txt);
  auto csv = open_out(dir / "table.csv");
  write_table_csv(cols, csv);
  write_table_text(cols, out);
  return kExitOk;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string cell(const TableColumn& c, int row) {
  auto pm = [](const MetricSummary& m) { return fixed(m.mean, 2) + " +/- " + fixed(m.std, 2); };
  switch (row) {
    case 0: return pm(c.travel_time);
    case 1: return pm(c.half_u_sq);
    case 2: return pm(c.fuel);
    default: return std::to_string(c.total_infeasible);
  }
}

}  // namespace

ThetaSpec ThetaSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("--theta must be baseline:<preset> or checkpoint:<path>");
  const std::string kind = text.substr(0, colon);
  ThetaSpec s;
  s.value = text.substr(colon + 1);
  if (kind == "checkpoint") {
    s.is_checkpoint = true;
  } else if (kind == "baseline") {
    bool known = false;
    for (std::string_view p : kPresetNames) known = known || p == s.value;
    if (!known) throw UsageError("unknown baseline preset '" + s.value + "'");
  } else {
    throw UsageError("--theta kind must be baseline or checkpoint, got '" + kind + "'");
  }
  if (s.value.empty()) throw UsageError("--theta value is empty");
  return s;
}

std::string ThetaSpec::label() const { return (is_checkpoint ? "checkpoint:" : "baseline:") + value; }

ThetaSource make_theta_source(const ThetaSpec& spec, const AppConfig& cfg, std::ostream& err) {
  if (!spec.is_checkpoint) return fixed_theta(cfg.preset(spec.value));
  PolicyCheckpoint ck = load_checkpoint(spec.value);
  if (ck.config_hash != config_hash(cfg))
    err << "note: checkpoint was trained under config " << ck.config_hash << '\n';
  return policy_theta(std::make_shared<const GaussianPolicy>(std::move(ck.policy)), ck.ranges, ck.bounds);
}

TableColumn summarize(const std::string& name, const std::vector<MetricsReport>& runs) {
  TableColumn c;
  c.name = name;
  auto stat = [&](auto field) {
    MetricSummary s;
    if (runs.empty()) return s;
    for (const auto& r : runs) s.mean += field(r);
    s.mean /= static_cast<double>(runs.size());
    if (runs.size() > 1) {
      double ss = 0.0;
      for (const auto& r : runs) ss += (field(r) - s.mean) * (field(r) - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(runs.size() - 1));
    }
    return s;
  };
  c.travel_time = stat([](const MetricsReport& r) { return r.avg_travel_time; });
  c.half_u_sq = stat([](const MetricsReport& r) { return r.avg_half_u_sq; });
  c.fuel = stat([](const MetricsReport& r) { return r.avg_fuel; });
  for (const auto& r : runs) c.total_infeasible += r.total_infeasible_count;
  return c;
}

std::string table_to_json(const std::vector<TableColumn>& cols) {
  ordered_json j;
  j["columns"] = ordered_json::array();
  for (const auto& c : cols)
    j["columns"].push_back({{"name", c.name},
                            {kTableRows[0], summary_json(c.travel_time)},
                            {kTableRows[1], summary_json(c.half_u_sq)},
                            {kTableRows[2], summary_json(c.fuel)},
                            {kTableRows[3], c.total_infeasible}});
  return j.dump(2);
}

std::vector<TableColumn> table_from_json(const std::string& text) {
  std::vector<TableColumn> cols;
  try {
    const ordered_json j = ordered_json::parse(text);
    auto summary = [](const ordered_json& s) {
      return MetricSummary{s.at("mean").get<double>(), s.at("std").get<double>()};
    };
    for (const auto& c : j.at("columns")) {
      TableColumn t;
      t.name = c.at("name").get<std::string>();
      t.travel_time = summary(c.at(kTableRows[0]));
      t.half_u_sq = summary(c.at(kTableRows[1]));
      t.fuel = summary(c.at(kTableRows[2]));
      t.total_infeasible = c.at(kTableRows[3]).get<int>();
      cols.push_back(t);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("table file is malformed: ") + e.what());
  }
  return cols;
}

void write_table_csv(const std::vector<TableColumn>& cols, std::ostream& out) {
  out << "Item";
  for (const auto& c : cols) out << ',' << c.name;
  out << '\n';
  for (int r = 0; r < 4; ++r) {
    out << kTableRows[r];
    for (const auto& c : cols) out << ',' << cell(c, r);
    out << '\n';
  }
}

void write_table_text(const std::vector<TableColumn>& cols, std::ostream& out) {
  std::size_t first = 4;
  for (const char* r : kTableRows) first = std::max(first, std::string(r).size());
  std::vector<std::size_t> width;
  for (const auto& c : cols) {
    std::size_t w = c.name.size();
    for (int r = 0; r < 4; ++r) w = std::max(w, cell(c, r).size());
    width.push_back(w);
  }
  out << std::left << std::setw(static_cast<int>(first)) << "Item";
  for (std::size_t i = 0; i < cols.size(); ++i) out << "  " << std::setw(static_cast<int>(width[i])) << cols[i].name;
  out << '\n';
  for (int r = 0; r < 4; ++r) {
    out << std::setw(static_cast<int>(first)) << kTableRows[r];
    for (std::size_t i = 0; i < cols.size(); ++i) out << "  " << std::setw(static_cast<int>(width[i])) << cell(cols[i], r);
    out << '\n';
  }
  out << std::right;
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MPC-CBF merging simulator with learned controller parameters", "mpccbf"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s; o.seed_set = true; }, "Base seed");
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--cavs", o.cavs, "CAVs per episode")->check(CLI::NonNegativeNumber);
    sub->add_option("--time-cap", o.time_cap, "Episode time cap [s]")->check(CLI::PositiveNumber);
  };
  CLI::App* sim = app.add_subcommand("simulate", "Run one episode");
  common(sim);
  sim->add_option("--theta", o.theta, "baseline:<preset> or checkpoint:<path>");
  CLI::App* train = app.add_subcommand("train", "Train the parameter policy");
  common(train);
  train->add_option("--steps", o.steps, "Override sac.total_steps")->check(CLI::NonNegativeNumber);
  CLI::App* eval = app.add_subcommand("evaluate", "Run seeded episodes for one theta source");
  common(eval);
  eval->add_option("--theta", o.theta, "baseline:<preset> or checkpoint:<path>");
  eval->add_option("--seeds", o.seeds, "Number of seeds");
  CLI::App* sweep = app.add_subcommand("sweep", "Compare the four presets with a checkpoint");
  common(sweep);
  sweep->add_option("--theta", o.theta, "checkpoint:<path>")->required();
  sweep->add_option("--seeds", o.seeds, "Number of seeds");
  CLI::App* exp = app.add_subcommand("export-table", "Render a sweep table as text and CSV");
  common(exp);
  exp->add_option("table", o.table_path, "table.json written by sweep")->required()->check(CLI::ExistingFile);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(o, args, out, err);
    if (train->parsed()) return cmd_train(o, args, out, err);
    if (eval->parsed()) return cmd_evaluate(o, args, out, err);
    if (sweep->parsed()) return cmd_sweep(o, args, out, err);
    if (exp->parsed()) return cmd_export(o, args, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "config parse error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const ValidationError& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace mpccbf
