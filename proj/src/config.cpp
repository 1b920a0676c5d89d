#include "mpccbf/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mpccbf/errors.hpp"
#include "mpccbf/rng.hpp"

namespace mpccbf {
namespace {

using nlohmann::ordered_json;

// Reads keys from one JSON object and rejects the ones nobody asked for.
class Reader {
 public:
  Reader(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(where(key) + " has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader child(const char* key) {
    seen_.insert(key);
    static const ordered_json empty = ordered_json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ValidationError("unknown key '" + where(k) + "'");
  }

 private:
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const ordered_json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string policy_name(SequencingPolicy p) { return p == SequencingPolicy::Fifo ? "fifo" : "sdf"; }

void read(Reader r, AppConfig& c) {
  ScenarioConfig& s = c.scenario;
  MpcSettings& m = s.mpc;
  ControlBounds& b = m.vehicle.bounds;
  {
    Reader x = r.child("scenario");
    x.get("cz_length", s.geometry.cz_length);
    x.get("merge_angle", s.geometry.merge_angle);
    x.get("lane_width", s.geometry.lane_width);
    x.get("arrival_rate", s.arrival_rate);
    x.get("v0_min", s.v0_min);
    x.get("v0_max", s.v0_max);
    std::string policy = policy_name(s.policy);
    x.get("policy", policy);
    if (policy == "fifo")
      s.policy = SequencingPolicy::Fifo;
    else if (policy == "sdf")
      s.policy = SequencingPolicy::Sdf;
    else
      throw ValidationError("scenario.policy must be \"fifo\" or \"sdf\"");
    x.get("seed", s.seed);
    x.get("target_cavs", s.target_cavs);
    x.get("time_cap", s.time_cap);
    x.finish();
  }
  {
    Reader x = r.child("controller");
    x.get("horizon", m.horizon);
    x.get("dt", m.dt);
    x.get("v_des", m.v_des);
    x.get("varphi", m.varphi);
    x.get("delta", m.delta);
    x.get("boundary_radius", m.boundary_radius);
    x.get("state_constraints", m.state_constraints);
    x.get("ellipse_a", m.ellipse.a);
    x.get("ellipse_b", m.ellipse.b);
    x.get("ellipse_v_floor", m.ellipse.v_floor);
    x.get("l_f", m.vehicle.l_f);
    x.get("l_r", m.vehicle.l_r);
    x.get("u_min", b.u_min);
    x.get("u_max", b.u_max);
    x.get("phi_min", b.phi_min);
    x.get("phi_max", b.phi_max);
    x.get("v_min", b.v_min);
    x.get("v_max", b.v_max);
    x.finish();
  }
  {
    Reader x = r.child("solver");
    SqpOptions& o = m.sqp;
    x.get("max_iterations", o.max_iterations);
    x.get("kkt_tol", o.kkt_tol);
    x.get("feasibility_tol", o.feasibility_tol);
    x.get("equality_tol", o.equality_tol);
    x.get("armijo", o.armijo);
    x.get("rho_floor", o.rho_floor);
    x.get("max_backtracks", o.max_backtracks);
    x.get("damping_initial", o.damping_initial);
    x.get("max_damping_increases", o.max_damping_increases);
    x.get("elastic_proximal", o.elastic_proximal);
    x.finish();
  }
  {
    Reader x = r.child("fuel");
    FuelModelParams& f = s.fuel;
    x.get("w0", f.w0);
    x.get("w1", f.w1);
    x.get("w2", f.w2);
    x.get("w3", f.w3);
    x.get("r0", f.r0);
    x.get("r1", f.r1);
    x.get("r2", f.r2);
    x.finish();
  }
  {
    Reader x = r.child("sac");
    SacHyperparams& h = c.sac;
    x.get("lr_actor", h.lr_actor);
    x.get("lr_critic", h.lr_critic);
    x.get("gamma", h.gamma);
    x.get("tau", h.tau);
    x.get("batch_size", h.batch_size);
    x.get("replay_capacity", h.replay_capacity);
    x.get("alpha", h.alpha);
    x.get("auto_alpha", h.auto_alpha);
    x.get("target_entropy_per_dim", h.target_entropy_per_dim);
    x.get("total_steps", h.total_steps);
    x.get("hidden", h.hidden);
    x.get("warmup_steps", h.warmup_steps);
    x.get("reward_scale", h.reward_scale);
    x.get("log_std_min", h.log_std_min);
    x.get("log_std_max", h.log_std_max);
    x.get("episode_time_cap", c.episode_time_cap);
    x.finish();
  }
  {
    Reader x = r.child("reward");
    x.get("beta", c.reward.beta);
    x.get("infeasible_penalty", c.reward.infeasible_penalty);
    x.finish();
  }
  {
    Reader x = r.child("theta_bounds");
    x.get("lower", c.theta_bounds.lower);
    x.get("upper", c.theta_bounds.upper);
    x.finish();
  }
  {
    Reader x = r.child("presets");
    for (std::size_t i = 0; i < kPresetNames.size(); ++i) x.get(std::string(kPresetNames[i]).c_str(), c.preset_slopes[i]);
    x.finish();
  }
  r.finish();
  c.reward.v_des = m.v_des;
}

ordered_json to_json(const AppConfig& c) {
  const ScenarioConfig& s = c.scenario;
  const MpcSettings& m = s.mpc;
  const ControlBounds& b = m.vehicle.bounds;
  const SqpOptions& o = m.sqp;
  const FuelModelParams& f = s.fuel;
  const SacHyperparams& h = c.sac;
  ordered_json j;
  j["scenario"] = {{"cz_length", s.geometry.cz_length},
                   {"merge_angle", s.geometry.merge_angle},
                   {"lane_width", s.geometry.lane_width},
                   {"arrival_rate", s.arrival_rate},
                   {"v0_min", s.v0_min},
                   {"v0_max", s.v0_max},
                   {"policy", policy_name(s.policy)},
                   {"seed", s.seed},
                   {"target_cavs", s.target_cavs},
                   {"time_cap", s.time_cap}};
  j["controller"] = {{"horizon", m.horizon},
                     {"dt", m.dt},
                     {"v_des", m.v_des},
                     {"varphi", m.varphi},
                     {"delta", m.delta},
                     {"boundary_radius", m.boundary_radius},
                     {"state_constraints", m.state_constraints},
                     {"ellipse_a", m.ellipse.a},
                     {"ellipse_b", m.ellipse.b},
                     {"ellipse_v_floor", m.ellipse.v_floor},
                     {"l_f", m.vehicle.l_f},
                     {"l_r", m.vehicle.l_r},
                     {"u_min", b.u_min},
                     {"u_max", b.u_max},
                     {"phi_min", b.phi_min},
                     {"phi_max", b.phi_max},
                     {"v_min", b.v_min},
                     {"v_max", b.v_max}};
  j["solver"] = {{"max_iterations", o.max_iterations},
                 {"kkt_tol", o.kkt_tol},
                 {"feasibility_tol", o.feasibility_tol},
                 {"equality_tol", o.equality_tol},
                 {"armijo", o.armijo},
                 {"rho_floor", o.rho_floor},
                 {"max_backtracks", o.max_backtracks},
                 {"damping_initial", o.damping_initial},
                 {"max_damping_increases", o.max_damping_increases},
                 {"elastic_proximal", o.elastic_proximal}};
  j["fuel"] = {{"w0", f.w0}, {"w1", f.w1}, {"w2", f.w2}, {"w3", f.w3}, {"r0", f.r0}, {"r1", f.r1}, {"r2", f.r2}};
  j["sac"] = {{"lr_actor", h.lr_actor},
              {"lr_critic", h.lr_critic},
              {"gamma", h.gamma},
              {"tau", h.tau},
              {"batch_size", h.batch_size},
              {"replay_capacity", h.replay_capacity},
              {"alpha", h.alpha},
              {"auto_alpha", h.auto_alpha},
              {"target_entropy_per_dim", h.target_entropy_per_dim},
              {"total_steps", h.total_steps},
              {"hidden", h.hidden},
              {"warmup_steps", h.warmup_steps},
              {"reward_scale", h.reward_scale},
              {"log_std_min", h.log_std_min},
              {"log_std_max", h.log_std_max},
              {"episode_time_cap", c.episode_time_cap}};
  j["reward"] = {{"beta", c.reward.beta}, {"infeasible_penalty", c.reward.infeasible_penalty}};
  j["theta_bounds"] = {{"lower", c.theta_bounds.lower}, {"upper", c.theta_bounds.upper}};
  ordered_json presets;
  for (std::size_t i = 0; i < kPresetNames.size(); ++i) presets[std::string(kPresetNames[i])] = c.preset_slopes[i];
  j["presets"] = presets;
  return j;
}

// Byte offset to 1-based line and column.
std::pair<int, int> line_column(const std::string& text, std::size_t offset) {
  int line = 1;
  int col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

void AppConfig::validate() const {
  scenario.validate();
  sac.validate();
  reward.validate();
  theta_bounds.validate();
  for (double s : preset_slopes)
    if (!(s > 0.0 && std::isfinite(s))) throw ValidationError("preset slopes must be positive");
  if (!(episode_time_cap > 0.0)) throw ValidationError("sac.episode_time_cap must be positive");
}

TrainingSetup AppConfig::training_setup() const {
  TrainingSetup t;
  t.scenario = scenario;
  t.sac = sac;
  t.reward = reward;
  t.bounds = theta_bounds;
  t.episode_time_cap = episode_time_cap;
  return t;
}

ControllerTheta AppConfig::preset(std::string_view name) const {
  for (std::size_t i = 0; i < kPresetNames.size(); ++i)
    if (kPresetNames[i] == name) return preset_theta(preset_slopes[i]);
  throw ValidationError("unknown preset '" + std::string(name) + "'");
}

AppConfig parse_config(const std::string& text) {
  AppConfig cfg;
  const bool blank = text.find_first_not_of(" \t\r\n") == std::string::npos;
  if (!blank) {
    ordered_json j;
    try {
      j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      // nlohmann reports the offset just past the offending byte.
      const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
      const auto [line, col] = line_column(text, at);
      throw ParseError("config is not valid JSON", line, col);
    }
    read(Reader(j, ""), cfg);
  } else {
    cfg.reward.v_des = cfg.scenario.mpc.v_des;
  }
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_string(const AppConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void save_config(const std::string& path, const AppConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write config file " + path);
  out << config_to_string(cfg);
}

std::string config_hash(const AppConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_string(cfg))));
  return buf;
}

}  // namespace mpccbf
