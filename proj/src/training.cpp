#include "mpccbf/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "mpccbf/errors.hpp"
#include "mpccbf/rng.hpp"

namespace mpccbf {
namespace {

void push_state(Eigen::VectorXd& obs, int at, const VehicleState& s, const ObsRanges& r) {
  obs[at] = normalize(s.x, r.x_min, r.x_max);
  obs[at + 1] = normalize(s.y, r.y_min, r.y_max);
  obs[at + 2] = normalize(s.psi, r.psi_min, r.psi_max);
  obs[at + 3] = normalize(s.v, r.v_min, r.v_max);
}

}  // namespace

ObsRanges ObsRanges::for_scenario(const ScenarioConfig& cfg) {
  const double L = cfg.geometry.cz_length;
  const double margin = 2.5 * cfg.geometry.lane_width;
  const ControlBounds& b = cfg.mpc.vehicle.bounds;
  ObsRanges r;
  r.x_min = -L - margin;
  r.x_max = margin;
  r.y_min = -L * std::sin(cfg.geometry.merge_angle) - margin;
  r.y_max = margin;
  r.v_min = b.v_min;
  r.v_max = b.v_max;
  r.u_min = b.u_min;
  r.u_max = b.u_max;
  r.phi_min = b.phi_min;
  r.phi_max = b.phi_max;
  return r;
}

void ObsRanges::validate() const {
  if (!(x_min < x_max && y_min < y_max && psi_min < psi_max && v_min < v_max && u_min < u_max &&
        phi_min < phi_max))
    throw ValidationError("observation ranges must satisfy min < max");
}

double normalize(double value, double lo, double hi) {
  return std::clamp(2.0 * (value - lo) / (hi - lo) - 1.0, -1.0, 1.0);
}

Eigen::VectorXd build_observation(const VehicleState& ego, const ControlInput& prev,
                                  const std::optional<VehicleState>& preceding,
                                  const std::optional<VehicleState>& merging,
                                  const VehicleState& virtual_preceding,
                                  const VehicleState& virtual_merging, const ObsRanges& ranges) {
  Eigen::VectorXd obs(kObservationSize);
  push_state(obs, 0, ego, ranges);
  obs[4] = normalize(prev.u, ranges.u_min, ranges.u_max);
  obs[5] = normalize(prev.phi, ranges.phi_min, ranges.phi_max);
  push_state(obs, 6, preceding.value_or(virtual_preceding), ranges);
  push_state(obs, 10, merging.value_or(virtual_merging), ranges);
  return obs;
}

VehicleState virtual_vehicle(const StraightRoute& route, double v_des) {
  const Eigen::Vector2d p = route.exit();
  return {p[0], p[1], route.heading, v_des};
}

Eigen::VectorXd observe(const AgentContext& ctx, const ObsRanges& ranges) {
  if (!ctx.config) throw ValidationError("agent context carries no scenario");
  const LaneContext lane = ctx.config->lane(ctx.origin);
  const double v_des = ctx.config->mpc.v_des;
  return build_observation(ctx.ego, ctx.prev_input, ctx.preceding, ctx.merging,
                           virtual_vehicle(lane.route, v_des), virtual_vehicle(lane.other, v_des), ranges);
}

ThetaBounds ThetaBounds::defaults() {
  ThetaBounds b;
  for (int i = 0; i < ControllerTheta::kSize; ++i) {
    const double neutral = i >= 14 ? 10.0 : 1.0;
    b.lower[i] = neutral / 4.0;
    b.upper[i] = neutral * 4.0;
  }
  return b;
}

void ThetaBounds::validate() const {
  for (int i = 0; i < ControllerTheta::kSize; ++i)
    if (!(lower[i] > 0.0 && lower[i] < upper[i] && std::isfinite(upper[i])))
      throw ValidationError("theta bounds need 0 < lower < upper for component " +
                            std::string(ControllerTheta::component_names()[i]));
}

ControllerTheta map_action_to_theta(const Eigen::VectorXd& raw, const ThetaBounds& bounds) {
  if (raw.size() != ControllerTheta::kSize) throw ShapeMismatch("action must have 16 components");
  ControllerTheta t;
  for (int i = 0; i < ControllerTheta::kSize; ++i) {
    const double r = std::clamp(raw[i], -1.0, 1.0);
    const double lo = std::log(bounds.lower[i]);
    const double hi = std::log(bounds.upper[i]);
    t.values[i] = std::exp(lo + 0.5 * (r + 1.0) * (hi - lo));
  }
  return t;
}

void RewardWeights::validate() const {
  for (double b : beta)
    if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("reward betas must lie in [0, 1]");
  if (!(infeasible_penalty >= 0.0)) throw ValidationError("infeasible_penalty must be >= 0");
  if (!(v_des > 0.0)) throw ValidationError("reward v_des must be positive");
}

double reward(const RewardInput& in, const RewardWeights& w) {
  const double dv = in.state.v - w.v_des;
  const double dpsi = in.state.psi - in.psi_des;
  const double cost = w.beta[0] * in.input.u * in.input.u + w.beta[1] * in.input.phi * in.input.phi +
                      w.beta[2] * dv * dv + w.beta[3] * dpsi * dpsi + w.beta[4] * in.fuel_rate;
  return -cost - (in.feasible ? 0.0 : w.infeasible_penalty);
}

FleetTrainingEnv::FleetTrainingEnv(const ScenarioConfig& cfg, const ObsRanges& ranges,
                                   const ThetaBounds& bounds, const RewardWeights& weights, std::uint64_t seed)
    : cfg_(cfg),
      ranges_(ranges),
      bounds_(bounds),
      weights_(weights),
      rng_(RngStreams(seed).stream("training/episodes")) {
  cfg_.validate();
  ranges_.validate();
  bounds_.validate();
  weights_.validate();
}

std::map<int, Eigen::VectorXd> FleetTrainingEnv::observe_all() const {
  std::map<int, Eigen::VectorXd> obs;
  for (const CavAgent& a : world_->agents()) obs[a.id] = observe(world_->context_for(a.id), ranges_);
  return obs;
}

std::map<int, Eigen::VectorXd> FleetTrainingEnv::reset() {
  ScenarioConfig episode = cfg_;
  episode.seed = rng_();
  world_ = std::make_unique<World>(episode, [this](const AgentContext& ctx) { return theta_.at(ctx.cav_id); });
  arrivals_ = std::make_unique<ArrivalProcess>(episode, RngStreams(episode.seed));
  spawned_ = 0;
  theta_.clear();
  spawn_arrivals(*arrivals_, *world_, spawned_);
  return observe_all();
}

FleetTrainingEnv::StepOutcome FleetTrainingEnv::step(const std::map<int, Eigen::VectorXd>& raw_actions) {
  if (!world_) throw ValidationError("training env needs reset()");
  theta_.clear();
  std::map<int, Origin> origin;
  const std::map<int, Eigen::VectorXd> before = observe_all();
  for (const CavAgent& a : world_->agents()) {
    origin[a.id] = a.origin;
    const auto it = raw_actions.find(a.id);
    if (it == raw_actions.end()) throw ValidationError("no action for CAV " + std::to_string(a.id));
    theta_[a.id] = map_action_to_theta(it->second, bounds_);
  }
  world_->step();
  spawn_arrivals(*arrivals_, *world_, spawned_);

  StepOutcome out;
  out.obs = observe_all();
  for (const AgentStepResult& r : world_->last_results()) {
    Transition t;
    t.cav_id = r.cav_id;
    t.feasible = r.feasible;
    RewardInput ri;
    ri.state = r.state_after;
    ri.input = r.input;
    ri.feasible = r.feasible;
    ri.psi_des = cfg_.lane(origin.at(r.cav_id)).route.heading;
    ri.fuel_rate = fuel_rate(std::max(0.0, r.state_before.v), r.input.u, cfg_.fuel);
    t.reward = reward(ri, weights_);
    t.done = r.exited;
    // A terminal observation is never bootstrapped; repeat the last one.
    t.next_obs = t.done ? before.at(r.cav_id) : out.obs.at(r.cav_id);
    out.transitions.push_back(std::move(t));
  }
  out.episode_over = world_->completed() >= cfg_.target_cavs || world_->time() >= cfg_.time_cap - 1e-9;
  return out;
}

TrainResult train_policy(const TrainingSetup& setup, std::uint64_t seed, const TrainProgress& progress) {
  const SacHyperparams& hyper = setup.sac;
  hyper.validate();
  TrainResult res;
  res.ranges = ObsRanges::for_scenario(setup.scenario);
  if (!(setup.episode_time_cap > 0.0)) throw ValidationError("episode_time_cap must be positive");
  ScenarioConfig scenario = setup.scenario;
  scenario.time_cap = std::min(scenario.time_cap, setup.episode_time_cap);
  FleetTrainingEnv env(scenario, res.ranges, setup.bounds, setup.reward, seed);
  SacAgent agent(kObservationSize, ControllerTheta::kSize, hyper, seed);
  ReplayBuffer buffer(static_cast<std::size_t>(hyper.replay_capacity));
  const RngStreams streams(seed);
  std::mt19937_64 replay_rng = streams.stream("replay");
  std::mt19937_64 warmup_rng = streams.stream("policy/warmup");

  std::map<int, Eigen::VectorXd> obs = env.reset();
  LearningCurveRow row;
  std::set<int> cavs;
  SacDiagnostics diag;
  long step = 0;
  while (step < hyper.total_steps) {
    std::map<int, Eigen::VectorXd> actions;
    for (const auto& [id, o] : obs) {
      if (step + static_cast<long>(actions.size()) < hyper.warmup_steps) {
        Eigen::VectorXd a(ControllerTheta::kSize);
        for (int i = 0; i < a.size(); ++i) a[i] = uniform(warmup_rng, -1.0, 1.0);
        actions[id] = a;
      } else {
        actions[id] = agent.act(o);
      }
    }
    const FleetTrainingEnv::StepOutcome out = env.step(actions);
    for (const FleetTrainingEnv::Transition& t : out.transitions) {
      if (step >= hyper.total_steps) break;
      ++step;
      buffer.push({obs.at(t.cav_id), actions.at(t.cav_id), t.reward, t.next_obs, t.done});
      row.reward += t.reward;
      row.infeasible_count += t.feasible ? 0 : 1;
      cavs.insert(t.cav_id);
      if (step > hyper.warmup_steps)
        diag = agent.update(buffer.sample(static_cast<std::size_t>(hyper.batch_size), replay_rng));
    }
    obs = out.obs;
    if (out.episode_over) {
      row.step = step;
      row.reward /= std::max<std::size_t>(1, cavs.size());
      row.critic_loss = diag.critic_loss;
      row.actor_loss = diag.actor_loss;
      res.curve.push_back(row);
      if (progress) progress(row);
      const int next_episode = row.episode + 1;
      row = LearningCurveRow{};
      row.episode = next_episode;
      cavs.clear();
      obs = env.reset();
    }
  }
  res.policy = agent.policy;
  return res;
}

ThetaSource policy_theta(std::shared_ptr<const GaussianPolicy> policy, const ObsRanges& ranges,
                         const ThetaBounds& bounds) {
  if (!policy) throw ValidationError("policy_theta needs a policy");
  if (policy->obs_dim() != kObservationSize || policy->act_dim() != ControllerTheta::kSize)
    throw ShapeMismatch("policy dimensions do not match the controller");
  bounds.validate();
  return [policy, ranges, bounds](const AgentContext& ctx) {
    return map_action_to_theta(policy->deterministic(observe(ctx, ranges)).col(0), bounds);
  };
}

double train_toy(const SacHyperparams& hyper, long steps, std::uint64_t seed, double target) {
  SacAgent agent(1, 1, hyper, seed);
  ReplayBuffer buffer(static_cast<std::size_t>(hyper.replay_capacity));
  std::mt19937_64 replay_rng = RngStreams(seed).stream("replay");
  std::mt19937_64 warmup_rng = RngStreams(seed).stream("policy/warmup");
  const Eigen::VectorXd obs = Eigen::VectorXd::Zero(1);
  for (long step = 1; step <= steps; ++step) {
    Eigen::VectorXd a(1);
    if (step <= hyper.warmup_steps)
      a[0] = uniform(warmup_rng, -1.0, 1.0);
    else
      a = agent.act(obs);
    const double r = -(a[0] - target) * (a[0] - target);
    buffer.push({obs, a, r, obs, true});
    if (step > hyper.warmup_steps) agent.update(buffer.sample(static_cast<std::size_t>(hyper.batch_size), replay_rng));
  }
  return agent.act_deterministic(obs)[0];
}

}  // namespace mpccbf
