#include "mpccbf/merge_sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mpccbf/errors.hpp"

namespace mpccbf {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int lane_id(Origin o) { return static_cast<int>(o); }

double exponential_gap(std::mt19937_64& g, double rate) {
  return -std::log1p(-uniform01(g)) / rate;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!(geometry.cz_length > 0.0)) throw ValidationError("cz_length must be positive");
  if (!(geometry.lane_width > 0.0)) throw ValidationError("lane_width must be positive");
  if (!(geometry.merge_angle > 0.0 && geometry.merge_angle < 1.5))
    throw ValidationError("merge_angle must lie in (0, 1.5) rad");
  if (!(arrival_rate >= 0.0)) throw ValidationError("arrival_rate must be >= 0");
  mpc.vehicle.validate();
  const ControlBounds& b = mpc.vehicle.bounds;
  if (!(v0_min <= v0_max && v0_min >= b.v_min && v0_max <= b.v_max))
    throw ValidationError("initial speed range must lie within [v_min, v_max]");
  if (!(mpc.dt > 0.0)) throw ValidationError("dt must be positive");
  if (mpc.horizon < 2) throw ValidationError("horizon must be at least 2");
  if (!(mpc.v_des > 0.0 && mpc.v_des <= b.v_max)) throw ValidationError("v_des must lie in (0, v_max]");
  if (!(mpc.ellipse.a > 0.0 && mpc.ellipse.b > 0.0)) throw ValidationError("ellipse weights must be positive");
  if (!(mpc.varphi > 0.0)) throw ValidationError("varphi must be positive");
  if (!(mpc.delta >= 0.0)) throw ValidationError("delta must be >= 0");
  if (!(mpc.boundary_radius > geometry.lane_width)) throw ValidationError("boundary_radius must exceed the lane width");
  if (target_cavs < 0) throw ValidationError("target_cavs must be >= 0");
  if (!(time_cap > 0.0)) throw ValidationError("time_cap must be positive");
}

LaneContext ScenarioConfig::lane(Origin o) const {
  const StraightRoute main = geometry.main_road();
  const StraightRoute ramp = geometry.ramp();
  return o == Origin::Main ? LaneContext{main, ramp} : LaneContext{ramp, main};
}

ThetaSource fixed_theta(const ControllerTheta& theta) {
  theta.validate();
  return [theta](const AgentContext&) { return theta; };
}

ArrivalProcess::ArrivalProcess(const ScenarioConfig& cfg, const RngStreams& rng)
    : rate_(cfg.arrival_rate), v0_min_(cfg.v0_min), v0_max_(cfg.v0_max) {
  const char* gap_names[2] = {"arrivals/main", "arrivals/ramp"};
  const char* speed_names[2] = {"initial_speed/main", "initial_speed/ramp"};
  for (int o = 0; o < 2; ++o) {
    gaps_[o] = rng.stream(gap_names[o]);
    speeds_[o] = rng.stream(speed_names[o]);
    next_[o] = rate_ > 0.0 ? exponential_gap(gaps_[o], rate_) : std::numeric_limits<double>::infinity();
  }
}

std::vector<ArrivalProcess::Event> ArrivalProcess::pop_due(Origin o, double t) {
  const int k = lane_id(o);
  std::vector<Event> out;
  while (next_[k] <= t + 1e-9) {
    out.push_back({next_[k], uniform(speeds_[k], v0_min_, v0_max_)});
    next_[k] += exponential_gap(gaps_[k], rate_);
  }
  return out;
}

BarrierValues barrier_values(const ScenarioConfig& cfg, Origin o, const VehicleState& ego,
                             const std::optional<VehicleState>& preceding,
                             const std::optional<VehicleState>& merging) {
  const LaneContext lane = cfg.lane(o);
  NeighborView view;
  if (preceding) view.preceding = NeighborTrack{{NeighborSample{*preceding, StateDerivative::Zero()}}};
  if (merging) view.merging = NeighborTrack{{NeighborSample{*merging, StateDerivative::Zero()}}};
  BarrierValues out;
  for (const BarrierSpec& spec : active_barriers(view, lane, cfg.mpc)) {
    const auto nb = neighbor_for(spec, view, 0);
    const std::optional<VehicleState> other = nb ? std::optional<VehicleState>(nb->state) : std::nullopt;
    const double b = spec.nominal_scale() * eval_barrier(spec, ego, other, EllipseSpeedMode::Floored);
    switch (spec.kind) {
      case BarrierKind::RearEndEllipse: out.ellipse = b; break;
      case BarrierKind::SafeMerging: out.merge = b; break;
      case BarrierKind::RoadLeft: out.road_l = b; break;
      case BarrierKind::RoadRight: out.road_r = b; break;
      case BarrierKind::SpeedMax: out.speed_max = b; break;
      case BarrierKind::SpeedMin: out.speed_min = b; break;
    }
  }
  return out;
}

World::World(const ScenarioConfig& cfg, ThetaSource theta) : cfg_(cfg), theta_(std::move(theta)) {
  cfg_.validate();
  log_.dt = cfg_.mpc.dt;
}

int World::add_agent(Origin o, double speed, double progress, double lateral) {
  const StraightRoute route = cfg_.lane(o).route;
  const Eigen::Vector2d p = route.point_at(progress, lateral);
  CavAgent a;
  a.id = next_id_++;
  a.origin = o;
  a.state = {p[0], p[1], route.heading, speed};
  a.t0 = time();
  agents_.push_back(a);
  log_.cavs.push_back({a.id, lane_id(o), a.t0, std::nullopt});
  return a.id;
}

const CavAgent* World::find(int id) const {
  for (const CavAgent& a : agents_)
    if (a.id == id) return &a;
  return nullptr;
}

std::map<int, int> World::indices() const {
  std::map<int, int> out;
  for (std::size_t i = 0; i < agents_.size(); ++i) out[agents_[i].id] = static_cast<int>(i);
  return out;
}

std::map<int, ConflictAssignment> World::assign_conflicts() const {
  std::map<int, ConflictAssignment> out;
  const double L = cfg_.geometry.cz_length;
  auto progress = [&](const CavAgent& a) { return cfg_.lane(a.origin).route.progress(a.state.x, a.state.y); };
  for (const CavAgent& a : agents_) {
    ConflictAssignment c;
    const double pa = progress(a);
    double best_p = std::numeric_limits<double>::infinity();
    for (const CavAgent& b : agents_) {
      if (b.id == a.id || b.origin != a.origin) continue;
      const double pb = progress(b);
      if (pb > pa && pb < best_p) {
        best_p = pb;
        c.preceding = b.id;
      }
    }
    if (cfg_.policy == SequencingPolicy::Fifo) {
      for (const CavAgent& b : agents_)
        if (b.origin != a.origin && b.id < a.id && (!c.merging || b.id > *c.merging)) c.merging = b.id;
    } else {
      // Ahead in merging order means closer to the merging point (id breaks ties).
      const std::pair<double, int> key_a{L - pa, a.id};
      std::optional<std::pair<double, int>> best;
      for (const CavAgent& b : agents_) {
        if (b.origin == a.origin) continue;
        const std::pair<double, int> key_b{L - progress(b), b.id};
        if (key_b < key_a && (!best || key_b > *best)) {
          best = key_b;
          c.merging = b.id;
        }
      }
    }
    out[a.id] = c;
  }
  return out;
}

AgentContext World::context_for(int id) const {
  const CavAgent* a = find(id);
  if (!a) throw ValidationError("no active CAV with id " + std::to_string(id));
  const ConflictAssignment c = assign_conflicts().at(id);
  AgentContext ctx;
  ctx.cav_id = id;
  ctx.origin = a->origin;
  ctx.ego = a->state;
  ctx.prev_input = a->prev_input;
  ctx.config = &cfg_;
  if (c.preceding) ctx.preceding = find(*c.preceding)->state;
  if (c.merging) ctx.merging = find(*c.merging)->state;
  return ctx;
}

std::vector<int> World::solve_order() const {
  std::vector<std::pair<double, int>> keys;
  const double L = cfg_.geometry.cz_length;
  for (const CavAgent& a : agents_) {
    const double d = L - cfg_.lane(a.origin).route.progress(a.state.x, a.state.y);
    keys.push_back({cfg_.policy == SequencingPolicy::Fifo ? static_cast<double>(a.id) : d, a.id});
  }
  std::sort(keys.begin(), keys.end());
  std::vector<int> ids;
  for (const auto& k : keys) ids.push_back(k.second);
  return ids;
}

void World::step() {
  const MpcSettings& mpc = cfg_.mpc;
  const double t = time();
  const auto conflicts = assign_conflicts();
  std::map<int, NeighborTrack> plans;
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < agents_.size(); ++i) slot[agents_[i].id] = i;

  auto track_of = [&](int id) {
    const auto it = plans.find(id);
    if (it != plans.end()) return it->second;
    const CavAgent& nb = agents_[slot.at(id)];
    return NeighborTrack::coasting(nb.state, mpc.vehicle, mpc.horizon, mpc.dt);
  };

  last_.clear();
  std::map<int, AgentStepResult> results;
  for (int id : solve_order()) {
    CavAgent& a = agents_[slot.at(id)];
    const ConflictAssignment& c = conflicts.at(id);
    AgentContext ctx;
    ctx.cav_id = id;
    ctx.origin = a.origin;
    ctx.ego = a.state;
    ctx.prev_input = a.prev_input;
    ctx.config = &cfg_;
    NeighborView view;
    if (c.preceding) {
      ctx.preceding = agents_[slot.at(*c.preceding)].state;
      view.preceding = track_of(*c.preceding);
    }
    if (c.merging) {
      ctx.merging = agents_[slot.at(*c.merging)].state;
      view.merging = track_of(*c.merging);
    }
    AgentStepResult r;
    r.cav_id = id;
    r.theta = theta_(ctx);
    r.state_before = a.state;
    try {
      const ControlOutcome out = compute_control(a.state, view, r.theta, cfg_.lane(a.origin), mpc, a.prev_solution);
      r.input = out.input;
      r.feasible = out.feasible;
      r.status = out.horizon.status;
      a.prev_solution = out.horizon;
      plans[id] = NeighborTrack::from_plan(a.state, out.horizon.controls, mpc.vehicle, mpc.dt);
    } catch (const GeometryError&) {
      // Outside the control zone (only reachable after backing up); brake.
      r.input = mpc.vehicle.bounds.clamp({-a.state.v / mpc.dt, 0.0});
      r.feasible = false;
      r.status = NlpStatus::Infeasible;
      a.prev_solution.reset();
      const std::vector<ControlInput> hold(mpc.horizon, r.input);
      plans[id] = NeighborTrack::from_plan(a.state, hold, mpc.vehicle, mpc.dt);
    }
    a.prev_input = r.input;

    const BarrierValues bv = barrier_values(cfg_, a.origin, a.state, ctx.preceding, ctx.merging);
    StepRecord rec;
    rec.step = step_index_;
    rec.time = t;
    rec.cav_id = id;
    rec.lane = lane_id(a.origin);
    rec.state = a.state;
    rec.input = r.input;
    rec.feasible = r.feasible;
    rec.b_ellipse = bv.ellipse;
    rec.b_merge = bv.merge;
    rec.b_road_l = bv.road_l;
    rec.b_road_r = bv.road_r;
    rec.fuel_rate = fuel_rate(a.state.v, r.input.u, cfg_.fuel);
    log_.steps.push_back(rec);
    results[id] = r;
  }

  // Commit: integrate everyone, then audit against realized neighbor states.
  for (CavAgent& a : agents_) {
    AgentStepResult& r = results.at(a.id);
    r.state_after = step_rk4(a.state, r.input, mpc.vehicle, mpc.dt);
  }
  for (const CavAgent& a : agents_) {
    const AgentStepResult& r = results.at(a.id);
    if (!r.feasible) continue;
    const ConflictAssignment& c = conflicts.at(a.id);
    std::optional<VehicleState> ip;
    std::optional<VehicleState> ic;
    if (c.preceding) ip = results.at(*c.preceding).state_after;
    if (c.merging) ic = results.at(*c.merging).state_after;
    const BarrierValues bv = barrier_values(cfg_, a.origin, r.state_after, ip, ic);
    const std::pair<const char*, double> vals[6] = {{"rear_end_ellipse", bv.ellipse}, {"safe_merging", bv.merge},
                                                    {"road_left", bv.road_l},         {"road_right", bv.road_r},
                                                    {"speed_max", bv.speed_max},      {"speed_min", bv.speed_min}};
    for (const auto& [name, v] : vals)
      if (!std::isnan(v)) log_.audit.push_back({step_index_, a.id, name, v});
  }

  const double L = cfg_.geometry.cz_length;
  std::vector<CavAgent> kept;
  for (CavAgent& a : agents_) {
    AgentStepResult& r = results.at(a.id);
    const StraightRoute route = cfg_.lane(a.origin).route;
    const double p0 = route.progress(a.state.x, a.state.y);
    const double p1 = route.progress(r.state_after.x, r.state_after.y);
    a.state = r.state_after;
    if (p1 >= L) {
      const double frac = p1 > p0 ? (L - p0) / (p1 - p0) : 1.0;
      const double tf = t + std::clamp(frac, 0.0, 1.0) * mpc.dt;
      for (CavRecord& cr : log_.cavs)
        if (cr.cav_id == a.id) cr.tf = tf;
      r.exited = true;
      ++completed_;
    } else {
      kept.push_back(a);
    }
  }
  agents_ = std::move(kept);
  for (auto& [id, r] : results) last_.push_back(std::move(r));
  ++step_index_;
}

std::vector<int> spawn_arrivals(ArrivalProcess& arrivals, World& world, int& spawned) {
  std::vector<int> ids;
  const ScenarioConfig& cfg = world.config();
  for (Origin o : {Origin::Main, Origin::Ramp}) {
    for (const auto& ev : arrivals.pop_due(o, world.time())) arrivals.pending(o).push_back(ev);
    auto& queue = arrivals.pending(o);
    while (!queue.empty() && spawned < cfg.target_cavs) {
      const StraightRoute route = cfg.lane(o).route;
      const Eigen::Vector2d p = route.point_at(0.0);
      const VehicleState candidate{p[0], p[1], route.heading, queue.front().speed};
      // Prospective i_p and i_c: the last CAV on each road (smallest progress).
      auto last_on = [&](Origin lane) -> std::optional<VehicleState> {
        const StraightRoute r = cfg.lane(lane).route;
        std::optional<VehicleState> last;
        double last_p = std::numeric_limits<double>::infinity();
        for (const CavAgent& a : world.agents()) {
          if (a.origin != lane) continue;
          const double pa = r.progress(a.state.x, a.state.y);
          if (pa < last_p) {
            last_p = pa;
            last = a.state;
          }
        }
        return last;
      };
      const Origin other = o == Origin::Main ? Origin::Ramp : Origin::Main;
      const BarrierValues bv = barrier_values(cfg, o, candidate, last_on(o), last_on(other));
      if (bv.ellipse < 0.0 || bv.merge < 0.0) break;
      ids.push_back(world.add_agent(o, queue.front().speed));
      queue.pop_front();
      ++spawned;
    }
  }
  return ids;
}

EpisodeResult run_episode(const ScenarioConfig& cfg, const ThetaSource& theta) {
  World world(cfg, theta);
  ArrivalProcess arrivals(cfg, RngStreams(cfg.seed));
  int spawned = 0;
  while (world.time() < cfg.time_cap - 1e-9) {
    spawn_arrivals(arrivals, world, spawned);
    if (world.completed() >= cfg.target_cavs) break;
    world.step();
  }
  EpisodeResult res;
  res.log = world.log();
  res.metrics = compute_metrics(res.log);
  return res;
}

}  // namespace mpccbf
