#include "mpccbf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include "json.hpp"
#include <sstream>
#include <iomanip>

namespace mpccbf {

double fuel_rate(double v, double u, const FuelModelParams& p) {
  const double cruise = p.w0 + p.w1 * v + p.w2 * v * v + p.w3 * v * v * v;
  const double accel = std::max(u, 0.0) * (p.r0 + p.r1 * v + p.r2 * v * v);
  return std::max(0.0, cruise + accel);
}

namespace {

void put(std::ostream& out, double v) {
  if (std::isnan(v)) {
    out << "nan";
    return;
  }
  out << v;
}

}  // namespace

void write_rollout_csv(const RolloutLog& log, std::ostream& out) {
  out << "step,time,cav_id,lane,x,y,psi,v,u,phi,feasible,b_ellipse,b_merge,b_road_l,b_road_r,fuel_rate\n";
  std::ostringstream row;
  row << std::setprecision(10);
  for (const StepRecord& r : log.steps) {
    row.str("");
    row << r.step << ',';
    put(row, r.time);
    row << ',' << r.cav_id << ',' << r.lane;
    for (double v : {r.state.x, r.state.y, r.state.psi, r.state.v, r.input.u, r.input.phi}) {
      row << ',';
      put(row, v);
    }
    row << ',' << (r.feasible ? 1 : 0);
    for (double v : {r.b_ellipse, r.b_merge, r.b_road_l, r.b_road_r, r.fuel_rate}) {
      row << ',';
      put(row, v);
    }
    out << row.str() << '\n';
  }
}

MetricsReport compute_metrics(const RolloutLog& log, bool strict) {
  MetricsReport rep;
  std::map<int, std::vector<const StepRecord*>> by_cav;
  for (const StepRecord& r : log.steps) {
    by_cav[r.cav_id].push_back(&r);
    if (!r.feasible) ++rep.total_infeasible_count;
  }
  double sum_tt = 0.0;
  double sum_u = 0.0;
  double sum_fuel = 0.0;
  for (const CavRecord& c : log.cavs) {
    CavMetrics m;
    m.cav_id = c.cav_id;
    m.lane = c.lane;
    m.completed = c.tf.has_value();
    const auto it = by_cav.find(c.cav_id);
    if (it != by_cav.end()) {
      const auto& rs = it->second;
      m.steps = static_cast<int>(rs.size());
      double su = 0.0;
      for (std::size_t k = 0; k < rs.size(); ++k) {
        su += 0.5 * rs[k]->input.u * rs[k]->input.u;
        if (!rs[k]->feasible) ++m.infeasible;
        if (k + 1 < rs.size())
          m.fuel += 0.5 * (rs[k]->fuel_rate + rs[k + 1]->fuel_rate) * (rs[k + 1]->time - rs[k]->time);
      }
      m.half_u_sq = rs.empty() ? 0.0 : su / static_cast<double>(rs.size());
    }
    if (m.completed) {
      m.travel_time = *c.tf - c.t0;
      sum_tt += m.travel_time;
      sum_u += m.half_u_sq;
      sum_fuel += m.fuel;
      ++rep.completed;
    } else {
      if (strict) throw IncompleteLog("cav " + std::to_string(c.cav_id) + " never crossed the merging point");
      rep.incomplete_cavs.push_back(c.cav_id);
    }
    rep.per_cav.push_back(m);
  }
  if (rep.completed > 0) {
    rep.avg_travel_time = sum_tt / rep.completed;
    rep.avg_half_u_sq = sum_u / rep.completed;
    rep.avg_fuel = sum_fuel / rep.completed;
  }
  return rep;
}

std::string metrics_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["Ave. travel time"] = r.avg_travel_time;
  j["Ave. half u^2"] = r.avg_half_u_sq;
  j["Ave. fuel consumption"] = r.avg_fuel;
  j["Total infeasibility"] = r.total_infeasible_count;
  j["completed"] = r.completed;
  j["incomplete_cavs"] = r.incomplete_cavs;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const CavMetrics& m : r.per_cav) {
    per.push_back({{"cav_id", m.cav_id}, {"lane", m.lane}, {"completed", m.completed},
                   {"travel_time", m.travel_time}, {"half_u_sq", m.half_u_sq}, {"fuel", m.fuel},
                   {"infeasible", m.infeasible}, {"steps", m.steps}});
  }
  j["per_cav"] = per;
  return j.dump(2);
}

}  // namespace mpccbf
