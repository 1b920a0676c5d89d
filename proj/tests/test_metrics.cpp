#include <cmath>
#include <sstream>

#include "doctest.h"
#include "mpccbf/metrics.hpp"
#include "oracles.hpp"

using namespace mpccbf;

TEST_CASE("scripted log aggregates match hand computation") {
  const oracle::ScriptedLog s = oracle::scripted_log();
  const MetricsReport r = compute_metrics(s.log);
  CHECK(std::abs(r.avg_travel_time - s.avg_tt) < 1e-9);
  CHECK(std::abs(r.avg_half_u_sq - s.avg_half_u_sq) < 1e-9);
  CHECK(std::abs(r.avg_fuel - s.avg_fuel) < 1e-9);
  CHECK(r.total_infeasible_count == s.infeasible);
  CHECK(r.completed == 2);
  REQUIRE(r.incomplete_cavs.size() == 1);
  CHECK(r.incomplete_cavs[0] == 3);
  CHECK(r.per_cav[1].infeasible == 1);
}

TEST_CASE("strict mode rejects incomplete cavs") {
  const oracle::ScriptedLog s = oracle::scripted_log();
  CHECK_THROWS_AS(compute_metrics(s.log, true), IncompleteLog);
  RolloutLog done = s.log;
  done.cavs.pop_back();
  CHECK_NOTHROW(compute_metrics(done, true));
}

TEST_CASE("fuel model") {
  const FuelModelParams p;
  CHECK(std::abs(fuel_rate(10.0, 0.0, p) - 0.3875) < 1e-12);
  // Braking adds nothing over cruising.
  CHECK(fuel_rate(10.0, -3.0, p) == fuel_rate(10.0, 0.0, p));
  const double accel = 2.0 * (p.r0 + p.r1 * 10 + p.r2 * 100);
  CHECK(std::abs(fuel_rate(10.0, 2.0, p) - 0.3875 - accel) < 1e-12);
  CHECK(fuel_rate(0.0, 0.0, p) == doctest::Approx(p.w0));
}

TEST_CASE("empty log gives zero averages") {
  const MetricsReport r = compute_metrics(RolloutLog{});
  CHECK(r.completed == 0);
  CHECK(r.avg_travel_time == 0.0);
}

TEST_CASE("rollout csv has a header and one line per record") {
  const oracle::ScriptedLog s = oracle::scripted_log();
  std::ostringstream out;
  write_rollout_csv(s.log, out);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 1 + static_cast<int>(s.log.steps.size()));
  CHECK(out.str().rfind("step,time,cav_id", 0) == 0);
}

TEST_CASE("constant input and a single long trip") {
  RolloutLog log;
  for (int k = 0; k < 10; ++k) {
    StepRecord r;
    r.step = 10 + k;
    r.time = 2.0 + 0.2 * k;
    r.cav_id = 0;
    r.input = {2.0, 0.0};
    r.fuel_rate = 1.0;
    log.steps.push_back(r);
  }
  log.cavs = {{0, 0, 2.0, 12.94}};
  const MetricsReport m = compute_metrics(log);
  CHECK(std::abs(m.avg_half_u_sq - 2.0) < 1e-12);
  CHECK(std::abs(m.avg_travel_time - 10.94) < 1e-9);
  CHECK(std::abs(m.avg_fuel - 1.8) < 1e-9);
  CHECK(m.total_infeasible_count == 0);
}
