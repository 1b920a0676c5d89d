#pragma once

#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpccbf/dynamics.hpp"

namespace mpccbf {

struct FuelModelParams {
  double w0 = 0.1569;
  double w1 = 2.45e-2;
  double w2 = -7.415e-4;
  double w3 = 5.975e-5;
  double r0 = 0.07224;
  double r1 = 9.681e-2;
  double r2 = 1.075e-3;
};

/// Instantaneous fuel rate; braking burns nothing extra and the total is
/// floored at zero.
double fuel_rate(double v, double u, const FuelModelParams& p);

/// One controlled step of one CAV. Barrier entries are NaN when the barrier
/// is not active (no neighbor for it).
struct StepRecord {
  int step = 0;
  double time = 0.0;
  int cav_id = 0;
  int lane = 0;
  VehicleState state;
  ControlInput input;
  bool feasible = true;
  double b_ellipse = 0.0;
  double b_merge = 0.0;
  double b_road_l = 0.0;
  double b_road_r = 0.0;
  double fuel_rate = 0.0;
};

struct CavRecord {
  int cav_id = 0;
  int lane = 0;
  double t0 = 0.0;
  std::optional<double> tf;  // merging-point crossing time
};

/// Barrier value at the realized next state after a Feasible solve.
struct AuditEntry {
  int step = 0;
  int cav_id = 0;
  std::string barrier;
  double value = 0.0;
};

struct RolloutLog {
  double dt = 0.2;
  std::vector<StepRecord> steps;
  std::vector<CavRecord> cavs;
  std::vector<AuditEntry> audit;
};

void write_rollout_csv(const RolloutLog& log, std::ostream& out);

class IncompleteLog : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CavMetrics {
  int cav_id = 0;
  int lane = 0;
  bool completed = false;
  double travel_time = 0.0;
  double half_u_sq = 0.0;
  double fuel = 0.0;
  int infeasible = 0;
  int steps = 0;
};

struct MetricsReport {
  double avg_travel_time = 0.0;
  double avg_half_u_sq = 0.0;
  double avg_fuel = 0.0;
  int total_infeasible_count = 0;
  int completed = 0;
  std::vector<int> incomplete_cavs;
  std::vector<CavMetrics> per_cav;
};

/// Averages cover completed CAVs only; infeasibility counts every step whose
/// solve was not Feasible. With `strict`, any CAV that never crossed the
/// merging point raises IncompleteLog instead of being set aside.
MetricsReport compute_metrics(const RolloutLog& log, bool strict = false);

/// JSON object mirroring the comparison-table rows plus the per-CAV detail.
std::string metrics_to_json(const MetricsReport& r);

}  // namespace mpccbf
