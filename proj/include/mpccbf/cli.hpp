#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "mpccbf/config.hpp"
#include "mpccbf/metrics.hpp"

namespace mpccbf {

inline constexpr const char* kArtifactVersion = "mpccbf-0.1.0";

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

/// args excludes the program name. Diagnostics go to err, one line each.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Thrown for malformed command-line values that CLI11 cannot catch itself.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// "baseline:<preset>" or "checkpoint:<path>".
struct ThetaSpec {
  bool is_checkpoint = false;
  std::string value;

  static ThetaSpec parse(const std::string& text);
  std::string label() const;
};

ThetaSource make_theta_source(const ThetaSpec& spec, const AppConfig& cfg, std::ostream& err);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

/// One column of the comparison table, aggregated over seeds.
struct TableColumn {
  std::string name;
  MetricSummary travel_time;
  MetricSummary half_u_sq;
  MetricSummary fuel;
  int total_infeasible = 0;
};

TableColumn summarize(const std::string& name, const std::vector<MetricsReport>& runs);

std::string table_to_json(const std::vector<TableColumn>& cols);
std::vector<TableColumn> table_from_json(const std::string& text);
void write_table_csv(const std::vector<TableColumn>& cols, std::ostream& out);
void write_table_text(const std::vector<TableColumn>& cols, std::ostream& out);

}  // namespace mpccbf
