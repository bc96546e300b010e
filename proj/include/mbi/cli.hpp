#pragma once

// Command-line surface: config overrides, output writers, the scaling bench
// and the command dispatcher. Kept in the library so tests drive it directly.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbi/error.hpp"
#include "mbi/scenarios.hpp"

namespace mbi {

/// Config failure tied to a 1-based line of the input.
class ConfigError : public Error {
 public:
  ConfigError(ErrorCode code, int line, const std::string& reason)
      : Error(code, "line " + std::to_string(line) + ": " + reason), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct ConfigOverrides {
  std::optional<double> epsilon;
  std::optional<double> tau;
  std::optional<int> max_cycles;
  std::optional<bool> stop_on_convergence;
  std::optional<bool> record_agents;
  std::map<std::string, double> graph;
  std::map<std::uint32_t, AgentOverride> agents;
  std::optional<double> sigma;
  std::optional<ScheduleSpec::Kind> schedule_kind;
  std::optional<int> schedule_at;
  std::optional<double> schedule_before;
  std::optional<double> schedule_after;
  std::optional<double> schedule_amplitude;
  std::optional<double> schedule_period;
  std::optional<TypePrior> prior;
  std::map<std::string, int> graph_lines;  // for UnknownKey diagnostics at merge time
};

/// Line format: `[section]`, `key = value`, `#` comments. Sections: planner,
/// graph, agent.<id>, noise, schedule, prior; keys before the first header
/// belong to planner. Throws ConfigError with
/// ParseError, UnknownKey or TypeMismatch.
ConfigOverrides parse_config(std::string_view text);
ConfigOverrides load_config(const std::filesystem::path& path);
/// Graph keys must already be parameters of the scenario (UnknownKey).
void apply_config(ScenarioSpec& spec, const ConfigOverrides& overrides);

std::string trace_csv(const RunResult& result);
void emit_trace_csv(const RunResult& result, const std::filesystem::path& path);

/// `key: value` lines: converged, cycles_used, final_loss, final_grad_norm,
/// oracle_gap when known, then report entries and `extra` in order.
std::string summary_text(const ScenarioReport& report,
                         const std::vector<std::pair<std::string, std::string>>& extra = {});
void emit_summary(const ScenarioReport& report, const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, std::string>>& extra = {});

struct BenchRow {
  std::size_t n = 0;
  double median_nanos = 0.0;  // per cycle
  std::vector<double> repetitions;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::optional<double> slope;  // least squares of log time on log n; absent for one n
};

/// Times `cycles` planner cycles of the separable scaling scenario per
/// repetition and keeps the median per-cycle time for every n.
BenchResult bench_scaling(std::span<const std::size_t> n_values, int cycles, std::uint64_t seed,
                          int repetitions = 5);
std::string bench_csv(const BenchResult& result);

/// Least-squares slope of log(y) on log(x); empty for fewer than two points.
std::optional<double> loglog_slope(std::span<const double> x, std::span<const double> y);

/// Seed from MBI_SEED when set, else `fallback`. Throws InvalidConfig on junk.
std::uint64_t default_seed(std::uint64_t fallback);

/// Entry point for the executable. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mbi
