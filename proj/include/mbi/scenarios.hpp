#pragma once

// Built-in scenario catalog.
//
// A ScenarioSpec is parametric: `params` holds the numeric knobs of its
// family (target, agent count, step sizes, ...) and instantiate() turns them
// into a validated graph plus agent states, then applies per-agent overrides.
// Config files may only set params the family already declares.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mbi/agent.hpp"
#include "mbi/bayes.hpp"
#include "mbi/ddag.hpp"
#include "mbi/mechanism.hpp"
#include "mbi/oracle.hpp"

namespace mbi {

struct ScheduleSpec {
  enum class Kind { None, Step, Sine };
  Kind kind = Kind::None;
  int at = 200;         // Step: first cycle with the new value
  double before = 10.0;
  double after = 20.0;
  double amplitude = 0.0;  // Sine: before + amplitude * sin(2 pi cycle / period)
  double period = 100.0;

  double value(int cycle) const;
};

struct AgentOverride {
  std::optional<double> lambda;
  std::optional<double> reported_lambda;
  std::optional<double> rho;
  std::optional<double> eta;
  std::optional<double> inner_eta;
  std::optional<int> max_effort;
  std::optional<std::string> strategy;  // "gradient" or "best_response"
  std::optional<std::vector<double>> start;
};

struct ScenarioSpec {
  std::string name;
  std::string family;  // builder and runner; equals name for catalog entries
  std::string summary;
  std::map<std::string, double> params;
  PlannerConfig planner;
  NoiseSpec noise;
  ScheduleSpec schedule;
  std::optional<TypePrior> prior;
  std::map<std::uint32_t, AgentOverride> agents;
  std::uint64_t seed = 0;

  double param(const std::string& key) const;
};

struct Instance {
  Graph graph;
  std::vector<AgentState> agents;
};

std::vector<ScenarioSpec> catalog();
/// Throws UnknownScenario.
ScenarioSpec find_scenario(std::string_view name);
/// Throws UnknownScenario for an unknown family, UnknownAgent for overrides
/// that name no agent.
Instance instantiate(const ScenarioSpec& spec);

struct ScenarioReport {
  RunResult run;
  std::optional<double> oracle_gap;  // max |x - x_oracle| over all action components
  std::vector<std::pair<std::string, std::string>> entries;
  std::map<std::string, std::vector<double>> series;

  void add(std::string key, std::string value) { entries.emplace_back(std::move(key), std::move(value)); }
  void add(std::string key, double value);
  void add(std::string key, bool value) { add(std::move(key), std::string(value ? "true" : "false")); }
  const std::string* find(std::string_view key) const;
};

/// Runs the scenario's family with `seed` driving all randomness.
ScenarioReport run_scenario(const ScenarioSpec& spec, std::uint64_t seed);

/// L_global over the concatenated agent coordinates (slot order), true costs.
ScalarField global_loss_field(Mechanism& mechanism);

}  // namespace mbi
