#pragma once

// Planner loop for Marginal-Benefit Incentives.
//
// Each cycle: agents act on the signal delivered at the end of the previous
// cycle, the planner evaluates L_global = L_System + sum_i C_i and
// differentiates it, and the new signal G_i = -dL_global/dx_i is delivered.
// Cycle 1 has no signal yet, so agents hold their initial actions.
//
// Gradient followers receive G_i. Best responders receive the system-only
// price -dL_System/dx_i, since they subtract their own cost themselves.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mbi/agent.hpp"
#include "mbi/autodiff.hpp"
#include "mbi/ddag.hpp"

namespace mbi {

using ActionMap = std::map<NodeId, Vector>;

struct PlannerConfig {
  double epsilon = 1e-10;  // loss-change threshold
  double tau = 1e-6;       // gradient-norm threshold
  int max_cycles = 5000;
  bool stop_on_convergence = true;
  /// Keep per-agent records in every trace. Off for large benches.
  bool record_agents = true;
};

struct NoiseSpec {
  double sigma = 0.0;  // additive N(0, sigma^2) per signal component
};

struct AgentRecord {
  NodeId node;
  Vector action;     // after this cycle's move
  Vector delta;      // action change this cycle
  Vector delivered;  // signal acted on this cycle (empty in cycle 1)
  Vector incentive;  // exact -dL_global/dx_i at the new actions
  int effort = 0;
  double payment = 0.0;  // delivered . delta
};

struct CycleTrace {
  int cycle = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  long long total_effort = 0;
  std::int64_t wall_nanos = 0;
  bool converged = false;
  std::vector<AgentRecord> agents;
};

struct RunResult {
  std::vector<CycleTrace> traces;
  ActionMap final_actions;
  bool converged = false;
  int cycles_used = 0;
};

enum class CostView { Planner, True, None };

/// L_global over a packed point (agent actions and source values in program
/// variable order). Costs are added analytically on top of the AD program.
class LossModel {
 public:
  struct Slot {
    NodeId node;
    std::size_t offset;
    std::size_t dim;
  };

  LossModel(std::shared_ptr<const ad::Program> program, const Graph& graph,
            std::span<const AgentState> agents, CostView view);

  std::size_t packed_size() const noexcept { return program_->packed_size(); }
  std::span<const Slot> agent_slots() const noexcept { return agents_; }
  std::span<const Slot> source_slots() const noexcept { return sources_; }
  const Slot& slot(NodeId node) const;
  /// Index of `node` in agent_slots().
  std::size_t agent_index(NodeId node) const;
  const std::optional<CostSpec>& cost(std::size_t agent_index) const { return costs_[agent_index]; }

  /// Initial actions and graph source values.
  std::vector<double> initial_point() const { return initial_; }
  void write(std::span<double> packed, const ActionMap& actions) const;
  ActionMap read(std::span<const double> packed) const;

  double system_value(std::span<const double> packed);
  double value(std::span<const double> packed);
  /// Returns L_global. Fills dL_System and dL_global (packed layout, source
  /// components included); either span may be empty to skip it.
  double evaluate(std::span<const double> packed, std::span<double> system_grad, std::span<double> grad);
  /// Agent components only.
  double gradient_norm(std::span<const double> grad) const;

 private:
  std::shared_ptr<const ad::Program> program_;
  ad::Evaluator evaluator_;
  std::vector<Slot> agents_;
  std::vector<Slot> sources_;
  std::vector<std::optional<CostSpec>> costs_;
  std::vector<double> initial_;
  std::map<NodeId, std::size_t> agent_index_;
};

class Mechanism {
 public:
  Mechanism(Graph graph, std::vector<AgentState> agents, PlannerConfig config = {},
            NoiseSpec noise = {}, std::uint64_t seed = 0);

  CycleTrace run_cycle();
  /// Runs until both stop tests hold (when enabled) or max_cycles.
  RunResult run_until_convergence();

  int cycle() const noexcept { return cycle_; }
  const Graph& graph() const noexcept { return graph_; }
  const PlannerConfig& config() const noexcept { return config_; }
  /// Agent states in topological order; actions are the current ones.
  std::vector<AgentState> agents() const;
  ActionMap actions() const;
  Vector action(NodeId node) const;
  std::span<const double> packed() const noexcept { return packed_; }

  void set_actions(const ActionMap& actions);
  void set_source(NodeId source, const Vector& value);
  /// Called at the start of every cycle with the cycle number.
  void set_before_cycle(std::function<void(int, Mechanism&)> hook) { before_cycle_ = std::move(hook); }

  LossModel& planner_model() noexcept { return planner_; }
  LossModel& true_model() noexcept { return truth_; }

  double loss_at(const ActionMap& actions);
  /// L_global with the agents' true costs.
  double true_loss_at(const ActionMap& actions);
  double true_loss();
  /// -dL_global/dx_i for every agent at `actions` (others from the current state).
  std::map<NodeId, IncentiveSignal> incentives_at(const ActionMap& actions);

 private:
  Graph graph_;
  std::vector<AgentState> agents_;  // topological order, matches agent slots
  PlannerConfig config_;
  NoiseSpec noise_;
  std::mt19937_64 rng_;
  std::shared_ptr<const ad::Program> program_;
  LossModel planner_;
  LossModel truth_;
  std::vector<double> packed_;
  std::vector<double> system_grad_;
  std::vector<double> grad_;
  std::vector<double> signal_;  // delivered at the start of the next cycle
  bool has_signal_ = false;
  double last_loss_ = 0.0;
  int cycle_ = 0;
  std::function<void(int, Mechanism&)> before_cycle_;
};

/// Payment of `agent` recorded in `trace`. Throws UnknownAgent.
double payment_for_cycle(const CycleTrace& trace, NodeId agent);

enum class SignalKind { Global, System };

/// Rewrites a signal in place before it is integrated; used for negative controls.
using IncentiveFilter = std::function<void(NodeId, std::span<double>)>;

/// Composite trapezoid of G_i . dx along the straight path from -> to, other
/// actions held at the mechanism's current state.
double externality_integral(Mechanism& mechanism, NodeId agent, const Vector& from, const Vector& to,
                            int steps, SignalKind kind = SignalKind::Global,
                            const IncentiveFilter& filter = {});
/// Same along a polyline through `waypoints`, `steps` per leg.
double path_integral(Mechanism& mechanism, NodeId agent, std::span<const Vector> waypoints, int steps,
                     SignalKind kind = SignalKind::Global, const IncentiveFilter& filter = {});

struct VcgAuditOptions {
  int steps = 1000;
  double radius = 1.0;  // argmax search box around the optimum
  double argmax_tolerance = 1e-5;
  double residual_tolerance = 1e-6;
  int segments = 3;  // random segments per agent for the residual check
  IncentiveFilter corrupt;
};

struct VcgAgentAudit {
  NodeId node;
  Vector optimum;
  Vector argmax;
  double argmax_error = 0.0;
  double residual = 0.0;       // max |integral G - (L(a) - L(b))|
  double path_residual = 0.0;  // |straight - detour|
};

struct VcgAuditReport {
  bool converged = false;
  std::vector<VcgAgentAudit> agents;
  double max_argmax_error = 0.0;
  double max_residual = 0.0;
  double max_path_residual = 0.0;
  bool passed = false;
};

/// Runs the mechanism to convergence, then checks per agent that the
/// unilateral argmax of (integrated system incentive - own cost) sits at the
/// converged coordinate and that integrated G_i matches the loss difference.
VcgAuditReport vcg_equivalence_audit(Graph graph, std::vector<AgentState> agents, PlannerConfig config,
                                     std::uint64_t seed, const VcgAuditOptions& options = {});
/// Audit of an already constructed mechanism.
VcgAuditReport vcg_equivalence_audit(Mechanism& mechanism, std::uint64_t seed,
                                     const VcgAuditOptions& options = {});

}  // namespace mbi
