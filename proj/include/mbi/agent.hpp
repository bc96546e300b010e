#pragma once

// Boundedly-rational agents: private cost type, effort model and the two
// action strategies.
//
// A gradient follower consumes the full incentive -dL_global/dx_i and moves
// x_i <- x_i + eta * G_i; its own cost is already inside L_global.
// A best responder consumes the system-only price -dL_System/dx_i and solves
// max_x price.x - C_i(x) by an inner gradient search whose length T is set by
// the satisficing rule: stop when the next step's utility gain is no larger
// than kappa(T + 1) - kappa(T).

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mbi/ddag.hpp"
#include "mbi/vector.hpp"

namespace mbi {

struct NamedCost {
  std::function<double(std::span<const double> x, double lambda, std::span<const double> params)> value;
  /// Adds the gradient at x into `grad`.
  std::function<void(std::span<const double> x, double lambda, std::span<const double> params,
                     std::span<double> grad)>
      gradient;
};

/// Registers a convex cost family. Built-ins: "log_cosh" (lambda * sum log cosh x_k)
/// and "quartic" (lambda * ||x||^2 + params[0] * sum x_k^4).
void register_cost(std::string id, NamedCost cost);
bool has_cost(std::string_view id);

class CostSpec {
 public:
  enum class Kind { Quadratic, ShiftedQuadratic, Named };

  /// lambda * ||x||^2
  static CostSpec quadratic(double lambda);
  /// lambda * ||x - center||^2
  static CostSpec shifted_quadratic(double lambda, Vector center);
  static CostSpec named(std::string id, double lambda, std::vector<double> params = {});

  Kind kind() const noexcept { return kind_; }
  double lambda() const noexcept { return lambda_; }
  const Vector& center() const noexcept { return center_; }
  const std::string& name() const noexcept { return name_; }
  std::span<const double> params() const noexcept { return params_; }

  CostSpec with_lambda(double lambda) const;

  double value(std::span<const double> x) const;
  void add_gradient(std::span<const double> x, std::span<double> grad) const;
  Vector gradient(const Vector& x) const;

  /// argmax_x price.x - C(x) in closed form, for the quadratic kinds.
  std::optional<Vector> exact_best_response(const Vector& price) const;

 private:
  CostSpec() = default;

  Kind kind_ = Kind::Quadratic;
  double lambda_ = 1.0;
  Vector center_;
  std::string name_;
  std::vector<double> params_;
  const NamedCost* named_ = nullptr;
};

/// Effort cost kappa(T). Linear kappa(T) = rho * T unless a custom increasing
/// convex function is supplied.
class EffortModel {
 public:
  EffortModel() = default;
  static EffortModel linear(double rho);
  /// `kappa` must satisfy kappa(0) = 0 and be non-decreasing; checked on T = 0..64.
  static EffortModel custom(double rho, std::function<double(double)> kappa);

  double rho() const noexcept { return rho_; }
  double kappa(double effort) const;
  double marginal(int effort) const { return kappa(effort + 1.0) - kappa(effort); }
  /// Zero effort cost: the agent never satisfices early.
  bool is_free() const noexcept { return rho_ == 0.0 && !kappa_; }

 private:
  double rho_ = 0.0;
  std::function<double(double)> kappa_;
};

struct GradientFollower {
  double eta = 0.1;
};

struct BestResponse {
  double inner_eta = 0.1;
  int max_effort = 100;
};

using Strategy = std::variant<GradientFollower, BestResponse>;

struct ActionBounds {
  double lower = -1e6;
  double upper = 1e6;
};

struct AgentState {
  NodeId node;
  Vector action;
  /// True private cost C_i. Agents without a cost term contribute nothing to
  /// L_global and cannot use the best-response strategy.
  std::optional<CostSpec> cost;
  /// lambda the agent reports to the planner; empty means truthful.
  std::optional<double> reported_lambda;
  std::map<std::string, double> private_info;
  EffortModel effort;
  Strategy strategy = GradientFollower{};
  ActionBounds bounds;

  double true_lambda() const { return cost ? cost->lambda() : 0.0; }
  double planner_lambda() const { return reported_lambda.value_or(true_lambda()); }
  /// Cost term as the planner models it (reported lambda).
  std::optional<CostSpec> planner_cost() const;
  bool is_best_responder() const { return std::holds_alternative<BestResponse>(strategy); }
};

struct IncentiveSignal {
  Vector grad;
  int cycle = 0;
};

struct StepResult {
  Vector action;
  int effort = 0;
};

/// x <- clamp(x + eta * G). Effort is one step.
StepResult gradient_follower_step(const AgentState& state, const IncentiveSignal& signal);
/// In-place form used by the mechanism's hot loop.
void gradient_follower_update(std::span<double> action, std::span<const double> incentive,
                              double eta, ActionBounds bounds);

/// Inner search for argmax price.x - C_i(x) starting from state.action.
/// With free effort the search never satisfices: the full budget max_effort
/// is spent and the exact optimum is returned when the cost has a closed form.
StepResult best_response(const AgentState& state, const Vector& price, const EffortModel& budget);

/// True iff a step with utility gain `marginal_gain` is not worth its effort:
/// marginal_gain <= kappa(T + 1) - kappa(T).
bool satisficing_stop(double marginal_gain, const EffortModel& effort_model, int effort);

/// payment - kappa(T)
double agent_utility(const AgentState& state, double payment, int effort);

/// Midpoint-convexity probe of a named cost around the origin.
bool cost_looks_convex(const CostSpec& cost, std::size_t dim, std::uint64_t seed = 7);

}  // namespace mbi
