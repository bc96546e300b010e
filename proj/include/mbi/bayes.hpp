#pragma once

// Bayesian extension: planner beliefs over scalar cost types lambda_i.
//
// The transfer schedule and the truthfulness audit work on a type economy
// with scalar actions and costs lambda_i * x_i^2, where the planner's
// allocation for a report profile is known in closed form. Opponent types
// are drawn once per call (common random numbers) and reused for every
// report or grid point.

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbi/agent.hpp"
#include "mbi/ddag.hpp"
#include "mbi/mechanism.hpp"

namespace mbi {

class TypePrior {
 public:
  enum class Kind { Uniform, Discrete };

  /// Requires 0 < lo < hi.
  static TypePrior uniform(double lo, double hi);
  /// Requires positive values and probabilities summing to 1 (within 1e-9).
  static TypePrior discrete(std::vector<double> values, std::vector<double> probabilities);
  /// Point mass, as a one-value discrete prior.
  static TypePrior degenerate(double value);
  /// "uniform:lo,hi", "point:v" or "discrete:v1@p1,v2@p2,...".
  static TypePrior parse(std::string_view text);

  Kind kind() const noexcept { return kind_; }
  double mean() const;
  double min() const;
  double max() const;
  bool is_degenerate() const noexcept { return kind_ == Kind::Discrete && values_.size() == 1; }
  double sample(std::mt19937_64& rng) const;
  std::string describe() const;

 private:
  TypePrior() = default;

  Kind kind_ = Kind::Uniform;
  double lo_ = 1.0;
  double hi_ = 2.0;
  std::vector<double> values_;
  std::vector<double> probabilities_;
};

double expected_lambda(const TypePrior& prior);

/// G_i computed on the loss with every believed agent's lambda replaced by
/// its belief mean. Agents without a belief keep their reported lambda.
std::map<NodeId, IncentiveSignal> bmbi_incentive(const Graph& graph, std::vector<AgentState> agents,
                                                 const std::map<NodeId, TypePrior>& beliefs);

/// Scalar-action economy used by the schedule and the audit.
struct TypeEconomy {
  std::size_t agents = 0;
  /// Planner's allocation for a report profile.
  std::function<std::vector<double>(std::span<const double> lambdas)> allocate;
  /// L_System at an allocation.
  std::function<double(std::span<const double> x)> system_loss;

  /// (sum x - y)^2 with costs lambda_i x_i^2; allocation from the KKT point.
  static TypeEconomy quadratic(std::size_t agents, double y_star);
};

struct TransferSchedule {
  std::vector<double> grid;       // strictly ascending types
  std::vector<double> transfers;  // interim utility G(lambda), G(grid[0]) = 0
  std::vector<double> exposure;   // E[x_i(lambda)^2] = -dG/dlambda
};

/// Trapezoid integral of -E[x_i(s)^2] from the prior minimum over a uniform
/// type grid. A degenerate prior yields the single anchor point.
/// Throws SCCViolation when the exposure increases with the type.
TransferSchedule myerson_transfer_schedule(const TypeEconomy& economy, std::size_t agent, const TypePrior& prior,
                                           int grid_size, int mc_samples, std::uint64_t seed);
/// Same on an explicit ascending grid whose first point is the anchor.
TransferSchedule myerson_transfer_schedule(const TypeEconomy& economy, std::size_t agent, const TypePrior& prior,
                                           std::span<const double> grid, int mc_samples, std::uint64_t seed);

enum class BicVariant {
  /// Transfer G(report) + report * E[x(report)^2] from the schedule.
  MyersonSchedule,
  /// Realized transfer -(L_System + sum over j != i of lambda_j x_j^2).
  Groves,
  /// Negative control: allocation and transfer ignore the report.
  IgnoreReports,
};

enum class BicVerdict { Truthful, Violation, NonInformative };

std::string_view to_string(BicVerdict verdict) noexcept;

struct BicAuditRow {
  double report = 0.0;
  double expected_utility = 0.0;
};

struct BicAudit {
  double truth = 0.0;
  std::vector<BicAuditRow> rows;
  std::size_t argmax = 0;  // index into rows, first maximum
  bool argmax_within_one_step = false;
  BicVerdict verdict = BicVerdict::NonInformative;
};

/// Expected utility of `agent` with true type `truth` for every report on the
/// ascending `report_grid`, opponents drawn from `prior`.
BicAudit bic_audit(const TypeEconomy& economy, std::size_t agent, const TypePrior& prior, double truth,
                   std::span<const double> report_grid, int mc_samples, std::uint64_t seed,
                   BicVariant variant = BicVariant::MyersonSchedule);

struct AsymmetricInfoReport {
  std::vector<double> full_information;  // per seed, true global loss at convergence
  std::vector<double> misspecified;
  std::vector<double> expected_type;
  double mean_full_information = 0.0;
  double mean_misspecified = 0.0;
  double mean_expected_type = 0.0;
  bool ordering_holds = false;  // full <= expected <= misspecified on the means
};

/// Per seed, true types are drawn from `prior` for every agent with a cost;
/// the mechanism runs three times with the planner using the truth, a fixed
/// misspecified lambda, and the prior mean. Losses use the true costs.
AsymmetricInfoReport asymmetric_info_experiment(const Graph& graph, const std::vector<AgentState>& agents,
                                                const PlannerConfig& config, const TypePrior& prior,
                                                double misspecified_lambda, std::span<const std::uint64_t> seeds);

}  // namespace mbi
