#include "mbi/bayes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "mbi/error.hpp"
#include "mbi/format.hpp"
#include "mbi/oracle.hpp"

namespace mbi {

// ---------------------------------------------------------------- TypePrior

TypePrior TypePrior::uniform(double lo, double hi) {
  if (!(lo > 0.0) || !(lo < hi) || !std::isfinite(hi)) {
    throw Error(ErrorCode::InvalidPrior, "uniform prior needs 0 < lo < hi");
  }
  TypePrior p;
  p.kind_ = Kind::Uniform;
  p.lo_ = lo;
  p.hi_ = hi;
  return p;
}

TypePrior TypePrior::discrete(std::vector<double> values, std::vector<double> probabilities) {
  if (values.empty() || values.size() != probabilities.size()) {
    throw Error(ErrorCode::InvalidPrior, "discrete prior needs one probability per value");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!(values[k] > 0.0) || !std::isfinite(values[k])) throw Error(ErrorCode::InvalidPrior, "types must be positive");
    if (!(probabilities[k] >= 0.0)) throw Error(ErrorCode::InvalidPrior, "probabilities must be >= 0");
    total += probabilities[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::InvalidPrior, "probabilities must sum to 1");
  TypePrior p;
  p.kind_ = Kind::Discrete;
  p.values_ = std::move(values);
  p.probabilities_ = std::move(probabilities);
  return p;
}

TypePrior TypePrior::degenerate(double value) { return discrete({value}, {1.0}); }

namespace {

double parse_number(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::InvalidPrior, "not a number: '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

TypePrior TypePrior::parse(std::string_view text) {
  const std::size_t colon = text.find(':');
  if (colon == std::string_view::npos) throw Error(ErrorCode::InvalidPrior, "prior spec needs 'kind:args'");
  const std::string_view kind = text.substr(0, colon);
  const auto args = split(text.substr(colon + 1), ',');
  if (kind == "uniform") {
    if (args.size() != 2) throw Error(ErrorCode::InvalidPrior, "uniform takes lo,hi");
    return uniform(parse_number(args[0]), parse_number(args[1]));
  }
  if (kind == "point") {
    if (args.size() != 1) throw Error(ErrorCode::InvalidPrior, "point takes one value");
    return degenerate(parse_number(args[0]));
  }
  if (kind == "discrete") {
    std::vector<double> values, probs;
    for (auto item : args) {
      const auto parts = split(item, '@');
      if (parts.size() != 2) throw Error(ErrorCode::InvalidPrior, "discrete items are value@probability");
      values.push_back(parse_number(parts[0]));
      probs.push_back(parse_number(parts[1]));
    }
    return discrete(std::move(values), std::move(probs));
  }
  throw Error(ErrorCode::InvalidPrior, "unknown prior kind '" + std::string(kind) + "'");
}

double TypePrior::mean() const {
  if (kind_ == Kind::Uniform) return 0.5 * (lo_ + hi_);
  double m = 0.0;
  for (std::size_t k = 0; k < values_.size(); ++k) m += values_[k] * probabilities_[k];
  return m;
}

double TypePrior::min() const {
  return kind_ == Kind::Uniform ? lo_ : *std::min_element(values_.begin(), values_.end());
}

double TypePrior::max() const {
  return kind_ == Kind::Uniform ? hi_ : *std::max_element(values_.begin(), values_.end());
}

double TypePrior::sample(std::mt19937_64& rng) const {
  if (kind_ == Kind::Uniform) return std::uniform_real_distribution<double>(lo_, hi_)(rng);
  if (values_.size() == 1) return values_[0];
  std::discrete_distribution<std::size_t> pick(probabilities_.begin(), probabilities_.end());
  return values_[pick(rng)];
}

std::string TypePrior::describe() const {
  if (kind_ == Kind::Uniform) return "uniform:" + format_real(lo_) + "," + format_real(hi_);
  if (values_.size() == 1) return "point:" + format_real(values_[0]);
  std::string out = "discrete:";
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (k) out += ",";
    out += format_real(values_[k]) + "@" + format_real(probabilities_[k]);
  }
  return out;
}

double expected_lambda(const TypePrior& prior) { return prior.mean(); }

// ------------------------------------------------------------------ signals

std::map<NodeId, IncentiveSignal> bmbi_incentive(const Graph& graph, std::vector<AgentState> agents,
                                                 const std::map<NodeId, TypePrior>& beliefs) {
  for (auto& a : agents) {
    auto it = beliefs.find(a.node);
    if (it == beliefs.end()) continue;
    if (!a.cost) throw Error(ErrorCode::MissingCost, "belief given for agent " + to_string(a.node) + " without a cost");
    a.reported_lambda = it->second.mean();
  }
  Mechanism mechanism(graph, std::move(agents));
  return mechanism.incentives_at(mechanism.actions());
}

// ------------------------------------------------------------------ economy

TypeEconomy TypeEconomy::quadratic(std::size_t agents, double y_star) {
  TypeEconomy e;
  e.agents = agents;
  e.allocate = [y_star](std::span<const double> lambdas) {
    const Vector x = quadratic_kkt_solution(lambdas, y_star);
    return x.values();
  };
  e.system_loss = [y_star](std::span<const double> x) {
    const double gap = std::accumulate(x.begin(), x.end(), 0.0) - y_star;
    return gap * gap;
  };
  return e;
}

namespace {

// Opponent profiles, one row per sample; column `agent` is overwritten per use.
std::vector<std::vector<double>> draw_profiles(const TypeEconomy& economy, const TypePrior& prior, int samples,
                                               std::uint64_t seed) {
  if (samples < 1) throw Error(ErrorCode::InvalidConfig, "Monte-Carlo sample count must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(samples), std::vector<double>(economy.agents));
  for (auto& row : rows) {
    for (double& v : row) v = prior.sample(rng);
  }
  return rows;
}

void check_economy(const TypeEconomy& economy, std::size_t agent) {
  if (agent >= economy.agents) throw Error(ErrorCode::UnknownAgent, "agent index out of range");
  if (!economy.allocate || !economy.system_loss) throw Error(ErrorCode::InvalidConfig, "economy is incomplete");
}

double exposure_at(const TypeEconomy& economy, std::size_t agent, double report,
                   std::vector<std::vector<double>>& profiles) {
  double acc = 0.0;
  for (auto& row : profiles) {
    row[agent] = report;
    const auto x = economy.allocate(row);
    acc += x[agent] * x[agent];
  }
  return acc / static_cast<double>(profiles.size());
}

TransferSchedule schedule_on(const TypeEconomy& economy, std::size_t agent, std::span<const double> grid,
                             std::vector<std::vector<double>>& profiles) {
  TransferSchedule s;
  s.grid.assign(grid.begin(), grid.end());
  for (std::size_t k = 1; k < s.grid.size(); ++k) {
    if (!(s.grid[k] > s.grid[k - 1])) throw Error(ErrorCode::InvalidConfig, "type grid must be strictly ascending");
  }
  for (double g : s.grid) s.exposure.push_back(exposure_at(economy, agent, g, profiles));
  for (std::size_t k = 1; k < s.exposure.size(); ++k) {
    if (s.exposure[k] > s.exposure[k - 1] * (1.0 + 1e-12)) {
      throw Error(ErrorCode::SCCViolation, "allocation rises with the cost type near lambda = " + format_real(s.grid[k]));
    }
  }
  s.transfers.assign(s.grid.size(), 0.0);
  for (std::size_t k = 1; k < s.grid.size(); ++k) {
    const double h = s.grid[k] - s.grid[k - 1];
    s.transfers[k] = s.transfers[k - 1] - 0.5 * h * (s.exposure[k] + s.exposure[k - 1]);
  }
  return s;
}

}  // namespace

TransferSchedule myerson_transfer_schedule(const TypeEconomy& economy, std::size_t agent, const TypePrior& prior,
                                           std::span<const double> grid, int mc_samples, std::uint64_t seed) {
  check_economy(economy, agent);
  if (grid.empty()) throw Error(ErrorCode::InvalidConfig, "type grid is empty");
  auto profiles = draw_profiles(economy, prior, mc_samples, seed);
  return schedule_on(economy, agent, grid, profiles);
}

TransferSchedule myerson_transfer_schedule(const TypeEconomy& economy, std::size_t agent, const TypePrior& prior,
                                           int grid_size, int mc_samples, std::uint64_t seed) {
  if (prior.is_degenerate()) {
    const double v = prior.min();
    return myerson_transfer_schedule(economy, agent, prior, std::span<const double>(&v, 1), mc_samples, seed);
  }
  if (grid_size < 8) throw Error(ErrorCode::InvalidConfig, "transfer schedule needs at least 8 grid points");
  std::vector<double> grid(static_cast<std::size_t>(grid_size));
  const double lo = prior.min(), hi = prior.max();
  for (int k = 0; k < grid_size; ++k) grid[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (grid_size - 1);
  grid.back() = hi;
  return myerson_transfer_schedule(economy, agent, prior, grid, mc_samples, seed);
}

// -------------------------------------------------------------------- audit

std::string_view to_string(BicVerdict verdict) noexcept {
  switch (verdict) {
    case BicVerdict::Truthful: return "truthful";
    case BicVerdict::Violation: return "violation";
    case BicVerdict::NonInformative: return "non-informative";
  }
  return "?";
}

BicAudit bic_audit(const TypeEconomy& economy, std::size_t agent, const TypePrior& prior, double truth,
                   std::span<const double> report_grid, int mc_samples, std::uint64_t seed, BicVariant variant) {
  check_economy(economy, agent);
  if (mc_samples < 1000) throw Error(ErrorCode::InvalidConfig, "audit needs at least 1000 Monte-Carlo samples");
  if (report_grid.empty()) throw Error(ErrorCode::InvalidConfig, "report grid is empty");
  for (std::size_t k = 1; k < report_grid.size(); ++k) {
    if (!(report_grid[k] > report_grid[k - 1])) throw Error(ErrorCode::InvalidConfig, "report grid must ascend");
  }
  std::size_t truth_index = report_grid.size();
  for (std::size_t k = 0; k < report_grid.size(); ++k) {
    if (std::abs(report_grid[k] - truth) <= 1e-12 * (1.0 + std::abs(truth))) truth_index = k;
  }
  if (truth_index == report_grid.size()) throw Error(ErrorCode::InvalidConfig, "report grid must contain the truth");

  auto profiles = draw_profiles(economy, prior, mc_samples, seed);
  BicAudit audit;
  audit.truth = truth;

  if (variant == BicVariant::MyersonSchedule) {
    std::vector<double> grid(report_grid.begin(), report_grid.end());
    const double anchor = prior.min();
    if (anchor < grid.front()) grid.insert(grid.begin(), anchor);
    const TransferSchedule s = schedule_on(economy, agent, grid, profiles);
    const std::size_t shift = grid.size() - report_grid.size();
    for (std::size_t k = 0; k < report_grid.size(); ++k) {
      const double r = report_grid[k];
      audit.rows.push_back({r, s.transfers[k + shift] + (r - truth) * s.exposure[k + shift]});
    }
  } else {
    for (double r : report_grid) {
      const double used = variant == BicVariant::IgnoreReports ? prior.mean() : r;
      double acc = 0.0;
      for (auto& row : profiles) {
        row[agent] = used;
        const auto x = economy.allocate(row);
        double others = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
          if (j != agent) others += row[j] * x[j] * x[j];
        }
        acc += -(economy.system_loss(x) + others) - truth * x[agent] * x[agent];
      }
      audit.rows.push_back({r, acc / static_cast<double>(profiles.size())});
    }
  }

  double lo = audit.rows[0].expected_utility, hi = lo;
  for (std::size_t k = 0; k < audit.rows.size(); ++k) {
    const double u = audit.rows[k].expected_utility;
    if (u > audit.rows[audit.argmax].expected_utility) audit.argmax = k;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  const std::size_t gap = audit.argmax > truth_index ? audit.argmax - truth_index : truth_index - audit.argmax;
  audit.argmax_within_one_step = gap <= 1;
  if (audit.rows.size() > 1 && hi - lo <= 1e-12 * (1.0 + std::abs(hi))) {
    audit.verdict = BicVerdict::NonInformative;
  } else {
    audit.verdict = audit.argmax_within_one_step ? BicVerdict::Truthful : BicVerdict::Violation;
  }
  return audit;
}

// ------------------------------------------------------------- experiments

AsymmetricInfoReport asymmetric_info_experiment(const Graph& graph, const std::vector<AgentState>& agents,
                                                const PlannerConfig& config, const TypePrior& prior,
                                                double misspecified_lambda, std::span<const std::uint64_t> seeds) {
  AsymmetricInfoReport report;
  if (seeds.empty()) return report;
  for (std::uint64_t seed : seeds) {
    std::mt19937_64 rng(seed);
    std::vector<AgentState> truth = agents;
    for (auto& a : truth) {
      if (!a.cost) continue;
      a.cost = a.cost->with_lambda(prior.sample(rng));
      a.reported_lambda.reset();
    }
    auto run = [&](std::optional<double> belief) {
      std::vector<AgentState> states = truth;
      for (auto& a : states) {
        if (a.cost) a.reported_lambda = belief;
      }
      Mechanism m(graph, std::move(states), config, {}, seed);
      m.run_until_convergence();
      return m.true_loss();
    };
    report.full_information.push_back(run(std::nullopt));
    report.misspecified.push_back(run(misspecified_lambda));
    report.expected_type.push_back(run(prior.mean()));
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  report.mean_full_information = mean(report.full_information);
  report.mean_misspecified = mean(report.misspecified);
  report.mean_expected_type = mean(report.expected_type);
  report.ordering_holds = report.mean_full_information <= report.mean_expected_type &&
                          report.mean_expected_type <= report.mean_misspecified;
  return report;
}

}  // namespace mbi
