#include "mbi/agent.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>
#include <stdexcept>

#include "mbi/error.hpp"

namespace mbi {

namespace {

struct CostRegistry {
  std::mutex mutex;
  // std::map nodes are stable, so CostSpec can keep a raw pointer.
  std::map<std::string, NamedCost, std::less<>> costs;

  CostRegistry() {
    costs["log_cosh"] = NamedCost{
        [](std::span<const double> x, double lambda, std::span<const double>) {
          double s = 0.0;
          for (double v : x) {
            double a = std::abs(v);
            s += a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
          }
          return lambda * s;
        },
        [](std::span<const double> x, double lambda, std::span<const double>, std::span<double> g) {
          for (std::size_t k = 0; k < x.size(); ++k) g[k] += lambda * std::tanh(x[k]);
        }};
    costs["quartic"] = NamedCost{
        [](std::span<const double> x, double lambda, std::span<const double> p) {
          const double mu = p.empty() ? 1.0 : p[0];
          double s = 0.0;
          for (double v : x) s += lambda * v * v + mu * v * v * v * v;
          return s;
        },
        [](std::span<const double> x, double lambda, std::span<const double> p, std::span<double> g) {
          const double mu = p.empty() ? 1.0 : p[0];
          for (std::size_t k = 0; k < x.size(); ++k) {
            g[k] += 2.0 * lambda * x[k] + 4.0 * mu * x[k] * x[k] * x[k];
          }
        }};
  }
};

CostRegistry& cost_registry() {
  static CostRegistry registry;
  return registry;
}

void require_positive_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::NonPositiveLambda, "cost coefficient must be positive, got " + std::to_string(lambda));
  }
}

double clamp(double v, ActionBounds b) { return std::clamp(v, b.lower, b.upper); }

}  // namespace

void register_cost(std::string id, NamedCost cost) {
  auto& reg = cost_registry();
  std::lock_guard lock(reg.mutex);
  reg.costs.insert_or_assign(std::move(id), std::move(cost));
}

bool has_cost(std::string_view id) {
  auto& reg = cost_registry();
  std::lock_guard lock(reg.mutex);
  return reg.costs.find(id) != reg.costs.end();
}

// ----------------------------------------------------------------- CostSpec

CostSpec CostSpec::quadratic(double lambda) {
  require_positive_lambda(lambda);
  CostSpec c;
  c.kind_ = Kind::Quadratic;
  c.lambda_ = lambda;
  return c;
}

CostSpec CostSpec::shifted_quadratic(double lambda, Vector center) {
  require_positive_lambda(lambda);
  CostSpec c;
  c.kind_ = Kind::ShiftedQuadratic;
  c.lambda_ = lambda;
  c.center_ = std::move(center);
  return c;
}

CostSpec CostSpec::named(std::string id, double lambda, std::vector<double> params) {
  require_positive_lambda(lambda);
  auto& reg = cost_registry();
  std::lock_guard lock(reg.mutex);
  auto it = reg.costs.find(id);
  if (it == reg.costs.end()) throw Error(ErrorCode::UnknownFunction, "no cost family named '" + id + "'");
  CostSpec c;
  c.kind_ = Kind::Named;
  c.lambda_ = lambda;
  c.name_ = std::move(id);
  c.params_ = std::move(params);
  c.named_ = &it->second;
  return c;
}

CostSpec CostSpec::with_lambda(double lambda) const {
  require_positive_lambda(lambda);
  CostSpec c = *this;
  c.lambda_ = lambda;
  return c;
}

double CostSpec::value(std::span<const double> x) const {
  switch (kind_) {
    case Kind::Quadratic: {
      double s = 0.0;
      for (double v : x) s += v * v;
      return lambda_ * s;
    }
    case Kind::ShiftedQuadratic: {
      if (center_.dim() != x.size()) throw Error(ErrorCode::ShapeMismatch, "cost center dim");
      double s = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - center_[k];
        s += d * d;
      }
      return lambda_ * s;
    }
    case Kind::Named:
      return named_->value(x, lambda_, params_);
  }
  return 0.0;
}

void CostSpec::add_gradient(std::span<const double> x, std::span<double> grad) const {
  switch (kind_) {
    case Kind::Quadratic:
      for (std::size_t k = 0; k < x.size(); ++k) grad[k] += 2.0 * lambda_ * x[k];
      break;
    case Kind::ShiftedQuadratic:
      if (center_.dim() != x.size()) throw Error(ErrorCode::ShapeMismatch, "cost center dim");
      for (std::size_t k = 0; k < x.size(); ++k) grad[k] += 2.0 * lambda_ * (x[k] - center_[k]);
      break;
    case Kind::Named:
      named_->gradient(x, lambda_, params_, grad);
      break;
  }
}

Vector CostSpec::gradient(const Vector& x) const {
  Vector g(x.dim(), 0.0);
  add_gradient(x.span(), g.span());
  return g;
}

std::optional<Vector> CostSpec::exact_best_response(const Vector& price) const {
  // price = 2 lambda (x - c)
  switch (kind_) {
    case Kind::Quadratic:
      return price * (1.0 / (2.0 * lambda_));
    case Kind::ShiftedQuadratic:
      return center_ + price * (1.0 / (2.0 * lambda_));
    case Kind::Named:
      return std::nullopt;
  }
  return std::nullopt;
}

bool cost_looks_convex(const CostSpec& cost, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<double> a(dim), b(dim), m(dim);
  for (int trial = 0; trial < 256; ++trial) {
    for (std::size_t k = 0; k < dim; ++k) {
      a[k] = u(rng);
      b[k] = u(rng);
      m[k] = 0.5 * (a[k] + b[k]);
    }
    const double fa = cost.value(a);
    const double fb = cost.value(b);
    const double tol = 1e-9 * (1.0 + std::abs(fa) + std::abs(fb));
    if (cost.value(m) > 0.5 * (fa + fb) + tol) return false;
  }
  return true;
}

// -------------------------------------------------------------- EffortModel

EffortModel EffortModel::linear(double rho) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw std::invalid_argument("effort rate must be >= 0");
  EffortModel m;
  m.rho_ = rho;
  return m;
}

EffortModel EffortModel::custom(double rho, std::function<double(double)> kappa) {
  EffortModel m = linear(rho);
  if (kappa(0.0) != 0.0) throw std::invalid_argument("effort cost must vanish at T = 0");
  double prev = 0.0;
  for (int t = 1; t <= 64; ++t) {
    const double v = kappa(t);
    if (v < prev) throw std::invalid_argument("effort cost must be non-decreasing");
    prev = v;
  }
  m.kappa_ = std::move(kappa);
  return m;
}

double EffortModel::kappa(double effort) const { return kappa_ ? kappa_(effort) : rho_ * effort; }

// ---------------------------------------------------------------- AgentState

std::optional<CostSpec> AgentState::planner_cost() const {
  if (!cost) return std::nullopt;
  return cost->with_lambda(planner_lambda());
}

// ---------------------------------------------------------------- strategies

void gradient_follower_update(std::span<double> action, std::span<const double> incentive,
                              double eta, ActionBounds bounds) {
  for (std::size_t k = 0; k < action.size(); ++k) {
    const double next = clamp(action[k] + eta * incentive[k], bounds);
    if (!std::isfinite(next)) throw Error(ErrorCode::NonFiniteAction, "gradient step left the reals");
    action[k] = next;
  }
}

StepResult gradient_follower_step(const AgentState& state, const IncentiveSignal& signal) {
  const auto* gf = std::get_if<GradientFollower>(&state.strategy);
  if (!gf) throw std::logic_error("agent is not a gradient follower");
  if (!(gf->eta > 0.0)) throw std::invalid_argument("step size must be positive");
  if (signal.grad.dim() != state.action.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "incentive dim differs from action dim");
  }
  if (!signal.grad.all_finite()) throw Error(ErrorCode::NonFiniteAction, "non-finite incentive");
  Vector next = state.action;
  gradient_follower_update(next.span(), signal.grad.span(), gf->eta, state.bounds);
  return {std::move(next), 1};
}

bool satisficing_stop(double marginal_gain, const EffortModel& effort_model, int effort) {
  return marginal_gain <= effort_model.marginal(effort);
}

StepResult best_response(const AgentState& state, const Vector& price, const EffortModel& budget) {
  if (!state.cost) {
    throw Error(ErrorCode::MissingCost, "best response needs a cost for agent " + to_string(state.node));
  }
  const CostSpec& cost = *state.cost;
  const auto* br = std::get_if<BestResponse>(&state.strategy);
  const BestResponse params = br ? *br : BestResponse{};
  if (price.dim() != state.action.dim()) throw Error(ErrorCode::ShapeMismatch, "price dim");
  if (cost.kind() == CostSpec::Kind::Named && !cost_looks_convex(cost, state.action.dim())) {
    throw Error(ErrorCode::NonConvexCost, "cost '" + cost.name() + "' failed the convexity probe");
  }

  if (budget.is_free()) {
    if (auto exact = cost.exact_best_response(price)) {
      for (double& v : exact->span()) v = clamp(v, state.bounds);
      return {std::move(*exact), params.max_effort};
    }
  }

  auto utility = [&](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += price[k] * x[k];
    return s - cost.value(x);
  };

  Vector x = state.action;
  for (double& v : x.span()) v = clamp(v, state.bounds);
  Vector candidate(x.dim(), 0.0);
  Vector grad(x.dim(), 0.0);
  double current = utility(x.span());
  int effort = 0;
  while (effort < params.max_effort) {
    std::fill(grad.span().begin(), grad.span().end(), 0.0);
    cost.add_gradient(x.span(), grad.span());
    for (std::size_t k = 0; k < x.dim(); ++k) {
      candidate[k] = clamp(x[k] + params.inner_eta * (price[k] - grad[k]), state.bounds);
    }
    const double next = utility(candidate.span());
    if (!std::isfinite(next)) throw Error(ErrorCode::NonFiniteAction, "inner search diverged");
    if (satisficing_stop(next - current, budget, effort)) break;
    std::swap(x, candidate);
    current = next;
    ++effort;
  }
  return {std::move(x), effort};
}

double agent_utility(const AgentState& state, double payment, int effort) {
  return payment - state.effort.kappa(effort);
}

}  // namespace mbi
