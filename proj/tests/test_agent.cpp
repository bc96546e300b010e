#include <doctest.h>

#include <cmath>

#include "mbi/agent.hpp"
#include "mbi/error.hpp"
#include "mbi/oracle.hpp"

using namespace mbi;

namespace {

AgentState follower(double x, double eta) {
  AgentState a;
  a.node = NodeId{1};
  a.action = Vector{x};
  a.strategy = GradientFollower{eta};
  return a;
}

AgentState responder(double lambda, double start = 0.0, double inner_eta = 0.1, int max_effort = 100) {
  AgentState a;
  a.node = NodeId{1};
  a.action = Vector{start};
  a.cost = CostSpec::quadratic(lambda);
  a.strategy = BestResponse{inner_eta, max_effort};
  return a;
}

// Stopping time of a step sequence with the given per-step gains.
int realized_effort(std::span<const double> gains, const EffortModel& model) {
  int t = 0;
  for (double g : gains) {
    if (satisficing_stop(g, model, t)) break;
    ++t;
  }
  return t;
}

// argmax p x - lambda x^2 on a fine 1-D grid
double grid_best_response(double price, double lambda) {
  GridSpec grid{{{-10.0, 10.0}}, 20001};
  auto neg = [&](std::span<const double> x) { return -(price * x[0] - lambda * x[0] * x[0]); };
  return grid_search_min(neg, grid).argmin[0];
}

}  // namespace

TEST_CASE("gradient follower arithmetic") {
  auto a = follower(5.0, 0.2);
  auto step = gradient_follower_step(a, {Vector{-1.0}, 2});
  CHECK(step.action[0] == doctest::Approx(4.8).epsilon(1e-15));
  CHECK(step.effort == 1);
  CHECK(gradient_follower_step(a, {Vector{0.0}, 2}).action == a.action);
}

TEST_CASE("gradient follower respects action bounds") {
  auto a = follower(0.9, 1.0);
  a.bounds = {-1.0, 1.0};
  CHECK(gradient_follower_step(a, {Vector{5.0}, 1}).action[0] == 1.0);
  CHECK(gradient_follower_step(a, {Vector{-5.0}, 1}).action[0] == -1.0);
}

TEST_CASE("repeated toy steps reach the closed-form optimum") {
  // L = (x1 + x2 - 3)^2 + 0.5 x1^2, optimum (0, 3)
  auto a1 = follower(1.0, 0.2);
  auto a2 = follower(1.0, 0.2);
  a2.node = NodeId{2};
  for (int t = 0; t < 2000; ++t) {
    const double s = a1.action[0] + a2.action[0] - 3.0;
    const Vector g1{-(2 * s + a1.action[0])};
    const Vector g2{-(2 * s)};
    a1.action = gradient_follower_step(a1, {g1, t}).action;
    a2.action = gradient_follower_step(a2, {g2, t}).action;
  }
  CHECK(std::abs(a1.action[0]) <= 1e-6);
  CHECK(std::abs(a2.action[0] - 3.0) <= 1e-6);
}

TEST_CASE("best response examples agree with a grid search") {
  const EffortModel free = EffortModel::linear(0.0);
  struct Case {
    double price, lambda, expected;
  };
  for (Case c : {Case{2.0, 1.0, 1.0}, Case{0.0, 1.0, 0.0}, Case{4.0, 0.5, 4.0}}) {
    auto r = best_response(responder(c.lambda), Vector{c.price}, free);
    CHECK(r.action[0] == doctest::Approx(c.expected).epsilon(1e-12));
    CHECK(std::abs(grid_best_response(c.price, c.lambda) - c.expected) <= 1e-3);
  }
}

TEST_CASE("free best response satisfies the first-order condition") {
  const EffortModel free = EffortModel::linear(0.0);
  for (double lambda : {0.25, 1.0, 3.5}) {
    for (double p : {-7.0, -0.3, 0.0, 2.2, 9.0}) {
      auto a = responder(lambda, 1.0);
      auto r = best_response(a, Vector{p}, free);
      CHECK(std::abs(a.cost->gradient(r.action)[0] - p) <= 1e-9);
    }
  }
  AgentState shifted = responder(1.0);
  shifted.action = Vector{0.0, 0.0};
  shifted.cost = CostSpec::shifted_quadratic(2.0, Vector{1.0, -1.0});
  const Vector price{3.0, -0.5};
  auto r = best_response(shifted, price, free);
  auto g = shifted.cost->gradient(r.action);
  CHECK((g - price).norm() <= 1e-9);
}

TEST_CASE("costly best response stops early and still improves utility") {
  auto a = responder(1.0, 0.0, 0.1, 100);
  auto util = [&](const Vector& x) { return 2.0 * x[0] - a.cost->value(x.span()); };
  auto r = best_response(a, Vector{2.0}, EffortModel::linear(0.01));
  CHECK(r.effort > 0);
  CHECK(r.effort < 100);
  CHECK(util(r.action) > util(a.action));
  CHECK(r.action[0] < 1.0);
}

TEST_CASE("realized effort is non-increasing in rho") {
  auto a = responder(0.8, -1.0, 0.05, 400);
  int previous = 1 << 30;
  for (double rho : {0.0, 1e-4, 1e-3, 0.01, 0.1, 1.0, 10.0}) {
    const int t = best_response(a, Vector{3.0}, EffortModel::linear(rho)).effort;
    CHECK(t <= previous);
    previous = t;
  }
  CHECK(previous == 0);
}

TEST_CASE("satisficing examples") {
  const double gains[] = {1.0, 0.5, 0.2, 0.05};
  CHECK(realized_effort(gains, EffortModel::linear(0.1)) == 3);
  CHECK(realized_effort(gains, EffortModel::linear(0.0)) == 4);
  CHECK(realized_effort(gains, EffortModel::linear(10.0)) == 0);
  CHECK_FALSE(satisficing_stop(1e-300, EffortModel::linear(0.0), 1000));
  CHECK(satisficing_stop(0.0, EffortModel::linear(0.0), 0));
}

TEST_CASE("convex effort cost raises the bar step by step") {
  auto model = EffortModel::custom(0.1, [](double t) { return 0.1 * t * t; });
  CHECK(model.marginal(0) == doctest::Approx(0.1));
  CHECK(model.marginal(3) == doctest::Approx(0.7));
  const double gains[] = {1.0, 0.5, 0.4, 0.4};
  CHECK(realized_effort(gains, model) == 2);
  CHECK_THROWS(EffortModel::custom(0.1, [](double t) { return 1.0 - t; }));
  CHECK_THROWS(EffortModel::custom(0.1, [](double t) { return std::sin(t); }));
}

TEST_CASE("agent utility examples") {
  AgentState a;
  a.effort = EffortModel::linear(0.1);
  CHECK(agent_utility(a, 5.0, 10) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(agent_utility(a, 5.0, 0) == 5.0);
  a.effort = EffortModel::linear(0.2);
  CHECK(agent_utility(a, 0.5, 5) == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("cost families") {
  auto q = CostSpec::quadratic(0.5);
  CHECK(q.value(Vector{2.0, -1.0}.span()) == 2.5);
  CHECK(q.gradient(Vector{2.0, -1.0}) == Vector{2.0, -1.0});

  auto s = CostSpec::shifted_quadratic(2.0, Vector{1.0});
  CHECK(s.value(Vector{3.0}.span()) == 8.0);
  CHECK(*s.exact_best_response(Vector{4.0}) == Vector{2.0});

  auto lc = CostSpec::named("log_cosh", 2.0);
  CHECK(lc.value(Vector{0.0}.span()) == 0.0);
  CHECK(lc.gradient(Vector{0.3})[0] == doctest::Approx(2.0 * std::tanh(0.3)));
  CHECK_FALSE(lc.exact_best_response(Vector{1.0}));

  auto quartic = CostSpec::named("quartic", 1.0, {0.5});
  CHECK(quartic.value(Vector{2.0}.span()) == doctest::Approx(4.0 + 8.0));

  CHECK(q.with_lambda(3.0).lambda() == 3.0);
  for (double bad : {0.0, -1.0, double(NAN)}) {
    try {
      CostSpec::quadratic(bad);
      FAIL("expected NonPositiveLambda");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonPositiveLambda);
    }
  }
}

TEST_CASE("named best response with the inner search") {
  AgentState a = responder(1.0);
  a.cost = CostSpec::named("log_cosh", 1.0);
  a.strategy = BestResponse{0.2, 2000};
  // FOC: tanh(x) = 0.5
  auto r = best_response(a, Vector{0.5}, EffortModel::linear(0.0));
  CHECK(r.action[0] == doctest::Approx(std::atanh(0.5)).epsilon(1e-6));
}

TEST_CASE("best response error cases") {
  AgentState none = responder(1.0);
  none.cost.reset();
  try {
    best_response(none, Vector{1.0}, EffortModel{});
    FAIL("expected MissingCost");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingCost);
  }

  register_cost("test_negative_well",
                {[](std::span<const double> x, double lambda, std::span<const double>) {
                   double s = 0;
                   for (double v : x) s += -lambda * v * v;
                   return s;
                 },
                 [](std::span<const double> x, double lambda, std::span<const double>, std::span<double> g) {
                   for (std::size_t k = 0; k < x.size(); ++k) g[k] += -2 * lambda * x[k];
                 }});
  AgentState bad = responder(1.0);
  bad.cost = CostSpec::named("test_negative_well", 1.0);
  CHECK_FALSE(cost_looks_convex(*bad.cost, 1));
  try {
    best_response(bad, Vector{1.0}, EffortModel{});
    FAIL("expected NonConvexCost");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonConvexCost);
  }
}

TEST_CASE("non-finite incentives are rejected") {
  auto a = follower(1.0, 0.1);
  Vector g{0.0};
  g[0] = NAN;
  try {
    gradient_follower_step(a, {g, 1});
    FAIL("expected NonFiniteAction");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteAction);
  }
}
