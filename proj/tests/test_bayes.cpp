#include <doctest.h>

#include <cmath>
#include <vector>

#include "mbi/bayes.hpp"
#include "mbi/error.hpp"
#include "mbi/oracle.hpp"

using namespace mbi;

namespace {

AgentState follower(std::uint32_t id, std::optional<CostSpec> cost, double eta) {
  AgentState a;
  a.node = NodeId{id};
  a.action = Vector{0.0};
  a.cost = std::move(cost);
  a.strategy = GradientFollower{eta};
  return a;
}

struct Star {
  Graph graph;
  std::vector<AgentState> agents;
};

Star star(double y, std::span<const double> lambdas, double eta) {
  GraphSpec s;
  const auto loss = static_cast<std::uint32_t>(lambdas.size() + 1);
  s.add(NodeSpec::source(0, "target", Vector{y})).add(NodeSpec::loss(loss, "L", "square_error")).connect(0, loss);
  Star out;
  for (std::uint32_t i = 1; i <= lambdas.size(); ++i) {
    s.add(NodeSpec::agent(i, "", 1)).connect(i, loss);
    out.agents.push_back(follower(i, CostSpec::quadratic(lambdas[i - 1]), eta));
  }
  out.graph = build_graph(s);
  return out;
}

Star toy(double lambda) {
  GraphSpec s;
  s.add(NodeSpec::source(0, "target", Vector{10.0}))
      .add(NodeSpec::agent(1, "A1", 1))
      .add(NodeSpec::agent(2, "A2", 1, "sum"))
      .add(NodeSpec::loss(3, "loss", "square_error"))
      .connect(1, 2)
      .connect(2, 3)
      .connect(0, 3);
  Star out{build_graph(s), {follower(1, CostSpec::quadratic(lambda), 0.2), follower(2, std::nullopt, 0.2)}};
  out.agents[0].action = Vector{1.0};
  out.agents[1].action = Vector{3.0};
  return out;
}

std::vector<double> uniform_grid(double lo, double hi, int n) {
  std::vector<double> g(n);
  for (int k = 0; k < n; ++k) g[k] = lo + (hi - lo) * k / (n - 1);
  g.back() = hi;
  return g;
}

PlannerConfig tight() {
  PlannerConfig c;
  c.epsilon = 1e-12;
  c.tau = 1e-8;
  c.max_cycles = 20000;
  return c;
}

}  // namespace

TEST_CASE("expected lambda examples") {
  CHECK(expected_lambda(TypePrior::uniform(1, 3)) == 2.0);
  CHECK(expected_lambda(TypePrior::discrete({1, 3}, {0.5, 0.5})) == 2.0);
  CHECK(expected_lambda(TypePrior::degenerate(2)) == 2.0);
  CHECK(expected_lambda(TypePrior::parse("discrete:1@0.25,5@0.75")) == 4.0);
}

TEST_CASE("prior parsing and validation") {
  CHECK(TypePrior::parse("uniform:1,2").describe() == "uniform:1,2");
  CHECK(TypePrior::parse("point:0.5").is_degenerate());
  CHECK(TypePrior::parse("discrete:1@0.5,3@0.5").describe() == "discrete:1@0.5,3@0.5");
  for (const char* bad : {"uniform:2,1", "uniform:0,1", "point:-1", "discrete:1@0.5,2@0.4", "normal:0,1", "uniform:1",
                          "uniform:a,b", "nothing"}) {
    CAPTURE(bad);
    try {
      TypePrior::parse(bad);
      FAIL("expected InvalidPrior");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidPrior);
    }
  }
}

TEST_CASE("prior samples stay in support and average to the mean") {
  std::mt19937_64 rng(3);
  auto u = TypePrior::uniform(0.5, 1.5);
  double acc = 0.0;
  for (int k = 0; k < 40000; ++k) {
    const double v = u.sample(rng);
    CHECK((v >= 0.5 && v <= 1.5));
    acc += v;
  }
  // standard error is (1 / sqrt 12) / 200
  CHECK(std::abs(acc / 40000 - 1.0) <= 5 * 0.2887 / 200);
}

TEST_CASE("point-mass beliefs reproduce the full-information signals") {
  const double lambdas[] = {0.5, 1.0, 2.5};
  auto s = star(10.0, lambdas, 0.05);
  for (auto& a : s.agents) a.action = Vector{0.7 * a.node.value};
  Mechanism full(s.graph, s.agents);
  auto exact = full.incentives_at(full.actions());
  std::map<NodeId, TypePrior> beliefs;
  for (std::uint32_t i = 1; i <= 3; ++i) beliefs.emplace(NodeId{i}, TypePrior::degenerate(lambdas[i - 1]));
  auto bmbi = bmbi_incentive(s.graph, s.agents, beliefs);
  for (const auto& [node, sig] : exact) CHECK(std::abs(bmbi.at(node).grad[0] - sig.grad[0]) <= 1e-12);
}

TEST_CASE("a belief centred on the truth matches full information") {
  auto t = toy(0.5);
  Mechanism full(t.graph, t.agents);
  auto exact = full.incentives_at(full.actions());
  auto bmbi = bmbi_incentive(t.graph, t.agents, {{NodeId{1}, TypePrior::uniform(0.25, 0.75)}});
  CHECK(bmbi.at(NodeId{1}).grad[0] == exact.at(NodeId{1}).grad[0]);
  CHECK(bmbi.at(NodeId{2}).grad[0] == exact.at(NodeId{2}).grad[0]);
}

TEST_CASE("an overestimated type raises the converged true loss") {
  const double lambdas[] = {0.5, 0.5, 0.5};
  auto s = star(10.0, lambdas, 0.05);
  Mechanism full(s.graph, s.agents, tight());
  full.run_until_convergence();
  auto believed = s.agents;
  believed[0].reported_lambda = expected_lambda(TypePrior::uniform(0.5, 1.5));
  Mechanism skewed(s.graph, believed, tight());
  skewed.run_until_convergence();
  CHECK(skewed.true_loss() > full.true_loss());

  // the closed-form optimum of the true loss is what full information finds
  const Vector kkt = quadratic_kkt_solution(lambdas, 10.0);
  const double s_gap = kkt.sum() - 10.0;
  CHECK(std::abs(full.true_loss() - (s_gap * s_gap + 0.5 * kkt.squared_norm())) <= 1e-9);
}

TEST_CASE("transfer schedule on the quadratic family") {
  auto economy = TypeEconomy::quadratic(5, 10.0);
  auto prior = TypePrior::uniform(1.0, 2.0);
  auto s = myerson_transfer_schedule(economy, 0, prior, 17, 4000, 9);
  REQUIRE(s.grid.size() == 17);
  CHECK(s.grid.front() == 1.0);
  CHECK(s.grid.back() == 2.0);
  CHECK(s.transfers.front() == 0.0);
  for (std::size_t k = 1; k < s.grid.size(); ++k) {
    CHECK(s.exposure[k] < s.exposure[k - 1]);
    CHECK(s.transfers[k] <= s.transfers[k - 1]);
  }

  // allocation per profile is decreasing in the own type
  const std::vector<double> others{1.3, 1.7, 1.1, 1.9};
  double previous = INFINITY;
  for (double lambda : s.grid) {
    std::vector<double> profile{lambda};
    profile.insert(profile.end(), others.begin(), others.end());
    const double x = economy.allocate(profile)[0];
    CHECK(x < previous);
    previous = x;
  }
}

TEST_CASE("degenerate prior collapses the schedule to its anchor") {
  auto economy = TypeEconomy::quadratic(3, 10.0);
  auto s = myerson_transfer_schedule(economy, 1, TypePrior::degenerate(1.5), 17, 1000, 2);
  REQUIRE(s.grid.size() == 1);
  CHECK(s.grid[0] == 1.5);
  CHECK(s.transfers[0] == 0.0);
  // profile is fixed, so the exposure is the squared KKT allocation
  const double lambdas[] = {1.5, 1.5, 1.5};
  const double x = quadratic_kkt_solution(lambdas, 10.0)[1];
  CHECK(s.exposure[0] == doctest::Approx(x * x).epsilon(1e-14));
}

TEST_CASE("schedule rejects allocations that rise with cost") {
  TypeEconomy perverse;
  perverse.agents = 2;
  perverse.allocate = [](std::span<const double> l) { return std::vector<double>{l[0], l[1]}; };
  perverse.system_loss = [](std::span<const double>) { return 0.0; };
  try {
    myerson_transfer_schedule(perverse, 0, TypePrior::uniform(1, 2), 9, 1000, 1);
    FAIL("expected SCCViolation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SCCViolation);
  }
  CHECK_THROWS_AS(myerson_transfer_schedule(TypeEconomy::quadratic(2, 1.0), 0, TypePrior::uniform(1, 2), 4, 1000, 1),
                  Error);
}

TEST_CASE("BIC audit finds truth-telling optimal") {
  auto economy = TypeEconomy::quadratic(5, 10.0);
  auto prior = TypePrior::uniform(1.0, 2.0);
  const auto grid = uniform_grid(1.0, 2.0, 17);
  auto audit = bic_audit(economy, 0, prior, grid[8], grid, 10000, 42);
  CHECK(audit.truth == 1.5);
  CHECK(audit.argmax_within_one_step);
  CHECK(audit.verdict == BicVerdict::Truthful);
  CHECK(to_string(audit.verdict) == "truthful");
  REQUIRE(audit.rows.size() == 17);

  auto groves = bic_audit(economy, 0, prior, grid[8], grid, 10000, 42, BicVariant::Groves);
  CHECK(groves.argmax == 8);
  CHECK(groves.verdict == BicVerdict::Truthful);
}

TEST_CASE("BIC audit under a point-mass prior") {
  auto economy = TypeEconomy::quadratic(3, 10.0);
  const auto grid = uniform_grid(1.0, 2.0, 17);
  for (auto variant : {BicVariant::MyersonSchedule, BicVariant::Groves}) {
    auto audit = bic_audit(economy, 2, TypePrior::degenerate(1.5), 1.5, grid, 1000, 1, variant);
    CHECK(audit.argmax == 8);
  }
}

TEST_CASE("BIC audit negative controls") {
  auto economy = TypeEconomy::quadratic(5, 10.0);
  auto prior = TypePrior::uniform(1.0, 2.0);
  const auto grid = uniform_grid(1.0, 2.0, 17);

  auto ignored = bic_audit(economy, 0, prior, grid[8], grid, 10000, 42, BicVariant::IgnoreReports);
  CHECK(ignored.verdict == BicVerdict::NonInformative);
  CHECK(to_string(ignored.verdict) == "non-informative");
  for (const auto& row : ignored.rows) CHECK(row.expected_utility == ignored.rows[0].expected_utility);

  // the planner halves agent 0's report, so doubling the type pays
  TypeEconomy halving = economy;
  halving.allocate = [base = economy.allocate](std::span<const double> l) {
    std::vector<double> half(l.begin(), l.end());
    half[0] *= 0.5;
    return base(half);
  };
  const auto wide = uniform_grid(0.5, 2.5, 17);
  auto cheat = bic_audit(halving, 0, prior, 1.0, wide, 10000, 42, BicVariant::Groves);
  CHECK(cheat.verdict == BicVerdict::Violation);
  CHECK(cheat.rows[cheat.argmax].report == doctest::Approx(2.0));
}

TEST_CASE("audit input validation") {
  auto economy = TypeEconomy::quadratic(2, 10.0);
  auto prior = TypePrior::uniform(1.0, 2.0);
  const auto grid = uniform_grid(1.0, 2.0, 17);
  CHECK_THROWS_AS(bic_audit(economy, 0, prior, 1.5, grid, 999, 1), Error);
  CHECK_THROWS_AS(bic_audit(economy, 0, prior, 1.51, grid, 1000, 1), Error);
  CHECK_THROWS_AS(bic_audit(economy, 5, prior, 1.5, grid, 1000, 1), Error);
}

TEST_CASE("asymmetric information ordering") {
  const double lambdas[] = {1.0, 1.0, 1.0, 1.0, 1.0};
  auto s = star(10.0, lambdas, 0.05);
  std::vector<std::uint64_t> seeds(20);
  for (std::size_t k = 0; k < seeds.size(); ++k) seeds[k] = 100 + k;
  auto r = asymmetric_info_experiment(s.graph, s.agents, tight(), TypePrior::uniform(0.5, 1.5), 0.5, seeds);
  CHECK(r.full_information.size() == 20);
  CHECK(r.ordering_holds);
  CHECK(r.mean_full_information <= r.mean_expected_type);
  CHECK(r.mean_expected_type <= r.mean_misspecified);
  for (std::size_t k = 0; k < 20; ++k) CHECK(r.full_information[k] <= r.expected_type[k] + 1e-9);
}

TEST_CASE("point-mass prior equalises the three planners") {
  const double lambdas[] = {1.0, 1.0, 1.0};
  auto s = star(10.0, lambdas, 0.05);
  const std::uint64_t seeds[] = {1, 2, 3};
  auto r = asymmetric_info_experiment(s.graph, s.agents, tight(), TypePrior::degenerate(0.8), 0.8, seeds);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(r.full_information[k] == r.expected_type[k]);
    CHECK(r.full_information[k] == r.misspecified[k]);
  }
}
