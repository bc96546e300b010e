#include "mbi/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

#include "mbi/error.hpp"
#include "mbi/format.hpp"
#include "mbi/oracle.hpp"

namespace mbi {

double ScheduleSpec::value(int cycle) const {
  switch (kind) {
    case Kind::None: return before;
    case Kind::Step: return cycle < at ? before : after;
    case Kind::Sine: return before + amplitude * std::sin(2.0 * std::numbers::pi * cycle / period);
  }
  return before;
}

double ScenarioSpec::param(const std::string& key) const {
  auto it = params.find(key);
  if (it == params.end()) throw Error(ErrorCode::InvalidConfig, "scenario '" + name + "' has no parameter " + key);
  return it->second;
}

void ScenarioReport::add(std::string key, double value) { add(std::move(key), format_real(value)); }

const std::string* ScenarioReport::find(std::string_view key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return &v;
  }
  return nullptr;
}

namespace {

// ------------------------------------------------------------------ helpers

constexpr std::uint32_t kTarget = 0;

std::size_t count(const ScenarioSpec& spec, const std::string& key) {
  const double n = spec.param(key);
  if (!(n >= 1.0) || n != std::floor(n)) throw Error(ErrorCode::InvalidConfig, key + " must be a positive integer");
  return static_cast<std::size_t>(n);
}

AgentState follower(std::uint32_t id, Vector start, std::optional<CostSpec> cost, double eta) {
  AgentState a;
  a.node = NodeId{id};
  a.action = std::move(start);
  a.cost = std::move(cost);
  a.strategy = GradientFollower{eta};
  return a;
}

struct Built {
  GraphSpec graph;
  std::vector<AgentState> agents;
};

// Source -> loss(square_error) over agents 1..n, each with its own cost.
Built star(double y_star, std::size_t n, const std::function<std::optional<CostSpec>(std::size_t)>& cost,
           double eta) {
  Built b;
  b.graph.add(NodeSpec::source(kTarget, "target", Vector::scalar(y_star)));
  const auto loss = static_cast<std::uint32_t>(n + 1);
  for (std::uint32_t i = 1; i <= n; ++i) {
    b.graph.add(NodeSpec::agent(i, "", 1)).connect(i, loss);
    b.agents.push_back(follower(i, Vector(1, 0.0), cost(i), eta));
  }
  b.graph.add(NodeSpec::loss(loss, "loss", "square_error")).connect(kTarget, loss);
  return b;
}

Built build_assembly(const ScenarioSpec& s) {
  Built b;
  const double y = s.schedule.kind == ScheduleSpec::Kind::None ? s.param("y_star") : s.schedule.value(1);
  b.graph.add(NodeSpec::source(0, "target", Vector::scalar(y)))
      .add(NodeSpec::agent(1, "A1", 1))
      .add(NodeSpec::agent(2, "A2", 1, "sum"))
      .add(NodeSpec::loss(3, "loss", "square_error"))
      .connect(1, 2)
      .connect(2, 3)
      .connect(0, 3);
  const double eta = s.param("eta");
  b.agents.push_back(follower(1, Vector::scalar(s.param("x1_start")), CostSpec::quadratic(s.param("lambda")), eta));
  b.agents.push_back(follower(2, Vector::scalar(s.param("x2_start")), std::nullopt, eta));
  return b;
}

Built build_quadratic_n(const ScenarioSpec& s) {
  const std::size_t n = count(s, "n");
  const double step = s.param("lambda_step");
  return star(s.param("y_star"), n, [&](std::size_t i) { return CostSpec::quadratic(1.0 + step * i); },
              s.param("eta"));
}

Built build_scaling(const ScenarioSpec& s) {
  const std::size_t n = count(s, "n");
  Built b;
  const auto loss = static_cast<std::uint32_t>(n + 1);
  b.graph.nodes.reserve(n + 1);
  b.graph.edges.reserve(n);
  b.agents.reserve(n);
  const double lambda = s.param("lambda");
  const double eta = s.param("eta");
  for (std::uint32_t i = 1; i <= n; ++i) {
    b.graph.add(NodeSpec::agent(i, "", 1)).connect(i, loss);
    b.agents.push_back(follower(i, Vector(1, 0.0), CostSpec::quadratic(lambda), eta));
  }
  b.graph.add(NodeSpec::loss(loss, "loss", "sq_dev", {s.param("target")}));
  return b;
}

Built build_nonconvex(const ScenarioSpec& s) {
  Built b;
  b.graph.add(NodeSpec::source(0, "target", Vector::scalar(s.param("y_star"))))
      .add(NodeSpec::agent(1, "A1", 1))
      .add(NodeSpec::agent(2, "A2", 1, "sum"))
      .add(NodeSpec::function(3, "well", "double_well", {s.param("well")}))
      .add(NodeSpec::function(4, "fit", "square_error"))
      .add(NodeSpec::loss(5, "loss", "total"))
      .connect(1, 2)
      .connect(1, 3)
      .connect(2, 4)
      .connect(0, 4)
      .connect(3, 5)
      .connect(4, 5);
  const double eta = s.param("eta");
  b.agents.push_back(follower(1, Vector::scalar(s.param("x1_start_a")), std::nullopt, eta));
  b.agents.push_back(follower(2, Vector::scalar(s.param("x2_start")), std::nullopt, eta));
  return b;
}

Built build_heterogeneous(const ScenarioSpec& s) {
  Built b;
  b.graph.add(NodeSpec::source(0, "target", Vector::scalar(s.param("y_star"))))
      .add(NodeSpec::agent(1, "scalar", 1))
      .add(NodeSpec::agent(2, "pair", 2))
      .add(NodeSpec::agent(3, "triple", 3))
      .add(NodeSpec::loss(4, "loss", "square_error"))
      .connect(1, 4)
      .connect(2, 4)
      .connect(3, 4)
      .connect(0, 4);
  b.agents.push_back(follower(1, Vector(1, 0.0), CostSpec::quadratic(s.param("lambda1")), s.param("eta1")));
  b.agents.push_back(follower(2, Vector(2, 0.0), CostSpec::shifted_quadratic(s.param("lambda2"), Vector{1.0, -1.0}),
                              s.param("eta2")));
  b.agents.push_back(follower(3, Vector(3, 0.0),
                              CostSpec::shifted_quadratic(s.param("lambda3"), Vector{0.5, 0.5, 0.5}),
                              s.param("eta3")));
  return b;
}

Built build_asymmetric(const ScenarioSpec& s) {
  const double lambda = s.prior ? s.prior->mean() : 1.0;
  return star(s.param("y_star"), count(s, "n"), [&](std::size_t) { return CostSpec::quadratic(lambda); },
              s.param("eta"));
}

Built build_effort(const ScenarioSpec& s) {
  const double base = s.param("lambda_base");
  Built b = star(s.param("y_star"), count(s, "n"),
                 [&](std::size_t i) { return CostSpec::quadratic(base + static_cast<double>(i - 1)); }, 0.1);
  const BestResponse br{s.param("inner_eta"), static_cast<int>(s.param("max_effort"))};
  for (auto& a : b.agents) {
    a.strategy = br;
    a.effort = EffortModel::linear(s.param("rho"));
  }
  return b;
}

Built build_nonorthogonal(const ScenarioSpec& s) {
  const std::size_t n = count(s, "n");
  if (n < 2) throw Error(ErrorCode::InvalidConfig, "nonorthogonal_costs needs n >= 2");
  Built b;
  const auto fit = static_cast<std::uint32_t>(2 * n);
  const auto loss = fit + 1;
  b.graph.add(NodeSpec::source(0, "target", Vector::scalar(s.param("y_star"))));
  const double eta = s.param("eta");
  for (std::uint32_t i = 1; i <= n; ++i) {
    b.graph.add(NodeSpec::agent(i, "", 1)).connect(i, fit);
    b.agents.push_back(follower(i, Vector(1, 0.0), CostSpec::quadratic(s.param("lambda")), eta));
  }
  for (std::uint32_t i = 1; i < n; ++i) {
    const auto cross = static_cast<std::uint32_t>(n) + i;
    b.graph.add(NodeSpec::function(cross, "", "cross", {s.param("weight"), s.param("coupling")}))
        .connect(i, cross)
        .connect(i + 1, cross)
        .connect(cross, loss);
  }
  b.graph.add(NodeSpec::function(fit, "fit", "square_error")).connect(0, fit).connect(fit, loss);
  b.graph.add(NodeSpec::loss(loss, "loss", "total"));
  return b;
}

// ------------------------------------------------------------------ runners

double max_gap(const ActionMap& got, const ActionMap& want) {
  double gap = 0.0;
  for (const auto& [node, x] : want) {
    const Vector& y = got.at(node);
    for (std::size_t k = 0; k < x.dim(); ++k) gap = std::max(gap, std::abs(y[k] - x[k]));
  }
  return gap;
}

ActionMap unpack(Mechanism& m, std::span<const double> coords) {
  ActionMap out;
  std::size_t at = 0;
  for (const auto& s : m.planner_model().agent_slots()) {
    out.emplace(s.node, Vector(coords.subspan(at, s.dim)));
    at += s.dim;
  }
  return out;
}

std::vector<double> flatten(const ActionMap& actions) {
  std::vector<double> out;
  for (const auto& [node, v] : actions) out.insert(out.end(), v.values().begin(), v.values().end());
  return out;
}

/// Newton oracle on the true global loss; exact for the quadratic families.
ActionMap newton_oracle(Mechanism& m) {
  std::size_t dim = 0;
  for (const auto& s : m.planner_model().agent_slots()) dim += s.dim;
  const std::vector<double> start(dim, 0.0);
  const Vector x = quadratic_minimizer(global_loss_field(m), start);
  return unpack(m, x.values());
}

ActionMap kkt_oracle(Mechanism& m, double y_star) {
  std::vector<double> lambdas;
  for (const auto& a : m.agents()) lambdas.push_back(a.true_lambda());
  const Vector x = quadratic_kkt_solution(lambdas, y_star);
  return unpack(m, x.values());
}

ActionMap run_and_report(Mechanism& m, ScenarioReport& report) {
  report.run = m.run_until_convergence();
  return report.run.final_actions;
}

void install_schedule(Mechanism& m, const ScenarioSpec& s) {
  if (s.schedule.kind == ScheduleSpec::Kind::None) return;
  const ScheduleSpec schedule = s.schedule;
  m.set_before_cycle([schedule](int cycle, Mechanism& mech) {
    mech.set_source(NodeId{kTarget}, Vector::scalar(schedule.value(cycle)));
  });
}

ScenarioReport run_assembly(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  Mechanism m(std::move(inst.graph), std::move(inst.agents), s.planner, s.noise, seed);
  ScenarioReport r;
  const ActionMap final = run_and_report(m, r);
  const ActionMap oracle = newton_oracle(m);
  r.oracle_gap = max_gap(final, oracle);
  r.add("x1", final.at(NodeId{1})[0]);
  r.add("x2", final.at(NodeId{2})[0]);
  r.add("oracle_x1", oracle.at(NodeId{1})[0]);
  r.add("oracle_x2", oracle.at(NodeId{2})[0]);
  if (s.noise.sigma > 0.0) r.add("sigma", s.noise.sigma);
  return r;
}

ScenarioReport run_tracking(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  Mechanism m(std::move(inst.graph), std::move(inst.agents), s.planner, s.noise, seed);
  install_schedule(m, s);
  ScenarioReport r;
  const ActionMap final = run_and_report(m, r);
  const auto& traces = r.run.traces;
  double mean_loss = 0.0;
  for (const auto& t : traces) mean_loss += t.loss;
  mean_loss /= static_cast<double>(traces.size());
  r.add("mean_tracking_loss", mean_loss);

  const int last = static_cast<int>(traces.size());
  m.set_source(NodeId{kTarget}, Vector::scalar(s.schedule.value(last)));
  const ActionMap oracle = newton_oracle(m);
  r.oracle_gap = max_gap(final, oracle);
  r.add("final_target", s.schedule.value(last));
  r.add("x2", final.at(NodeId{2})[0]);

  if (s.schedule.kind == ScheduleSpec::Kind::Step && s.schedule.at > 1 && s.schedule.at <= last &&
      !traces[static_cast<std::size_t>(s.schedule.at - 2)].agents.empty()) {
    const auto& pre = traces[static_cast<std::size_t>(s.schedule.at - 2)];
    m.set_source(NodeId{kTarget}, Vector::scalar(s.schedule.before));
    const ActionMap pre_oracle = newton_oracle(m);
    ActionMap pre_actions;
    for (const auto& rec : pre.agents) pre_actions.emplace(rec.node, rec.action);
    r.add("pre_step_gap", max_gap(pre_actions, pre_oracle));
    r.add("post_step_gap", *r.oracle_gap);
    int settled = -1;
    for (const auto& t : traces) {
      if (t.cycle > s.schedule.at && t.grad_norm <= s.planner.tau) {
        settled = t.cycle;
        break;
      }
    }
    r.add("reconverged_cycle", std::to_string(settled));
  }
  return r;
}

ScenarioReport run_quadratic_n(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  Mechanism m(std::move(inst.graph), std::move(inst.agents), s.planner, s.noise, seed);
  ScenarioReport r;
  const ActionMap final = run_and_report(m, r);
  const ActionMap oracle = kkt_oracle(m, s.param("y_star"));
  r.oracle_gap = max_gap(final, oracle);
  const double kkt_loss = m.true_loss_at(oracle);
  r.add("kkt_loss", kkt_loss);
  r.add("loss_gap", m.true_loss() - kkt_loss);
  return r;
}

ScenarioReport run_scaling(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  Mechanism m(std::move(inst.graph), std::move(inst.agents), s.planner, s.noise, seed);
  ScenarioReport r;
  const ActionMap final = run_and_report(m, r);
  double gap = 0.0;
  for (const auto& a : m.agents()) {
    const double want = s.param("target") / (1.0 + a.true_lambda());
    gap = std::max(gap, std::abs(final.at(a.node)[0] - want));
  }
  r.oracle_gap = gap;
  r.add("agents", static_cast<double>(final.size()));
  std::int64_t nanos = 0;
  for (const auto& t : r.run.traces) nanos += t.wall_nanos;
  r.add("mean_cycle_nanos", static_cast<double>(nanos) / static_cast<double>(r.run.traces.size()));
  return r;
}

ScenarioReport run_nonconvex(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  const Graph graph = inst.graph;
  Mechanism a(graph, inst.agents, s.planner, s.noise, seed);
  ScenarioReport r;
  const ActionMap end_a = run_and_report(a, r);
  const double grad_a = r.run.traces.back().grad_norm;

  std::vector<AgentState> second = inst.agents;
  for (auto& st : second) {
    if (st.node == NodeId{1}) st.action = Vector::scalar(s.param("x1_start_b"));
  }
  Mechanism b(graph, std::move(second), s.planner, s.noise, seed);
  const RunResult run_b = b.run_until_convergence();
  const ActionMap& end_b = run_b.final_actions;
  const double grad_b = run_b.traces.back().grad_norm;

  const double y = s.param("y_star");
  GridSpec grid;
  grid.bounds = {{-3.0, 3.0}, {y - 6.0, y + 6.0}};
  grid.resolution = 241;
  const auto minima = grid_local_minima(global_loss_field(a), grid);

  auto nearest = [&](const ActionMap& x) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : minima) {
      best = std::min(best, std::max(std::abs(x.at(NodeId{1})[0] - p.argmin[0]),
                                     std::abs(x.at(NodeId{2})[0] - p.argmin[1])));
    }
    return best;
  };
  r.add("start_a_x1", end_a.at(NodeId{1})[0]);
  r.add("start_a_x2", end_a.at(NodeId{2})[0]);
  r.add("start_a_grad_norm", grad_a);
  r.add("start_a_converged", r.run.converged);
  r.add("start_b_x1", end_b.at(NodeId{1})[0]);
  r.add("start_b_x2", end_b.at(NodeId{2})[0]);
  r.add("start_b_grad_norm", grad_b);
  r.add("start_b_converged", run_b.converged);
  r.add("oracle_minima", static_cast<double>(minima.size()));
  const double gap_a = nearest(end_a), gap_b = nearest(end_b);
  r.add("start_a_oracle_gap", gap_a);
  r.add("start_b_oracle_gap", gap_b);
  r.add("distinct_stationary_points", max_gap(end_a, end_b) > 1e-3);
  r.oracle_gap = std::max(gap_a, gap_b);
  std::vector<double> flat;
  for (const auto& p : minima) flat.insert(flat.end(), p.argmin.values().begin(), p.argmin.values().end());
  r.series["oracle_minima"] = flat;
  r.series["end_a"] = flatten(end_a);
  r.series["end_b"] = flatten(end_b);
  return r;
}

ScenarioReport run_heterogeneous(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  Mechanism m(std::move(inst.graph), std::move(inst.agents), s.planner, s.noise, seed);
  ScenarioReport r;
  const ActionMap final = run_and_report(m, r);
  std::vector<KktBlock> blocks;
  for (const auto& a : m.agents()) {
    const CostSpec& c = *a.cost;
    blocks.push_back({c.kind() == CostSpec::Kind::ShiftedQuadratic ? c.center() : Vector(a.action.dim(), 0.0),
                      c.lambda()});
  }
  const auto x = shifted_kkt_solution(blocks, s.param("y_star"));
  ActionMap oracle;
  const auto agents = m.agents();
  for (std::size_t k = 0; k < agents.size(); ++k) oracle.emplace(agents[k].node, x[k]);
  r.oracle_gap = max_gap(final, oracle);
  r.add("oracle_loss", m.true_loss_at(oracle));
  return r;
}

ScenarioReport run_asymmetric(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  if (!s.prior) throw Error(ErrorCode::InvalidConfig, "asymmetric_info needs a prior");
  Mechanism m(inst.graph, inst.agents, s.planner, s.noise, seed);
  ScenarioReport r;
  const ActionMap final = run_and_report(m, r);
  r.oracle_gap = max_gap(final, kkt_oracle(m, s.param("y_star")));

  std::vector<std::uint64_t> seeds(count(s, "seeds"));
  std::iota(seeds.begin(), seeds.end(), seed);
  const double wrong = s.param("misspecified_lambda");
  const auto ex = asymmetric_info_experiment(inst.graph, inst.agents, s.planner, *s.prior, wrong, seeds);
  r.add("prior", s.prior->describe());
  r.add("misspecified_lambda", wrong);
  r.add("mean_loss_full_information", ex.mean_full_information);
  r.add("mean_loss_expected_type", ex.mean_expected_type);
  r.add("mean_loss_misspecified", ex.mean_misspecified);
  r.add("ordering_holds", ex.ordering_holds);
  r.series["full_information"] = ex.full_information;
  r.series["expected_type"] = ex.expected_type;
  r.series["misspecified"] = ex.misspecified;
  return r;
}

ScenarioReport run_effort(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  Mechanism m(inst.graph, inst.agents, s.planner, s.noise, seed);
  ScenarioReport r;
  run_and_report(m, r);
  r.oracle_gap = max_gap(r.run.final_actions, kkt_oracle(m, s.param("y_star")));

  const std::vector<double> rhos = {0.0, 0.01, 0.1, 1.0};
  PlannerConfig cfg = s.planner;
  cfg.record_agents = true;
  std::vector<std::vector<double>> efforts;
  std::vector<double> losses;
  for (double rho : rhos) {
    std::vector<AgentState> agents = inst.agents;
    for (auto& a : agents) a.effort = EffortModel::linear(rho);
    Mechanism sweep(inst.graph, std::move(agents), cfg, s.noise, seed);
    const RunResult run = sweep.run_until_convergence();
    std::vector<double> first;
    if (run.traces.size() > 1) {
      for (const auto& rec : run.traces[1].agents) first.push_back(rec.effort);
    }
    efforts.push_back(first);
    losses.push_back(sweep.true_loss());
    r.series["effort_rho_" + format_real(rho)] = first;
  }
  bool effort_ok = true, loss_ok = true;
  for (std::size_t k = 1; k < rhos.size(); ++k) {
    for (std::size_t i = 0; i < efforts[k].size(); ++i) effort_ok = effort_ok && efforts[k][i] <= efforts[k - 1][i];
    loss_ok = loss_ok && losses[k] >= losses[k - 1];
  }
  r.series["rho"] = rhos;
  r.series["final_loss"] = losses;
  for (std::size_t k = 0; k < rhos.size(); ++k) {
    std::string row;
    for (double e : efforts[k]) row += (row.empty() ? "" : ",") + format_real(e);
    r.add("rho_" + format_real(rhos[k]) + "_t_star", row);
    r.add("rho_" + format_real(rhos[k]) + "_final_loss", losses[k]);
  }
  r.add("t_star_nonincreasing", effort_ok);
  r.add("final_loss_nondecreasing", loss_ok);
  return r;
}

ScenarioReport run_nonorthogonal(const ScenarioSpec& s, Instance inst, std::uint64_t seed) {
  Mechanism m(std::move(inst.graph), std::move(inst.agents), s.planner, s.noise, seed);
  ScenarioReport r;
  const ActionMap final = run_and_report(m, r);
  const ActionMap oracle = newton_oracle(m);
  r.oracle_gap = max_gap(final, oracle);
  r.add("oracle_loss", m.true_loss_at(oracle));
  return r;
}

struct Family {
  std::function<Built(const ScenarioSpec&)> build;
  std::function<ScenarioReport(const ScenarioSpec&, Instance, std::uint64_t)> run;
};

const std::map<std::string, Family, std::less<>>& families() {
  static const std::map<std::string, Family, std::less<>> table = {
      {"assembly_line", {build_assembly, run_assembly}},
      {"noisy", {build_assembly, run_assembly}},
      {"tracking", {build_assembly, run_tracking}},
      {"quadratic_n", {build_quadratic_n, run_quadratic_n}},
      {"scaling_bench", {build_scaling, run_scaling}},
      {"nonconvex", {build_nonconvex, run_nonconvex}},
      {"heterogeneous", {build_heterogeneous, run_heterogeneous}},
      {"asymmetric_info", {build_asymmetric, run_asymmetric}},
      {"effort_tradeoff", {build_effort, run_effort}},
      {"nonorthogonal_costs", {build_nonorthogonal, run_nonorthogonal}},
  };
  return table;
}

const Family& family_of(const ScenarioSpec& spec) {
  auto it = families().find(spec.family);
  if (it == families().end()) throw Error(ErrorCode::UnknownScenario, "no scenario family '" + spec.family + "'");
  return it->second;
}

void apply(AgentState& a, const AgentOverride& o) {
  if (o.strategy) {
    if (*o.strategy == "gradient") {
      if (!std::holds_alternative<GradientFollower>(a.strategy)) a.strategy = GradientFollower{};
    } else if (*o.strategy == "best_response") {
      if (!std::holds_alternative<BestResponse>(a.strategy)) a.strategy = BestResponse{};
    } else {
      throw Error(ErrorCode::InvalidConfig, "strategy must be gradient or best_response");
    }
  }
  if (o.lambda) a.cost = a.cost ? a.cost->with_lambda(*o.lambda) : CostSpec::quadratic(*o.lambda);
  if (o.reported_lambda) a.reported_lambda = *o.reported_lambda;
  if (o.rho) a.effort = EffortModel::linear(*o.rho);
  if (o.eta) {
    auto* gf = std::get_if<GradientFollower>(&a.strategy);
    if (!gf) throw Error(ErrorCode::InvalidConfig, "eta applies to gradient followers");
    gf->eta = *o.eta;
  }
  if (o.inner_eta || o.max_effort) {
    auto* br = std::get_if<BestResponse>(&a.strategy);
    if (!br) throw Error(ErrorCode::InvalidConfig, "inner_eta and max_effort apply to best responders");
    if (o.inner_eta) br->inner_eta = *o.inner_eta;
    if (o.max_effort) br->max_effort = *o.max_effort;
  }
  if (o.start) {
    if (o.start->size() != a.action.dim()) throw Error(ErrorCode::ShapeMismatch, "start has the wrong dimension");
    a.action = Vector(*o.start);
  }
}

ScenarioSpec entry(std::string name, std::string summary, std::map<std::string, double> params) {
  ScenarioSpec s;
  s.family = name;
  s.name = std::move(name);
  s.summary = std::move(summary);
  s.params = std::move(params);
  return s;
}

}  // namespace

// ------------------------------------------------------------------ catalog

std::vector<ScenarioSpec> catalog() {
  std::vector<ScenarioSpec> out;

  // eta = 2 / (mu + L) for the Hessian [[2 + 2 lambda, 2], [2, 2]].
  const std::map<std::string, double> toy = {
      {"y_star", 10.0}, {"lambda", 0.5}, {"eta", 0.4}, {"x1_start", 0.0}, {"x2_start", 0.0}};
  auto s = entry("assembly_line", "two-stage chain, expensive upstream agent; optimum (0, y_star)", toy);
  s.planner.max_cycles = 2000;
  out.push_back(s);

  s = entry("quadratic_n", "100 agents, lambda_i = 1 + i/100, shared target 50",
            {{"n", 100.0}, {"y_star", 50.0}, {"lambda_step", 0.01}, {"eta", 0.00975}});
  s.planner.max_cycles = 5000;
  out.push_back(s);

  s = entry("scaling_bench", "separable quadratics, one loss term per agent",
            {{"n", 10000.0}, {"target", 1.0}, {"lambda", 0.5}, {"eta", 0.25}});
  s.planner.max_cycles = 200;
  s.planner.record_agents = false;
  out.push_back(s);

  s = entry("noisy", "assembly line with Gaussian noise on the delivered signal", toy);
  s.planner.max_cycles = 2000;
  s.noise.sigma = 0.1;
  out.push_back(s);

  s = entry("nonconvex", "double well (x1^2 - a)^2 plus (x1 + x2 - y_star)^2, two starts",
            {{"y_star", 10.0}, {"well", 1.0}, {"eta", 0.05}, {"x1_start_a", 1.5}, {"x1_start_b", -1.5},
             {"x2_start", 10.0}});
  s.planner.max_cycles = 5000;
  out.push_back(s);

  s = entry("tracking", "assembly line whose target steps from 10 to 20 at cycle 200", toy);
  s.params.erase("y_star");
  s.planner.max_cycles = 600;
  s.planner.stop_on_convergence = false;
  s.schedule.kind = ScheduleSpec::Kind::Step;
  out.push_back(s);

  s = entry("heterogeneous", "agents of action dim 1, 2 and 3 with plain and shifted costs, own step sizes",
            {{"y_star", 10.0},
             {"lambda1", 1.0},
             {"lambda2", 2.0},
             {"lambda3", 0.5},
             {"eta1", 0.05},
             {"eta2", 0.04},
             {"eta3", 0.06}});
  s.planner.max_cycles = 5000;
  out.push_back(s);

  s = entry("asymmetric_info", "hidden cost types; planner uses truth, a fixed guess, or the prior mean",
            {{"n", 5.0}, {"y_star", 10.0}, {"eta", 0.05}, {"seeds", 20.0}, {"misspecified_lambda", 0.5}});
  s.prior = TypePrior::uniform(0.5, 1.5);
  s.planner.max_cycles = 5000;
  out.push_back(s);

  s = entry("effort_tradeoff", "best responders with linear effort cost rho * T",
            {{"n", 4.0}, {"y_star", 10.0}, {"lambda_base", 6.0}, {"inner_eta", 0.01}, {"max_effort", 100.0},
             {"rho", 0.1}});
  s.planner.max_cycles = 300;
  out.push_back(s);

  s = entry("nonorthogonal_costs", "chain of cross terms (x_i + w x_{i+1})^2 coupling neighbours",
            {{"n", 4.0}, {"y_star", 10.0}, {"lambda", 1.0}, {"weight", 0.5}, {"coupling", 1.0}, {"eta", 0.05}});
  s.planner.max_cycles = 5000;
  out.push_back(s);

  return out;
}

ScenarioSpec find_scenario(std::string_view name) {
  for (auto& s : catalog()) {
    if (s.name == name) return s;
  }
  throw Error(ErrorCode::UnknownScenario, "no scenario named '" + std::string(name) + "'");
}

Instance instantiate(const ScenarioSpec& spec) {
  Built b = family_of(spec).build(spec);
  for (const auto& [id, o] : spec.agents) {
    auto it = std::find_if(b.agents.begin(), b.agents.end(), [&](const AgentState& a) { return a.node.value == id; });
    if (it == b.agents.end()) {
      throw Error(ErrorCode::UnknownAgent, "scenario '" + spec.name + "' has no agent " + std::to_string(id));
    }
    apply(*it, o);
  }
  return Instance{build_graph(std::move(b.graph)), std::move(b.agents)};
}

ScenarioReport run_scenario(const ScenarioSpec& spec, std::uint64_t seed) {
  const Family& f = family_of(spec);
  return f.run(spec, instantiate(spec), seed);
}

ScalarField global_loss_field(Mechanism& mechanism) {
  return [&mechanism](std::span<const double> coords) {
    std::vector<double> p(mechanism.packed().begin(), mechanism.packed().end());
    std::size_t at = 0;
    for (const auto& s : mechanism.true_model().agent_slots()) {
      std::copy(coords.begin() + at, coords.begin() + at + s.dim, p.begin() + s.offset);
      at += s.dim;
    }
    return mechanism.true_model().value(p);
  };
}

}  // namespace mbi
