#include "mbi/mechanism.hpp"

#include <algorithm>
#include <cmath>

#include "mbi/error.hpp"

namespace mbi {

// ---------------------------------------------------------------- LossModel

LossModel::LossModel(std::shared_ptr<const ad::Program> program, const Graph& graph,
                     std::span<const AgentState> agents, CostView view)
    : program_(std::move(program)), evaluator_(program_) {
  std::map<NodeId, const AgentState*> by_node;
  for (const auto& a : agents) by_node[a.node] = &a;

  initial_.assign(program_->packed_size(), 0.0);
  const auto& vars = program_->variables();
  auto locate = [&](const std::string& name, NodeId node) {
    auto idx = program_->find_variable(name);
    if (!idx) throw Error(ErrorCode::InvalidGraph, "node " + to_string(node) + " does not reach the loss");
    return Slot{node, vars[*idx].packed_offset, vars[*idx].dim};
  };

  for (NodeId id : agent_nodes(graph)) {
    Slot s = locate(action_variable(id), id);
    auto it = by_node.find(id);
    if (it == by_node.end()) throw Error(ErrorCode::UnknownAgent, "no state for agent " + to_string(id));
    const AgentState& a = *it->second;
    if (a.action.dim() != s.dim) {
      throw Error(ErrorCode::ShapeMismatch, "agent " + to_string(id) + " action dim differs from node dim");
    }
    std::copy(a.action.values().begin(), a.action.values().end(), initial_.begin() + s.offset);
    agent_index_.emplace(id, agents_.size());
    agents_.push_back(s);
    switch (view) {
      case CostView::Planner: costs_.push_back(a.planner_cost()); break;
      case CostView::True: costs_.push_back(a.cost); break;
      case CostView::None: costs_.emplace_back(); break;
    }
  }
  for (const auto& a : agents) {
    if (!graph.contains(a.node) || graph.node(a.node).kind != NodeKind::Agent) {
      throw Error(ErrorCode::UnknownAgent, "state given for non-agent node " + to_string(a.node));
    }
  }
  for (NodeId id : graph.topological_order()) {
    const NodeSpec& n = graph.node(id);
    if (n.kind != NodeKind::Source) continue;
    Slot s = locate(source_variable(id), id);
    std::copy(n.value.values().begin(), n.value.values().end(), initial_.begin() + s.offset);
    sources_.push_back(s);
  }
}

const LossModel::Slot& LossModel::slot(NodeId node) const {
  if (auto it = agent_index_.find(node); it != agent_index_.end()) return agents_[it->second];
  for (const auto& s : sources_) {
    if (s.node == node) return s;
  }
  throw Error(ErrorCode::UnknownAgent, "node " + to_string(node) + " has no variable");
}

std::size_t LossModel::agent_index(NodeId node) const {
  auto it = agent_index_.find(node);
  if (it == agent_index_.end()) throw Error(ErrorCode::UnknownAgent, "no agent " + to_string(node));
  return it->second;
}

void LossModel::write(std::span<double> packed, const ActionMap& actions) const {
  for (const auto& [node, value] : actions) {
    const Slot& s = slot(node);
    if (value.dim() != s.dim) throw Error(ErrorCode::ShapeMismatch, "action dim for " + to_string(node));
    std::copy(value.values().begin(), value.values().end(), packed.begin() + s.offset);
  }
}

ActionMap LossModel::read(std::span<const double> packed) const {
  ActionMap out;
  for (const auto& s : agents_) out.emplace(s.node, Vector(packed.subspan(s.offset, s.dim)));
  return out;
}

double LossModel::system_value(std::span<const double> packed) { return evaluator_.forward(packed); }

double LossModel::value(std::span<const double> packed) { return evaluate(packed, {}, {}); }

double LossModel::evaluate(std::span<const double> packed, std::span<double> system_grad,
                           std::span<double> grad) {
  double total = evaluator_.forward(packed);
  if (!system_grad.empty()) {
    evaluator_.backward(system_grad);
    if (!grad.empty()) std::copy(system_grad.begin(), system_grad.end(), grad.begin());
  } else if (!grad.empty()) {
    evaluator_.backward(grad);
  }
  for (std::size_t k = 0; k < agents_.size(); ++k) {
    if (!costs_[k]) continue;
    const Slot& s = agents_[k];
    auto x = packed.subspan(s.offset, s.dim);
    total += costs_[k]->value(x);
    if (!grad.empty()) costs_[k]->add_gradient(x, grad.subspan(s.offset, s.dim));
  }
  if (!std::isfinite(total)) throw Error(ErrorCode::NonFiniteLoss, "global loss is not finite");
  return total;
}

double LossModel::gradient_norm(std::span<const double> grad) const {
  double s = 0.0;
  for (const auto& slot : agents_) {
    for (std::size_t j = slot.offset; j < slot.offset + slot.dim; ++j) s += grad[j] * grad[j];
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------- Mechanism

namespace {

std::vector<AgentState> in_slot_order(const Graph& graph, std::vector<AgentState> agents) {
  std::map<NodeId, std::size_t> rank;
  for (NodeId id : agent_nodes(graph)) rank.emplace(id, rank.size());
  for (const auto& a : agents) {
    if (!rank.count(a.node)) throw Error(ErrorCode::UnknownAgent, "state given for non-agent node " + to_string(a.node));
  }
  std::sort(agents.begin(), agents.end(),
            [&](const AgentState& a, const AgentState& b) { return rank.at(a.node) < rank.at(b.node); });
  for (std::size_t k = 1; k < agents.size(); ++k) {
    if (agents[k].node == agents[k - 1].node) {
      throw Error(ErrorCode::InvalidConfig, "duplicate state for agent " + to_string(agents[k].node));
    }
  }
  return agents;
}

}  // namespace

Mechanism::Mechanism(Graph graph, std::vector<AgentState> agents, PlannerConfig config, NoiseSpec noise,
                     std::uint64_t seed)
    : graph_(std::move(graph)),
      agents_(in_slot_order(graph_, std::move(agents))),
      config_(config),
      noise_(noise),
      rng_(seed),
      program_(compile_system_loss(graph_)),
      planner_(program_, graph_, agents_, CostView::Planner),
      truth_(program_, graph_, agents_, CostView::True) {
  if (!(config_.epsilon >= 0.0) || !(config_.tau >= 0.0) || config_.max_cycles < 1) {
    throw Error(ErrorCode::InvalidConfig, "planner thresholds must be >= 0 and max_cycles >= 1");
  }
  if (!(noise_.sigma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise sigma must be >= 0");
  for (const auto& a : agents_) {
    a.action.require_finite("initial action");
    if (a.is_best_responder() && !a.cost) {
      throw Error(ErrorCode::MissingCost, "best responder " + to_string(a.node) + " has no cost");
    }
  }
  packed_ = planner_.initial_point();
  system_grad_.assign(packed_.size(), 0.0);
  grad_.assign(packed_.size(), 0.0);
  signal_.assign(packed_.size(), 0.0);
}

CycleTrace Mechanism::run_cycle() {
  ++cycle_;
  if (before_cycle_) before_cycle_(cycle_, *this);
  const auto t0 = std::chrono::steady_clock::now();

  const auto slots = planner_.agent_slots();
  const bool record = config_.record_agents;
  std::vector<double> before;
  std::vector<int> efforts;
  if (record) {
    before = packed_;
    efforts.assign(slots.size(), 0);
  }

  CycleTrace trace;
  trace.cycle = cycle_;
  bool need_system = false;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    AgentState& agent = agents_[k];
    need_system = need_system || agent.is_best_responder();
    if (!has_signal_) continue;
    const auto& s = slots[k];
    auto x = std::span<double>(packed_).subspan(s.offset, s.dim);
    auto g = std::span<const double>(signal_).subspan(s.offset, s.dim);
    int effort = 1;
    if (const auto* gf = std::get_if<GradientFollower>(&agent.strategy)) {
      gradient_follower_update(x, g, gf->eta, agent.bounds);
    } else {
      agent.action = Vector(std::span<const double>(x.data(), x.size()));
      StepResult r = best_response(agent, Vector(g), agent.effort);
      std::copy(r.action.values().begin(), r.action.values().end(), x.begin());
      effort = r.effort;
    }
    trace.total_effort += effort;
    if (record) efforts[k] = effort;
  }

  trace.loss = planner_.evaluate(packed_, need_system ? std::span<double>(system_grad_) : std::span<double>{},
                                 grad_);
  trace.grad_norm = planner_.gradient_norm(grad_);

  if (record) {
    trace.agents.reserve(slots.size());
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const auto& s = slots[k];
      AgentRecord rec;
      rec.node = s.node;
      rec.action = Vector(std::span<const double>(packed_).subspan(s.offset, s.dim));
      rec.delta = rec.action - Vector(std::span<const double>(before).subspan(s.offset, s.dim));
      if (has_signal_) {
        rec.delivered = Vector(std::span<const double>(signal_).subspan(s.offset, s.dim));
        rec.payment = rec.delivered.dot(rec.delta);
      }
      rec.incentive = Vector(s.dim, 0.0);
      for (std::size_t j = 0; j < s.dim; ++j) rec.incentive[j] = -grad_[s.offset + j];
      rec.effort = efforts[k];
      trace.agents.push_back(std::move(rec));
    }
  }

  std::normal_distribution<double> gauss(0.0, noise_.sigma > 0.0 ? noise_.sigma : 1.0);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& s = slots[k];
    const auto& source = agents_[k].is_best_responder() ? system_grad_ : grad_;
    for (std::size_t j = s.offset; j < s.offset + s.dim; ++j) {
      signal_[j] = -source[j];
      if (noise_.sigma > 0.0) signal_[j] += gauss(rng_);
    }
  }

  if (!has_signal_) last_loss_ = trace.loss;
  trace.converged = std::abs(last_loss_ - trace.loss) <= config_.epsilon && trace.grad_norm <= config_.tau;
  last_loss_ = trace.loss;
  has_signal_ = true;
  trace.wall_nanos =
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
  return trace;
}

RunResult Mechanism::run_until_convergence() {
  RunResult result;
  for (int i = 0; i < config_.max_cycles; ++i) {
    CycleTrace t = run_cycle();
    result.converged = t.converged;
    result.traces.push_back(std::move(t));
    if (result.converged && config_.stop_on_convergence) break;
  }
  result.cycles_used = static_cast<int>(result.traces.size());
  result.final_actions = actions();
  return result;
}

std::vector<AgentState> Mechanism::agents() const {
  std::vector<AgentState> out = agents_;
  const auto slots = planner_.agent_slots();
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].action = Vector(std::span<const double>(packed_).subspan(slots[k].offset, slots[k].dim));
  }
  return out;
}

ActionMap Mechanism::actions() const { return planner_.read(packed_); }

Vector Mechanism::action(NodeId node) const {
  const auto& s = planner_.slot(node);
  return Vector(std::span<const double>(packed_).subspan(s.offset, s.dim));
}

void Mechanism::set_actions(const ActionMap& actions) {
  for (const auto& [node, v] : actions) {
    v.require_finite("action");
    planner_.agent_index(node);
  }
  planner_.write(packed_, actions);
}

void Mechanism::set_source(NodeId source, const Vector& value) {
  if (!graph_.contains(source) || graph_.node(source).kind != NodeKind::Source) {
    throw Error(ErrorCode::InvalidConfig, "node " + to_string(source) + " is not a source");
  }
  value.require_finite("source value");
  planner_.write(packed_, ActionMap{{source, value}});
}

double Mechanism::loss_at(const ActionMap& actions) {
  std::vector<double> p = packed_;
  planner_.write(p, actions);
  return planner_.value(p);
}

double Mechanism::true_loss_at(const ActionMap& actions) {
  std::vector<double> p = packed_;
  truth_.write(p, actions);
  return truth_.value(p);
}

double Mechanism::true_loss() { return truth_.value(packed_); }

std::map<NodeId, IncentiveSignal> Mechanism::incentives_at(const ActionMap& actions) {
  std::vector<double> p = packed_;
  planner_.write(p, actions);
  std::vector<double> g(p.size(), 0.0);
  planner_.evaluate(p, {}, g);
  std::map<NodeId, IncentiveSignal> out;
  for (const auto& s : planner_.agent_slots()) {
    Vector v(s.dim, 0.0);
    for (std::size_t j = 0; j < s.dim; ++j) v[j] = -g[s.offset + j];
    out.emplace(s.node, IncentiveSignal{std::move(v), cycle_});
  }
  return out;
}

double payment_for_cycle(const CycleTrace& trace, NodeId agent) {
  for (const auto& rec : trace.agents) {
    if (rec.node == agent) return rec.payment;
  }
  throw Error(ErrorCode::UnknownAgent, "agent " + to_string(agent) + " not in cycle " + std::to_string(trace.cycle));
}

// ------------------------------------------------------------------- audits

namespace {

double leg_integral(LossModel& model, std::vector<double>& point, std::vector<double>& sys,
                    std::vector<double>& grad, const LossModel::Slot& s, const Vector& from, const Vector& to,
                    int steps, SignalKind kind, const IncentiveFilter& filter) {
  if (steps < 1) throw std::invalid_argument("integration needs at least one step");
  if (from.dim() != s.dim || to.dim() != s.dim) throw Error(ErrorCode::ShapeMismatch, "path endpoint dim");
  const Vector dir = to - from;
  std::vector<double> signal(s.dim);
  double acc = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    for (std::size_t j = 0; j < s.dim; ++j) point[s.offset + j] = from[j] + t * dir[j];
    if (kind == SignalKind::System) {
      model.evaluate(point, sys, {});
      for (std::size_t j = 0; j < s.dim; ++j) signal[j] = -sys[s.offset + j];
    } else {
      model.evaluate(point, {}, grad);
      for (std::size_t j = 0; j < s.dim; ++j) signal[j] = -grad[s.offset + j];
    }
    if (filter) filter(s.node, signal);
    double f = 0.0;
    for (std::size_t j = 0; j < s.dim; ++j) f += signal[j] * dir[j];
    acc += (i == 0 || i == steps) ? 0.5 * f : f;
  }
  return acc / steps;
}

}  // namespace

double path_integral(Mechanism& mechanism, NodeId agent, std::span<const Vector> waypoints, int steps,
                     SignalKind kind, const IncentiveFilter& filter) {
  LossModel& model = mechanism.planner_model();
  const auto& s = model.slot(agent);
  model.agent_index(agent);
  std::vector<double> point(mechanism.packed().begin(), mechanism.packed().end());
  std::vector<double> sys(point.size()), grad(point.size());
  double total = 0.0;
  for (std::size_t w = 1; w < waypoints.size(); ++w) {
    total += leg_integral(model, point, sys, grad, s, waypoints[w - 1], waypoints[w], steps, kind, filter);
  }
  return total;
}

double externality_integral(Mechanism& mechanism, NodeId agent, const Vector& from, const Vector& to, int steps,
                            SignalKind kind, const IncentiveFilter& filter) {
  const Vector pts[] = {from, to};
  return path_integral(mechanism, agent, pts, steps, kind, filter);
}

namespace {

template <typename F>
double golden_max(F&& f, double lo, double hi, double tol) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

VcgAuditReport vcg_equivalence_audit(Mechanism& mechanism, std::uint64_t seed, const VcgAuditOptions& options) {
  VcgAuditReport report;
  report.converged = mechanism.run_until_convergence().converged;

  LossModel& model = mechanism.planner_model();
  const std::vector<double> base(mechanism.packed().begin(), mechanism.packed().end());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  for (const auto& s : model.agent_slots()) {
    VcgAgentAudit audit;
    audit.node = s.node;
    audit.optimum = Vector(std::span<const double>(base).subspan(s.offset, s.dim));
    const auto& cost = model.cost(model.agent_index(s.node));
    const double c0 = cost ? cost->value(audit.optimum.span()) : 0.0;

    auto utility = [&](const Vector& y) {
      const double paid =
          externality_integral(mechanism, s.node, audit.optimum, y, options.steps, SignalKind::System, options.corrupt);
      return paid - ((cost ? cost->value(y.span()) : 0.0) - c0);
    };

    Vector y = audit.optimum;
    const int sweeps = s.dim > 1 ? 4 : 1;
    for (int sweep = 0; sweep < sweeps; ++sweep) {
      for (std::size_t c = 0; c < s.dim; ++c) {
        auto along = [&](double t) {
          Vector z = y;
          z[c] = t;
          return utility(z);
        };
        y[c] = golden_max(along, audit.optimum[c] - options.radius, audit.optimum[c] + options.radius, 1e-10);
      }
    }
    audit.argmax = y;
    for (std::size_t c = 0; c < s.dim; ++c) {
      audit.argmax_error = std::max(audit.argmax_error, std::abs(y[c] - audit.optimum[c]));
    }

    std::vector<double> point = base;
    Vector a(s.dim, 0.0), b(s.dim, 0.0);
    for (int seg = 0; seg < options.segments; ++seg) {
      for (std::size_t c = 0; c < s.dim; ++c) {
        a[c] = audit.optimum[c] + options.radius * unit(rng);
        b[c] = audit.optimum[c] + options.radius * unit(rng);
      }
      const double paid = externality_integral(mechanism, s.node, a, b, options.steps, SignalKind::Global,
                                               options.corrupt);
      std::copy(a.values().begin(), a.values().end(), point.begin() + s.offset);
      const double la = model.value(point);
      std::copy(b.values().begin(), b.values().end(), point.begin() + s.offset);
      const double lb = model.value(point);
      audit.residual = std::max(audit.residual, std::abs(paid - (la - lb)));
    }

    Vector detour = b + (b - a) * 0.5;
    if (s.dim > 1) detour[0] += 0.5 * options.radius;
    const Vector legs[] = {a, detour, b};
    const double straight = externality_integral(mechanism, s.node, a, b, options.steps, SignalKind::Global,
                                                 options.corrupt);
    const double bent = path_integral(mechanism, s.node, legs, options.steps, SignalKind::Global, options.corrupt);
    audit.path_residual = std::abs(straight - bent);

    report.max_argmax_error = std::max(report.max_argmax_error, audit.argmax_error);
    report.max_residual = std::max(report.max_residual, audit.residual);
    report.max_path_residual = std::max(report.max_path_residual, audit.path_residual);
    report.agents.push_back(std::move(audit));
  }
  report.passed = report.converged && report.max_argmax_error <= options.argmax_tolerance &&
                  report.max_residual <= options.residual_tolerance &&
                  report.max_path_residual <= options.residual_tolerance;
  return report;
}

VcgAuditReport vcg_equivalence_audit(Graph graph, std::vector<AgentState> agents, PlannerConfig config,
                                     std::uint64_t seed, const VcgAuditOptions& options) {
  Mechanism mechanism(std::move(graph), std::move(agents), config, {}, seed);
  return vcg_equivalence_audit(mechanism, seed, options);
}

}  // namespace mbi
