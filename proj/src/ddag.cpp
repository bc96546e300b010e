#include "mbi/ddag.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <queue>
#include <set>

#include "mbi/error.hpp"

namespace mbi {

std::string to_string(NodeId id) { return "#" + std::to_string(id.value); }

std::string_view to_string(NodeKind kind) noexcept {
  switch (kind) {
    case NodeKind::Source: return "source";
    case NodeKind::Agent: return "agent";
    case NodeKind::Function: return "function";
    case NodeKind::Loss: return "loss";
  }
  return "?";
}

NodeSpec NodeSpec::source(std::uint32_t id, std::string label, Vector value) {
  NodeSpec n;
  n.id = NodeId{id};
  n.kind = NodeKind::Source;
  n.label = std::move(label);
  n.value = std::move(value);
  return n;
}

NodeSpec NodeSpec::agent(std::uint32_t id, std::string label, std::size_t dim, std::string op) {
  NodeSpec n;
  n.id = NodeId{id};
  n.kind = NodeKind::Agent;
  n.label = std::move(label);
  n.dim = dim;
  n.op = std::move(op);
  return n;
}

NodeSpec NodeSpec::function(std::uint32_t id, std::string label, std::string op,
                            std::vector<double> params) {
  NodeSpec n;
  n.id = NodeId{id};
  n.kind = NodeKind::Function;
  n.label = std::move(label);
  n.op = std::move(op);
  n.params = std::move(params);
  return n;
}

NodeSpec NodeSpec::loss(std::uint32_t id, std::string label, std::string op,
                        std::vector<double> params) {
  NodeSpec n = function(id, std::move(label), std::move(op), std::move(params));
  n.kind = NodeKind::Loss;
  return n;
}

// ------------------------------------------------------------- templates

namespace {

ad::Expr total(ad::Builder& b, std::span<const ad::Expr> values) {
  std::vector<ad::Expr> parts;
  parts.reserve(values.size());
  for (ad::Expr v : values) parts.push_back(b.sum(v));
  return b.add(parts);
}

double param_or(std::span<const double> params, std::size_t i, double fallback) {
  return i < params.size() ? params[i] : fallback;
}

void require_inputs(const TemplateInputs& in, std::size_t n, std::string_view name) {
  if (in.values.size() != n) {
    throw Error(ErrorCode::InvalidGraph, std::string(name) + " expects " + std::to_string(n) +
                                             " non-source inputs, got " +
                                             std::to_string(in.values.size()));
  }
}

struct TemplateRegistry {
  std::mutex mutex;
  std::map<std::string, ExprTemplate, std::less<>> templates;

  TemplateRegistry() {
    templates["identity"] = [](ad::Builder&, const TemplateInputs& in, std::span<const double>) {
      require_inputs(in, 1, "identity");
      return in.values[0];
    };
    templates["sum"] = [](ad::Builder& b, const TemplateInputs& in, std::span<const double>) {
      return b.add(in.values);
    };
    templates["total"] = [](ad::Builder& b, const TemplateInputs& in, std::span<const double>) {
      return total(b, in.values);
    };
    templates["scale"] = [](ad::Builder& b, const TemplateInputs& in, std::span<const double> p) {
      return b.scale(param_or(p, 0, 1.0), b.add(in.values));
    };
    // (sum of all input components - target)^2; the target is the summed
    // source inputs when present, otherwise params[0].
    templates["square_error"] = [](ad::Builder& b, const TemplateInputs& in,
                                   std::span<const double> p) {
      ad::Expr target = in.sources.empty() ? b.constant(param_or(p, 0, 0.0)) : total(b, in.sources);
      return b.square(b.sub(total(b, in.values), target));
    };
    // sum_v ||v - t||^2
    templates["sq_dev"] = [](ad::Builder& b, const TemplateInputs& in, std::span<const double> p) {
      ad::Expr t = b.constant(param_or(p, 0, 0.0));
      std::vector<ad::Expr> parts;
      parts.reserve(in.values.size());
      for (ad::Expr v : in.values) parts.push_back(b.sum(b.square(b.sub(v, t))));
      return b.add(parts);
    };
    // sum_v sum_k (v_k^2 - a)^2
    templates["double_well"] = [](ad::Builder& b, const TemplateInputs& in,
                                  std::span<const double> p) {
      ad::Expr a = b.constant(param_or(p, 0, 1.0));
      std::vector<ad::Expr> parts;
      for (ad::Expr v : in.values) parts.push_back(b.sum(b.square(b.sub(b.square(v), a))));
      return b.add(parts);
    };
    // lambda * ||v0 + w v1||^2, coupling two agents
    templates["cross"] = [](ad::Builder& b, const TemplateInputs& in, std::span<const double> p) {
      require_inputs(in, 2, "cross");
      ad::Expr mixed = b.add(in.values[0], b.scale(param_or(p, 0, 0.5), in.values[1]));
      return b.scale(param_or(p, 1, 1.0), b.sum(b.square(mixed)));
    };
  }
};

TemplateRegistry& template_registry() {
  static TemplateRegistry registry;
  return registry;
}

ExprTemplate lookup_template(std::string_view name) {
  auto& reg = template_registry();
  std::lock_guard lock(reg.mutex);
  auto it = reg.templates.find(name);
  if (it == reg.templates.end()) {
    throw Error(ErrorCode::UnknownFunction, "no expression template named '" + std::string(name) + "'");
  }
  return it->second;
}

}  // namespace

void register_template(std::string name, ExprTemplate fn) {
  auto& reg = template_registry();
  std::lock_guard lock(reg.mutex);
  reg.templates.insert_or_assign(std::move(name), std::move(fn));
}

bool has_template(std::string_view name) {
  auto& reg = template_registry();
  std::lock_guard lock(reg.mutex);
  return reg.templates.find(name) != reg.templates.end();
}

// ----------------------------------------------------------------- graph

std::size_t Graph::index_of(NodeId id) const {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id,
                             [](const NodeSpec& n, NodeId v) { return n.id < v; });
  if (it == nodes_.end() || it->id != id) {
    throw Error(ErrorCode::InvalidGraph, "no node " + to_string(id));
  }
  return static_cast<std::size_t>(it - nodes_.begin());
}

bool Graph::contains(NodeId id) const noexcept {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id,
                             [](const NodeSpec& n, NodeId v) { return n.id < v; });
  return it != nodes_.end() && it->id == id;
}

const NodeSpec& Graph::node(NodeId id) const { return nodes_[index_of(id)]; }
std::span<const NodeId> Graph::inputs(NodeId id) const { return inputs_[index_of(id)]; }
std::span<const NodeId> Graph::outputs(NodeId id) const { return outputs_[index_of(id)]; }

Graph build_graph(GraphSpec spec) {
  Graph g;
  g.nodes_ = spec.nodes;
  std::sort(g.nodes_.begin(), g.nodes_.end(),
            [](const NodeSpec& a, const NodeSpec& b) { return a.id < b.id; });

  for (std::size_t i = 1; i < g.nodes_.size(); ++i) {
    if (g.nodes_[i].id == g.nodes_[i - 1].id) {
      throw Error(ErrorCode::InvalidGraph, "duplicate node id " + to_string(g.nodes_[i].id));
    }
  }
  for (const auto& n : g.nodes_) {
    if (n.kind == NodeKind::Agent && n.dim == 0) {
      throw Error(ErrorCode::InvalidGraph, "agent " + to_string(n.id) + " has dim 0");
    }
    if (n.kind == NodeKind::Source && n.value.empty()) {
      throw Error(ErrorCode::InvalidGraph, "source " + to_string(n.id) + " has no value");
    }
  }

  std::size_t loss_count = 0;
  for (const auto& n : g.nodes_) {
    if (n.kind == NodeKind::Loss) {
      ++loss_count;
      g.loss_ = n.id;
    }
  }
  if (loss_count == 0) throw Error(ErrorCode::NoLossNode, "graph has no loss node");
  if (loss_count > 1) {
    throw Error(ErrorCode::MultipleLossNodes,
                "graph has " + std::to_string(loss_count) + " loss nodes; pre-sum objectives");
  }

  const std::size_t n = g.nodes_.size();
  auto find = [&](NodeId id) -> std::optional<std::size_t> {
    auto it = std::lower_bound(g.nodes_.begin(), g.nodes_.end(), id,
                               [](const NodeSpec& a, NodeId v) { return a.id < v; });
    if (it == g.nodes_.end() || it->id != id) return std::nullopt;
    return static_cast<std::size_t>(it - g.nodes_.begin());
  };

  g.inputs_.assign(n, {});
  g.outputs_.assign(n, {});
  std::set<std::pair<NodeId, NodeId>> seen;
  for (const auto& [from, to] : spec.edges) {
    auto fi = find(from);
    auto ti = find(to);
    if (!fi || !ti) {
      throw Error(ErrorCode::DanglingEdge,
                  "edge " + to_string(from) + " -> " + to_string(to) + " references an unknown node");
    }
    if (!seen.insert({from, to}).second) {
      throw Error(ErrorCode::InvalidGraph, "duplicate edge " + to_string(from) + " -> " + to_string(to));
    }
    g.outputs_[*fi].push_back(to);
    g.inputs_[*ti].push_back(from);
  }
  for (auto& v : g.inputs_) std::sort(v.begin(), v.end());
  for (auto& v : g.outputs_) std::sort(v.begin(), v.end());

  // Kahn with a min-heap on index (== ascending id since nodes_ is sorted).
  std::vector<std::size_t> indegree(n);
  for (std::size_t i = 0; i < n; ++i) indegree[i] = g.inputs_[i].size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  while (!ready.empty()) {
    std::size_t i = ready.top();
    ready.pop();
    g.topo_.push_back(g.nodes_[i].id);
    for (NodeId out : g.outputs_[i]) {
      std::size_t j = *find(out);
      if (--indegree[j] == 0) ready.push(j);
    }
  }
  if (g.topo_.size() != n) {
    throw Error(ErrorCode::CycleDetected, "graph contains a directed cycle");
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = g.nodes_[i];
    if (node.kind == NodeKind::Function || node.kind == NodeKind::Loss ||
        (node.kind == NodeKind::Agent && !node.op.empty())) {
      if (!has_template(node.op)) {
        throw Error(ErrorCode::UnknownFunction,
                    "node " + to_string(node.id) + " uses unknown template '" + node.op + "'");
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = g.nodes_[i];
    if (node.kind == NodeKind::Source && !g.inputs_[i].empty()) {
      throw Error(ErrorCode::InvalidGraph, "source " + to_string(node.id) + " has in-edges");
    }
    if (node.kind == NodeKind::Loss && !g.outputs_[i].empty()) {
      throw Error(ErrorCode::InvalidGraph, "loss node " + to_string(node.id) + " has out-edges");
    }
    if (node.kind == NodeKind::Function && g.inputs_[i].empty()) {
      throw Error(ErrorCode::InvalidGraph, to_string(node.id) + " has no inputs");
    }
  }

  // Every node must reach the loss node.
  std::vector<bool> reaches(n, false);
  reaches[*find(g.loss_)] = true;
  for (auto it = g.topo_.rbegin(); it != g.topo_.rend(); ++it) {
    std::size_t i = *find(*it);
    for (NodeId out : g.outputs_[i]) {
      if (reaches[*find(out)]) reaches[i] = true;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!reaches[i]) {
      throw Error(ErrorCode::InvalidGraph,
                  "node " + to_string(g.nodes_[i].id) + " has no path to the loss node");
    }
  }

  g.spec_ = std::move(spec);
  return g;
}

std::vector<NodeId> topological_order(const Graph& graph) {
  auto order = graph.topological_order();
  return {order.begin(), order.end()};
}

std::vector<NodeId> agent_nodes(const Graph& graph) {
  std::vector<NodeId> out;
  for (NodeId id : graph.topological_order()) {
    if (graph.node(id).kind == NodeKind::Agent) out.push_back(id);
  }
  return out;
}

std::string action_variable(NodeId id) { return "x" + std::to_string(id.value); }
std::string source_variable(NodeId id) { return "s" + std::to_string(id.value); }

std::shared_ptr<const ad::Program> compile_system_loss(const Graph& graph) {
  ad::Builder b;
  std::map<NodeId, ad::Expr> out;
  std::optional<ad::Expr> root;

  for (NodeId id : graph.topological_order()) {
    const NodeSpec& node = graph.node(id);
    std::vector<ad::Expr> values;
    std::vector<ad::Expr> sources;
    for (NodeId in : graph.inputs(id)) {
      (graph.node(in).kind == NodeKind::Source ? sources : values).push_back(out.at(in));
    }
    switch (node.kind) {
      case NodeKind::Source:
        out.emplace(id, b.variable(source_variable(id), node.value.dim()));
        break;
      case NodeKind::Agent: {
        ad::Expr action = b.variable(action_variable(id), node.dim);
        if (values.empty() && sources.empty()) {
          out.emplace(id, action);
        } else {
          values.push_back(action);
          auto fn = lookup_template(node.op.empty() ? "sum" : node.op);
          out.emplace(id, fn(b, TemplateInputs{values, sources}, node.params));
        }
        break;
      }
      case NodeKind::Function:
      case NodeKind::Loss: {
        auto fn = lookup_template(node.op);
        ad::Expr e = fn(b, TemplateInputs{values, sources}, node.params);
        out.emplace(id, e);
        if (node.kind == NodeKind::Loss) {
          if (b.dim(e) != 1) {
            throw Error(ErrorCode::ShapeMismatch, "loss template '" + node.op + "' is not scalar");
          }
          root = e;
        }
        break;
      }
    }
  }
  return std::make_shared<const ad::Program>(b.finish(*root));
}

}  // namespace mbi
