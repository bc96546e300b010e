#pragma once

// Differentiable DAG of source, agent, function and loss nodes.
//
// A Graph only stores structure. compile_system_loss() walks it in
// topological order and records the composed loss as an ad::Program, so the
// chain rule through function nodes is carried out by the AD engine.

#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbi/autodiff.hpp"
#include "mbi/vector.hpp"

namespace mbi {

struct NodeId {
  std::uint32_t value = 0;
  auto operator<=>(const NodeId&) const = default;
};

std::string to_string(NodeId id);

enum class NodeKind { Source, Agent, Function, Loss };

std::string_view to_string(NodeKind kind) noexcept;

struct NodeSpec {
  NodeId id;
  NodeKind kind = NodeKind::Agent;
  std::string label;
  Vector value;           // Source payload
  std::size_t dim = 0;    // Agent action dim
  std::string op;         // template name (Function, Loss; optional for Agent)
  std::vector<double> params;

  static NodeSpec source(std::uint32_t id, std::string label, Vector value);
  /// An agent with in-edges combines its inputs with its own action through
  /// `op` (default "sum"); without inputs it emits its action unchanged.
  static NodeSpec agent(std::uint32_t id, std::string label, std::size_t dim, std::string op = {});
  static NodeSpec function(std::uint32_t id, std::string label, std::string op,
                           std::vector<double> params = {});
  static NodeSpec loss(std::uint32_t id, std::string label, std::string op,
                       std::vector<double> params = {});
};

struct GraphSpec {
  std::vector<NodeSpec> nodes;
  std::vector<std::pair<NodeId, NodeId>> edges;

  GraphSpec& add(NodeSpec node) {
    nodes.push_back(std::move(node));
    return *this;
  }
  GraphSpec& connect(std::uint32_t from, std::uint32_t to) {
    edges.push_back({NodeId{from}, NodeId{to}});
    return *this;
  }
};

/// Validated, immutable graph.
class Graph {
 public:
  std::size_t size() const noexcept { return nodes_.size(); }
  std::span<const NodeSpec> nodes() const noexcept { return nodes_; }
  const NodeSpec& node(NodeId id) const;
  bool contains(NodeId id) const noexcept;
  /// In-edge sources of `id`, ascending by id.
  std::span<const NodeId> inputs(NodeId id) const;
  std::span<const NodeId> outputs(NodeId id) const;
  std::span<const NodeId> topological_order() const noexcept { return topo_; }
  NodeId loss_node() const noexcept { return loss_; }
  const GraphSpec& spec() const noexcept { return spec_; }

 private:
  friend Graph build_graph(GraphSpec spec);

  std::size_t index_of(NodeId id) const;

  GraphSpec spec_;
  std::vector<NodeSpec> nodes_;  // sorted by id
  std::vector<std::vector<NodeId>> inputs_;
  std::vector<std::vector<NodeId>> outputs_;
  std::vector<NodeId> topo_;
  NodeId loss_;
};

/// Validates and freezes a graph. Checks run in a fixed order so a malformed
/// spec always maps to one error: node payloads (InvalidGraph), loss count
/// (NoLossNode, MultipleLossNodes), edge endpoints (DanglingEdge), acyclicity
/// (CycleDetected), templates (UnknownFunction), then wiring (InvalidGraph:
/// sources with in-edges, loss with out-edges, nodes with no path to the loss).
Graph build_graph(GraphSpec spec);

/// Kahn order with ties broken by ascending id.
std::vector<NodeId> topological_order(const Graph& graph);
std::vector<NodeId> agent_nodes(const Graph& graph);

// ------------------------------------------------------------- templates

struct TemplateInputs {
  std::span<const ad::Expr> values;   // non-source inputs, ascending id
  std::span<const ad::Expr> sources;  // source inputs, ascending id
};

using ExprTemplate =
    std::function<ad::Expr(ad::Builder&, const TemplateInputs&, std::span<const double> params)>;

void register_template(std::string name, ExprTemplate fn);
bool has_template(std::string_view name);

/// Variable name used for an agent action / source value inside the program.
std::string action_variable(NodeId id);
std::string source_variable(NodeId id);

/// System loss over agent actions and sources. Source values enter as
/// variables so schedules can change them between cycles without recompiling.
std::shared_ptr<const ad::Program> compile_system_loss(const Graph& graph);

}  // namespace mbi
