#pragma once

// Minimal reverse-mode differentiation over scalar loss expressions.
//
// Expressions are recorded by a Builder into a flat node list whose order is
// already topological (children are created before parents). Builder::finish
// freezes the list into an immutable Program. An Evaluator owns the value and
// adjoint buffers for one Program, so several evaluators may share a Program
// across threads.
//
// Values are dense vectors; a dim-1 value is a scalar and broadcasts in
// add/sub/mul. The primitive set is closed: constant, variable, add (n-ary),
// sub, mul, square, sum-reduce, scale, dot and registered unary functions.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbi/vector.hpp"

namespace mbi::ad {

enum class Op : std::uint8_t {
  Constant,
  Variable,
  Add,
  Sub,
  Mul,
  Square,
  SumReduce,
  Scale,
  Dot,
  Unary,
};

std::string_view to_string(Op op) noexcept;

struct UnaryFunction {
  std::string name;
  std::function<double(double)> value;
  std::function<double(double)> derivative;
};

/// Registers an elementwise function with its analytic derivative. Re-registering
/// a name replaces the previous definition. Built-ins: "exp", "log1p_exp",
/// "tanh", "sin", "cos".
void register_unary(std::string name, std::function<double(double)> value,
                    std::function<double(double)> derivative);
bool has_unary(std::string_view name);

class Builder;

/// Handle to a node inside a Builder. Only valid while that Builder is alive
/// and has not been finished.
class Expr {
 public:
  std::size_t dim() const;
  std::uint32_t index() const noexcept { return index_; }
  Builder& builder() const noexcept { return *owner_; }

 private:
  friend class Builder;
  Expr(Builder* owner, std::uint32_t index) : owner_(owner), index_(index) {}

  Builder* owner_;
  std::uint32_t index_;
};

struct Node {
  Op op;
  std::uint32_t first_child = 0;  // into Program::children
  std::uint32_t child_count = 0;
  std::uint32_t offset = 0;  // into the value buffer
  std::uint32_t dim = 1;
  std::uint32_t aux = 0;  // constant pool offset, variable index or unary id
  double param = 0.0;     // Scale factor
};

class Program {
 public:
  struct Variable {
    std::string name;
    std::size_t dim;
    std::uint32_t node;
    std::size_t packed_offset;
  };

  const std::vector<Variable>& variables() const noexcept { return variables_; }
  std::optional<std::size_t> find_variable(std::string_view name) const;
  /// Total length of the packed binding layout (variables in declaration order).
  std::size_t packed_size() const noexcept { return packed_size_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t value_size() const noexcept { return value_size_; }
  std::span<const Node> nodes() const noexcept { return nodes_; }
  std::span<const std::uint32_t> children(const Node& node) const noexcept {
    return std::span<const std::uint32_t>(children_).subspan(node.first_child, node.child_count);
  }
  std::uint32_t root() const noexcept { return root_; }

 private:
  friend class Builder;
  friend class Evaluator;

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> children_;
  std::vector<double> constants_;
  std::vector<Variable> variables_;
  std::map<std::string, std::size_t, std::less<>> variable_index_;
  std::vector<std::shared_ptr<const UnaryFunction>> unaries_;
  std::size_t packed_size_ = 0;
  std::size_t value_size_ = 0;
  std::uint32_t root_ = 0;
};

class Builder {
 public:
  Builder() = default;
  Builder(const Builder&) = delete;
  Builder& operator=(const Builder&) = delete;

  Expr constant(const Vector& value);
  Expr constant(double value);
  /// Declares (or re-references) a named variable. Re-declaring a name with a
  /// different dim throws ShapeMismatch.
  Expr variable(const std::string& name, std::size_t dim);

  Expr add(Expr a, Expr b);
  Expr add(std::span<const Expr> terms);
  Expr sub(Expr a, Expr b);
  Expr mul(Expr a, Expr b);
  Expr square(Expr a);
  Expr sum(Expr a);
  Expr scale(double factor, Expr a);
  Expr dot(Expr a, Expr b);
  Expr unary(std::string_view name, Expr a);

  std::size_t dim(Expr e) const;

  /// Freezes every recorded node into a Program rooted at `root`, which must
  /// be scalar. The builder is left empty.
  Program finish(Expr root);

 private:
  Expr push(Node node, std::span<const std::uint32_t> children);
  void check_owner(Expr e) const;
  static std::uint32_t broadcast_dim(std::uint32_t a, std::uint32_t b, std::string_view what);

  Program program_;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator*(double s, Expr a);
Expr operator*(Expr a, double s);
Expr operator-(Expr a);
Expr operator+(Expr a, double c);
Expr operator-(Expr a, double c);
Expr square(Expr a);
Expr sum(Expr a);
Expr dot(Expr a, Expr b);

using Bindings = std::map<std::string, Vector, std::less<>>;

/// Value cache for one Program. forward_eval populates the cache; backward_eval
/// must be called with the same bindings or it throws StaleCache.
class Evaluator {
 public:
  explicit Evaluator(std::shared_ptr<const Program> program);

  double forward_eval(const Bindings& bindings);
  /// d(loss)/d(variable) for every bound name. Bound names the program does
  /// not reference get a zero gradient of their own dim.
  Bindings backward_eval(const Bindings& bindings);

  /// Packed fast path used by the mechanism. `packed` follows
  /// Program::variables() order.
  double forward(std::span<const double> packed);
  /// Writes the gradient of the most recent forward() into `grad` (packed
  /// layout, overwritten).
  void backward(std::span<double> grad);

  const Program& program() const noexcept { return *program_; }

 private:
  std::vector<double> pack(const Bindings& bindings) const;

  std::shared_ptr<const Program> program_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  std::vector<double> bound_;
  bool cached_ = false;
};

/// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h per component.
Bindings finite_diff_grad(const std::function<double(const Bindings&)>& f, const Bindings& point,
                          double h);
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> point, double h);

}  // namespace mbi::ad
