#include "mbi/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <stdexcept>

#include "mbi/error.hpp"

namespace mbi::ad {

std::string_view to_string(Op op) noexcept {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Variable: return "variable";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Square: return "square";
    case Op::SumReduce: return "sum";
    case Op::Scale: return "scale";
    case Op::Dot: return "dot";
    case Op::Unary: return "unary";
  }
  return "?";
}

namespace {

struct UnaryRegistry {
  std::mutex mutex;
  std::map<std::string, std::shared_ptr<const UnaryFunction>, std::less<>> functions;

  UnaryRegistry() {
    auto add = [this](std::string name, std::function<double(double)> f,
                      std::function<double(double)> df) {
      auto fn = std::make_shared<UnaryFunction>(UnaryFunction{name, std::move(f), std::move(df)});
      functions.emplace(std::move(name), std::move(fn));
    };
    add("exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
    add(
        "log1p_exp", [](double x) { return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    add("tanh", [](double x) { return std::tanh(x); },
        [](double x) {
          double t = std::tanh(x);
          return 1.0 - t * t;
        });
    add("sin", [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
    add("cos", [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
  }
};

UnaryRegistry& unary_registry() {
  static UnaryRegistry registry;
  return registry;
}

std::shared_ptr<const UnaryFunction> lookup_unary(std::string_view name) {
  auto& reg = unary_registry();
  std::lock_guard lock(reg.mutex);
  auto it = reg.functions.find(name);
  if (it == reg.functions.end()) {
    throw Error(ErrorCode::UnknownFunction, "no unary function named '" + std::string(name) + "'");
  }
  return it->second;
}

inline double at(const double* v, std::uint32_t dim, std::uint32_t k) { return dim == 1 ? v[0] : v[k]; }

}  // namespace

void register_unary(std::string name, std::function<double(double)> value,
                    std::function<double(double)> derivative) {
  auto fn = std::make_shared<UnaryFunction>(UnaryFunction{name, std::move(value), std::move(derivative)});
  auto& reg = unary_registry();
  std::lock_guard lock(reg.mutex);
  reg.functions.insert_or_assign(std::move(name), std::move(fn));
}

bool has_unary(std::string_view name) {
  auto& reg = unary_registry();
  std::lock_guard lock(reg.mutex);
  return reg.functions.find(name) != reg.functions.end();
}

std::optional<std::size_t> Program::find_variable(std::string_view name) const {
  auto it = variable_index_.find(name);
  if (it == variable_index_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------- Builder

std::size_t Expr::dim() const { return owner_->dim(*this); }

std::size_t Builder::dim(Expr e) const {
  check_owner(e);
  return program_.nodes_[e.index()].dim;
}

void Builder::check_owner(Expr e) const {
  if (&e.builder() != this || e.index() >= program_.nodes_.size()) {
    throw std::invalid_argument("expression handle does not belong to this builder");
  }
}

std::uint32_t Builder::broadcast_dim(std::uint32_t a, std::uint32_t b, std::string_view what) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw Error(ErrorCode::ShapeMismatch, std::string(what) + " of dim " + std::to_string(a) +
                                            " with dim " + std::to_string(b));
}

Expr Builder::push(Node node, std::span<const std::uint32_t> children) {
  node.first_child = static_cast<std::uint32_t>(program_.children_.size());
  node.child_count = static_cast<std::uint32_t>(children.size());
  program_.children_.insert(program_.children_.end(), children.begin(), children.end());
  node.offset = static_cast<std::uint32_t>(program_.value_size_);
  program_.value_size_ += node.dim;
  program_.nodes_.push_back(node);
  return Expr(this, static_cast<std::uint32_t>(program_.nodes_.size() - 1));
}

Expr Builder::constant(const Vector& value) {
  if (value.empty()) throw Error(ErrorCode::ShapeMismatch, "constant must have dim >= 1");
  value.require_finite("constant");
  Node n{.op = Op::Constant};
  n.dim = static_cast<std::uint32_t>(value.dim());
  n.aux = static_cast<std::uint32_t>(program_.constants_.size());
  program_.constants_.insert(program_.constants_.end(), value.begin(), value.end());
  return push(n, {});
}

Expr Builder::constant(double value) { return constant(Vector::scalar(value)); }

Expr Builder::variable(const std::string& name, std::size_t dim) {
  if (dim == 0) throw Error(ErrorCode::ShapeMismatch, "variable '" + name + "' must have dim >= 1");
  if (auto idx = program_.find_variable(name)) {
    const auto& var = program_.variables_[*idx];
    if (var.dim != dim) {
      throw Error(ErrorCode::ShapeMismatch, "variable '" + name + "' redeclared with dim " +
                                                std::to_string(dim) + " (was " +
                                                std::to_string(var.dim) + ")");
    }
    return Expr(this, var.node);
  }
  Node n{.op = Op::Variable};
  n.dim = static_cast<std::uint32_t>(dim);
  n.aux = static_cast<std::uint32_t>(program_.variables_.size());
  Expr e = push(n, {});
  program_.variables_.push_back({name, dim, e.index(), program_.packed_size_});
  program_.variable_index_.emplace(name, program_.variables_.size() - 1);
  program_.packed_size_ += dim;
  return e;
}

Expr Builder::add(Expr a, Expr b) {
  const Expr terms[] = {a, b};
  return add(terms);
}

Expr Builder::add(std::span<const Expr> terms) {
  if (terms.empty()) return constant(0.0);
  if (terms.size() == 1) return terms.front();
  std::vector<std::uint32_t> kids;
  kids.reserve(terms.size());
  std::uint32_t d = 1;
  for (Expr t : terms) {
    check_owner(t);
    d = broadcast_dim(d, program_.nodes_[t.index()].dim, "add");
    kids.push_back(t.index());
  }
  Node n{.op = Op::Add};
  n.dim = d;
  return push(n, kids);
}

Expr Builder::sub(Expr a, Expr b) {
  check_owner(a);
  check_owner(b);
  Node n{.op = Op::Sub};
  n.dim = broadcast_dim(program_.nodes_[a.index()].dim, program_.nodes_[b.index()].dim, "sub");
  const std::uint32_t kids[] = {a.index(), b.index()};
  return push(n, kids);
}

Expr Builder::mul(Expr a, Expr b) {
  check_owner(a);
  check_owner(b);
  Node n{.op = Op::Mul};
  n.dim = broadcast_dim(program_.nodes_[a.index()].dim, program_.nodes_[b.index()].dim, "mul");
  const std::uint32_t kids[] = {a.index(), b.index()};
  return push(n, kids);
}

Expr Builder::square(Expr a) {
  check_owner(a);
  Node n{.op = Op::Square};
  n.dim = program_.nodes_[a.index()].dim;
  const std::uint32_t kids[] = {a.index()};
  return push(n, kids);
}

Expr Builder::sum(Expr a) {
  check_owner(a);
  if (program_.nodes_[a.index()].dim == 1) return a;
  Node n{.op = Op::SumReduce};
  const std::uint32_t kids[] = {a.index()};
  return push(n, kids);
}

Expr Builder::scale(double factor, Expr a) {
  check_owner(a);
  if (!std::isfinite(factor)) throw Error(ErrorCode::NonFiniteResult, "scale factor");
  Node n{.op = Op::Scale};
  n.dim = program_.nodes_[a.index()].dim;
  n.param = factor;
  const std::uint32_t kids[] = {a.index()};
  return push(n, kids);
}

Expr Builder::dot(Expr a, Expr b) {
  check_owner(a);
  check_owner(b);
  if (program_.nodes_[a.index()].dim != program_.nodes_[b.index()].dim) {
    throw Error(ErrorCode::ShapeMismatch, "dot operands differ in dim");
  }
  Node n{.op = Op::Dot};
  const std::uint32_t kids[] = {a.index(), b.index()};
  return push(n, kids);
}

Expr Builder::unary(std::string_view name, Expr a) {
  check_owner(a);
  auto fn = lookup_unary(name);
  Node n{.op = Op::Unary};
  n.dim = program_.nodes_[a.index()].dim;
  n.aux = static_cast<std::uint32_t>(program_.unaries_.size());
  program_.unaries_.push_back(std::move(fn));
  const std::uint32_t kids[] = {a.index()};
  return push(n, kids);
}

Program Builder::finish(Expr root) {
  check_owner(root);
  if (program_.nodes_[root.index()].dim != 1) {
    throw Error(ErrorCode::ShapeMismatch, "loss root must be scalar");
  }
  program_.root_ = root.index();
  Program out = std::move(program_);
  program_ = Program{};
  return out;
}

Expr operator+(Expr a, Expr b) { return a.builder().add(a, b); }
Expr operator-(Expr a, Expr b) { return a.builder().sub(a, b); }
Expr operator*(Expr a, Expr b) { return a.builder().mul(a, b); }
Expr operator*(double s, Expr a) { return a.builder().scale(s, a); }
Expr operator*(Expr a, double s) { return a.builder().scale(s, a); }
Expr operator-(Expr a) { return a.builder().scale(-1.0, a); }
Expr operator+(Expr a, double c) { return a.builder().add(a, a.builder().constant(c)); }
Expr operator-(Expr a, double c) { return a.builder().sub(a, a.builder().constant(c)); }
Expr square(Expr a) { return a.builder().square(a); }
Expr sum(Expr a) { return a.builder().sum(a); }
Expr dot(Expr a, Expr b) { return a.builder().dot(a, b); }

// -------------------------------------------------------------- Evaluator

Evaluator::Evaluator(std::shared_ptr<const Program> program)
    : program_(std::move(program)),
      values_(program_->value_size_),
      adjoints_(program_->value_size_),
      bound_(program_->packed_size_) {}

std::vector<double> Evaluator::pack(const Bindings& bindings) const {
  std::vector<double> packed(program_->packed_size_);
  for (const auto& var : program_->variables_) {
    auto it = bindings.find(var.name);
    if (it == bindings.end()) {
      throw Error(ErrorCode::UnboundVariable, "variable '" + var.name + "' has no binding");
    }
    if (it->second.dim() != var.dim) {
      throw Error(ErrorCode::ShapeMismatch, "binding for '" + var.name + "' has dim " +
                                                std::to_string(it->second.dim()) + ", expected " +
                                                std::to_string(var.dim));
    }
    it->second.require_finite("binding '" + var.name + "'");
    std::copy(it->second.begin(), it->second.end(), packed.begin() + var.packed_offset);
  }
  return packed;
}

double Evaluator::forward_eval(const Bindings& bindings) { return forward(pack(bindings)); }

Bindings Evaluator::backward_eval(const Bindings& bindings) {
  std::vector<double> packed = pack(bindings);
  if (!cached_ || std::memcmp(packed.data(), bound_.data(), packed.size() * sizeof(double)) != 0) {
    throw Error(ErrorCode::StaleCache, "bindings differ from the last forward pass");
  }
  std::vector<double> grad(program_->packed_size_);
  backward(grad);
  Bindings out;
  for (const auto& [name, value] : bindings) {
    if (auto idx = program_->find_variable(name)) {
      const auto& var = program_->variables_[*idx];
      out.emplace(name, Vector(std::span<const double>(grad).subspan(var.packed_offset, var.dim)));
    } else {
      out.emplace(name, Vector(value.dim(), 0.0));
    }
  }
  return out;
}

double Evaluator::forward(std::span<const double> packed) {
  const Program& p = *program_;
  if (packed.size() != p.packed_size_) {
    throw Error(ErrorCode::ShapeMismatch, "packed bindings have wrong length");
  }
  std::copy(packed.begin(), packed.end(), bound_.begin());
  cached_ = false;
  double* val = values_.data();
  const std::uint32_t* kids = p.children_.data();

  for (std::size_t i = 0; i < p.nodes_.size(); ++i) {
    const Node& n = p.nodes_[i];
    double* out = val + n.offset;
    const std::uint32_t d = n.dim;
    switch (n.op) {
      case Op::Constant:
        std::copy_n(p.constants_.data() + n.aux, d, out);
        break;
      case Op::Variable:
        std::copy_n(packed.data() + p.variables_[n.aux].packed_offset, d, out);
        break;
      case Op::Add: {
        std::fill_n(out, d, 0.0);
        for (std::uint32_t c = 0; c < n.child_count; ++c) {
          const Node& ch = p.nodes_[kids[n.first_child + c]];
          const double* v = val + ch.offset;
          if (ch.dim == d) {
            for (std::uint32_t k = 0; k < d; ++k) out[k] += v[k];
          } else {
            for (std::uint32_t k = 0; k < d; ++k) out[k] += v[0];
          }
        }
        break;
      }
      case Op::Sub:
      case Op::Mul: {
        const Node& a = p.nodes_[kids[n.first_child]];
        const Node& b = p.nodes_[kids[n.first_child + 1]];
        const double* va = val + a.offset;
        const double* vb = val + b.offset;
        if (n.op == Op::Sub) {
          for (std::uint32_t k = 0; k < d; ++k) out[k] = at(va, a.dim, k) - at(vb, b.dim, k);
        } else {
          for (std::uint32_t k = 0; k < d; ++k) out[k] = at(va, a.dim, k) * at(vb, b.dim, k);
        }
        break;
      }
      case Op::Square: {
        const double* v = val + p.nodes_[kids[n.first_child]].offset;
        for (std::uint32_t k = 0; k < d; ++k) out[k] = v[k] * v[k];
        break;
      }
      case Op::SumReduce: {
        const Node& ch = p.nodes_[kids[n.first_child]];
        const double* v = val + ch.offset;
        double s = 0.0;
        for (std::uint32_t k = 0; k < ch.dim; ++k) s += v[k];
        out[0] = s;
        break;
      }
      case Op::Scale: {
        const double* v = val + p.nodes_[kids[n.first_child]].offset;
        for (std::uint32_t k = 0; k < d; ++k) out[k] = n.param * v[k];
        break;
      }
      case Op::Dot: {
        const Node& a = p.nodes_[kids[n.first_child]];
        const double* va = val + a.offset;
        const double* vb = val + p.nodes_[kids[n.first_child + 1]].offset;
        double s = 0.0;
        for (std::uint32_t k = 0; k < a.dim; ++k) s += va[k] * vb[k];
        out[0] = s;
        break;
      }
      case Op::Unary: {
        const double* v = val + p.nodes_[kids[n.first_child]].offset;
        const auto& f = p.unaries_[n.aux]->value;
        for (std::uint32_t k = 0; k < d; ++k) out[k] = f(v[k]);
        break;
      }
    }
    for (std::uint32_t k = 0; k < d; ++k) {
      if (!std::isfinite(out[k])) {
        throw Error(ErrorCode::NonFiniteResult, "node " + std::to_string(i) + " (" +
                                                    std::string(to_string(n.op)) +
                                                    ") produced a non-finite value");
      }
    }
  }
  cached_ = true;
  return val[p.nodes_[p.root_].offset];
}

void Evaluator::backward(std::span<double> grad) {
  const Program& p = *program_;
  if (!cached_) throw Error(ErrorCode::StaleCache, "backward called without a forward pass");
  if (grad.size() != p.packed_size_) {
    throw Error(ErrorCode::ShapeMismatch, "gradient buffer has wrong length");
  }
  std::fill(adjoints_.begin(), adjoints_.end(), 0.0);
  std::fill(grad.begin(), grad.end(), 0.0);
  const double* val = values_.data();
  double* adj = adjoints_.data();
  const std::uint32_t* kids = p.children_.data();
  adj[p.nodes_[p.root_].offset] = 1.0;

  // Accumulate `g[k]` into child `ch`, folding over k when the child was broadcast.
  auto accumulate = [&](const Node& ch, std::uint32_t d, auto&& g) {
    double* a = adj + ch.offset;
    if (ch.dim == d) {
      for (std::uint32_t k = 0; k < d; ++k) a[k] += g(k);
    } else {
      double s = 0.0;
      for (std::uint32_t k = 0; k < d; ++k) s += g(k);
      a[0] += s;
    }
  };

  for (std::size_t i = p.nodes_.size(); i-- > 0;) {
    const Node& n = p.nodes_[i];
    const double* g = adj + n.offset;
    const std::uint32_t d = n.dim;
    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Variable: {
        double* out = grad.data() + p.variables_[n.aux].packed_offset;
        for (std::uint32_t k = 0; k < d; ++k) out[k] += g[k];
        break;
      }
      case Op::Add:
        for (std::uint32_t c = 0; c < n.child_count; ++c) {
          accumulate(p.nodes_[kids[n.first_child + c]], d, [g](std::uint32_t k) { return g[k]; });
        }
        break;
      case Op::Sub: {
        const Node& a = p.nodes_[kids[n.first_child]];
        const Node& b = p.nodes_[kids[n.first_child + 1]];
        accumulate(a, d, [g](std::uint32_t k) { return g[k]; });
        accumulate(b, d, [g](std::uint32_t k) { return -g[k]; });
        break;
      }
      case Op::Mul: {
        const Node& a = p.nodes_[kids[n.first_child]];
        const Node& b = p.nodes_[kids[n.first_child + 1]];
        const double* va = val + a.offset;
        const double* vb = val + b.offset;
        accumulate(a, d, [&](std::uint32_t k) { return g[k] * at(vb, b.dim, k); });
        accumulate(b, d, [&](std::uint32_t k) { return g[k] * at(va, a.dim, k); });
        break;
      }
      case Op::Square: {
        const Node& ch = p.nodes_[kids[n.first_child]];
        const double* v = val + ch.offset;
        double* a = adj + ch.offset;
        for (std::uint32_t k = 0; k < d; ++k) a[k] += 2.0 * v[k] * g[k];
        break;
      }
      case Op::SumReduce: {
        const Node& ch = p.nodes_[kids[n.first_child]];
        double* a = adj + ch.offset;
        for (std::uint32_t k = 0; k < ch.dim; ++k) a[k] += g[0];
        break;
      }
      case Op::Scale: {
        double* a = adj + p.nodes_[kids[n.first_child]].offset;
        for (std::uint32_t k = 0; k < d; ++k) a[k] += n.param * g[k];
        break;
      }
      case Op::Dot: {
        const Node& an = p.nodes_[kids[n.first_child]];
        const Node& bn = p.nodes_[kids[n.first_child + 1]];
        const double* va = val + an.offset;
        const double* vb = val + bn.offset;
        double* aa = adj + an.offset;
        double* ab = adj + bn.offset;
        for (std::uint32_t k = 0; k < an.dim; ++k) {
          aa[k] += g[0] * vb[k];
          ab[k] += g[0] * va[k];
        }
        break;
      }
      case Op::Unary: {
        const Node& ch = p.nodes_[kids[n.first_child]];
        const double* v = val + ch.offset;
        double* a = adj + ch.offset;
        const auto& df = p.unaries_[n.aux]->derivative;
        for (std::uint32_t k = 0; k < d; ++k) a[k] += df(v[k]) * g[k];
        break;
      }
    }
  }
  for (double v : grad) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteResult, "non-finite gradient");
  }
}

// ------------------------------------------------------ finite differences

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + h;
    const double up = f(x);
    x[k] = saved - h;
    const double down = f(x);
    x[k] = saved;
    grad[k] = (up - down) / (2.0 * h);
    if (!std::isfinite(grad[k])) {
      throw Error(ErrorCode::NonFiniteResult, "finite difference at component " + std::to_string(k));
    }
  }
  return grad;
}

Bindings finite_diff_grad(const std::function<double(const Bindings&)>& f, const Bindings& point,
                          double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Bindings x = point;
  Bindings grad;
  for (auto& [name, value] : x) {
    Vector g(value.dim(), 0.0);
    for (std::size_t k = 0; k < value.dim(); ++k) {
      const double saved = value[k];
      value[k] = saved + h;
      const double up = f(x);
      value[k] = saved - h;
      const double down = f(x);
      value[k] = saved;
      g[k] = (up - down) / (2.0 * h);
      if (!std::isfinite(g[k])) {
        throw Error(ErrorCode::NonFiniteResult, "finite difference for '" + name + "'");
      }
    }
    grad.emplace(name, std::move(g));
  }
  return grad;
}

}  // namespace mbi::ad
