#include "mbi/vector.hpp"

#include <cmath>
#include <numeric>

#include "mbi/error.hpp"
#include "mbi/format.hpp"

namespace mbi {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnboundVariable: return "UnboundVariable";
    case ErrorCode::NonFiniteResult: return "NonFiniteResult";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownFunction: return "UnknownFunction";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::MultipleLossNodes: return "MultipleLossNodes";
    case ErrorCode::NoLossNode: return "NoLossNode";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::InvalidGraph: return "InvalidGraph";
    case ErrorCode::NonFiniteAction: return "NonFiniteAction";
    case ErrorCode::NonConvexCost: return "NonConvexCost";
    case ErrorCode::MissingCost: return "MissingCost";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::UnknownAgent: return "UnknownAgent";
    case ErrorCode::InvalidPrior: return "InvalidPrior";
    case ErrorCode::SCCViolation: return "SCCViolation";
    case ErrorCode::GridTooLarge: return "GridTooLarge";
    case ErrorCode::NonPositiveLambda: return "NonPositiveLambda";
    case ErrorCode::UnknownScenario: return "UnknownScenario";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Vector::Vector(std::size_t dim, double fill) : data_(dim, fill) {
  require_finite("Vector fill");
}

Vector::Vector(std::initializer_list<double> values) : data_(values) {
  require_finite("Vector literal");
}

Vector::Vector(std::vector<double> values) : data_(std::move(values)) {
  require_finite("Vector");
}

Vector::Vector(std::span<const double> values) : data_(values.begin(), values.end()) {
  require_finite("Vector");
}

bool Vector::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Vector::require_finite(const std::string& what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw Error(ErrorCode::NonFiniteResult,
                  what + " has non-finite entry at index " + std::to_string(i));
    }
  }
}

double Vector::dot(const Vector& other) const {
  if (other.dim() != dim()) {
    throw Error(ErrorCode::ShapeMismatch, "dot of dim " + std::to_string(dim()) +
                                              " with dim " + std::to_string(other.dim()));
  }
  return std::inner_product(data_.begin(), data_.end(), other.data_.begin(), 0.0);
}

double Vector::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

double Vector::norm() const { return std::sqrt(squared_norm()); }

double Vector::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

Vector& Vector::operator+=(const Vector& other) {
  if (other.dim() != dim()) throw Error(ErrorCode::ShapeMismatch, "vector += dim mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Vector& Vector::operator-=(const Vector& other) {
  if (other.dim() != dim()) throw Error(ErrorCode::ShapeMismatch, "vector -= dim mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Vector& Vector::operator*=(double factor) {
  for (double& v : data_) v *= factor;
  return *this;
}

std::string to_string(const Vector& v) {
  std::string out = "(";
  for (std::size_t i = 0; i < v.dim(); ++i) {
    if (i) out += ", ";
    out += format_real(v[i]);
  }
  return out + ")";
}

}  // namespace mbi
