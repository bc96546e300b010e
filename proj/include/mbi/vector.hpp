#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mbi {

/// Dense real vector. Construction rejects NaN/Inf; the mutable accessors do
/// not re-check, so ingestion points (bindings, agent actions) call
/// require_finite() before admitting a value.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0);
  Vector(std::initializer_list<double> values);
  explicit Vector(std::vector<double> values);
  explicit Vector(std::span<const double> values);

  static Vector scalar(double value) { return Vector{value}; }

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> span() const noexcept { return data_; }
  std::span<double> span() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool all_finite() const noexcept;
  /// Throws Error(NonFiniteResult) naming `what` if any entry is NaN/Inf.
  void require_finite(const std::string& what) const;

  double dot(const Vector& other) const;
  double norm() const;
  double squared_norm() const;
  double sum() const;

  Vector& operator+=(const Vector& other);
  Vector& operator-=(const Vector& other);
  Vector& operator*=(double factor);

  friend Vector operator+(Vector a, const Vector& b) { return a += b; }
  friend Vector operator-(Vector a, const Vector& b) { return a -= b; }
  friend Vector operator*(Vector a, double s) { return a *= s; }
  friend Vector operator*(double s, Vector a) { return a *= s; }
  friend Vector operator-(Vector a) { return a *= -1.0; }

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

std::string to_string(const Vector& v);

}  // namespace mbi
