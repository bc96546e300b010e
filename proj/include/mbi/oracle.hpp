#pragma once

// Independent ground truth for the mechanism: exhaustive grids, closed-form
// KKT points for the quadratic families, and regularity probes. Nothing here
// touches the AD engine; callers pass plain callables.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mbi/vector.hpp"

namespace mbi {

using ScalarField = std::function<double(std::span<const double>)>;

struct GridSpec {
  std::vector<std::pair<double, double>> bounds;  // per dimension
  std::size_t resolution = 101;                    // points per dimension

  static constexpr std::size_t max_points = 100'000'000;

  std::size_t dim() const noexcept { return bounds.size(); }
  double pitch(std::size_t axis) const;
  /// Throws InvalidConfig for lo >= hi or resolution < 3, GridTooLarge past max_points.
  std::size_t total_points() const;
};

struct GridPoint {
  Vector argmin;
  double value = 0.0;
};

/// Exhaustive scan; ties keep the lexicographically smallest point.
GridPoint grid_search_min(const ScalarField& loss, const GridSpec& grid);

/// Strict local minima of the sampled grid (all 3^d - 1 neighbours larger),
/// each refined by repeated zoomed grids until the pitch drops below `tol`.
/// Sorted by value, then lexicographically.
std::vector<GridPoint> grid_local_minima(const ScalarField& loss, const GridSpec& grid, double tol = 1e-9);

/// argmin (sum x - y)^2 + sum lambda_i x_i^2:  x_i = c / lambda_i, c = y / (1 + sum 1/lambda_j).
Vector quadratic_kkt_solution(std::span<const double> lambdas, double y_star);

/// Block with cost lambda * ||x - center||^2.
struct KktBlock {
  Vector center;
  double lambda = 1.0;
};

/// argmin (sum of all components - y)^2 + sum lambda_i ||x_i - c_i||^2:
/// x_i = c_i - (S - y) / lambda_i with S = (C + D y) / (1 + D),
/// C = sum of all center components, D = sum dim_i / lambda_i.
std::vector<Vector> shifted_kkt_solution(std::span<const KktBlock> blocks, double y_star);

struct ConvexityReport {
  int samples = 0;
  int violations = 0;
  double worst_gap = 0.0;  // max f(mid) - (f(a) + f(b)) / 2
  Vector worst_a;
  Vector worst_b;
};

/// Midpoint test f((a+b)/2) <= (f(a)+f(b))/2 + 1e-9 over uniform pairs in `domain`.
ConvexityReport convexity_probe(const ScalarField& loss, int samples, const GridSpec& domain, std::uint64_t seed);

/// Largest Hessian eigenvalue magnitude at `point`, by power iteration on
/// finite-difference Hessian-vector products of `gradient`.
double lipschitz_probe(const std::function<std::vector<double>(std::span<const double>)>& gradient,
                       std::span<const double> point, int iterations = 100, double h = 1e-4);

/// Newton steps with a finite-difference Hessian of `loss`; exact (to
/// rounding) for quadratics.
Vector quadratic_minimizer(const ScalarField& loss, std::span<const double> start, int newton_steps = 3,
                           double h = 1e-3);

}  // namespace mbi
