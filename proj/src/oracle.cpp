#include "mbi/oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "mbi/error.hpp"

namespace mbi {

double GridSpec::pitch(std::size_t axis) const {
  const auto [lo, hi] = bounds.at(axis);
  return (hi - lo) / static_cast<double>(resolution - 1);
}

std::size_t GridSpec::total_points() const {
  if (bounds.empty()) throw Error(ErrorCode::InvalidConfig, "grid has no dimensions");
  if (resolution < 3) throw Error(ErrorCode::InvalidConfig, "grid resolution must be >= 3");
  std::size_t total = 1;
  for (const auto& [lo, hi] : bounds) {
    if (!(lo < hi)) throw Error(ErrorCode::InvalidConfig, "grid bounds need lo < hi");
    if (total > max_points / resolution) {
      throw Error(ErrorCode::GridTooLarge, "grid exceeds " + std::to_string(max_points) + " points");
    }
    total *= resolution;
  }
  return total;
}

namespace {

// Decodes a flat index with the first axis most significant, so ascending
// flat order is lexicographic order of grid points.
void grid_point(const GridSpec& grid, std::size_t flat, std::vector<double>& out) {
  const std::size_t d = grid.dim();
  for (std::size_t k = d; k-- > 0;) {
    const std::size_t i = flat % grid.resolution;
    flat /= grid.resolution;
    const auto [lo, hi] = grid.bounds[k];
    out[k] = i + 1 == grid.resolution ? hi : lo + static_cast<double>(i) * grid.pitch(k);
  }
}

}  // namespace

GridPoint grid_search_min(const ScalarField& loss, const GridSpec& grid) {
  const std::size_t total = grid.total_points();
  std::vector<double> x(grid.dim());
  GridPoint best;
  best.value = std::numeric_limits<double>::infinity();
  std::size_t best_flat = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    grid_point(grid, flat, x);
    const double v = loss(x);
    if (v < best.value) {
      best.value = v;
      best_flat = flat;
    }
  }
  grid_point(grid, best_flat, x);
  best.argmin = Vector(x);
  return best;
}

std::vector<GridPoint> grid_local_minima(const ScalarField& loss, const GridSpec& grid, double tol) {
  const std::size_t total = grid.total_points();
  const std::size_t d = grid.dim();
  const std::size_t n = grid.resolution;
  std::vector<double> values(total);
  std::vector<double> x(d);
  for (std::size_t flat = 0; flat < total; ++flat) {
    grid_point(grid, flat, x);
    values[flat] = loss(x);
  }

  std::vector<std::size_t> stride(d, 1);
  for (std::size_t k = d - 1; k-- > 0;) stride[k] = stride[k + 1] * n;

  std::size_t neighbours = 1;
  for (std::size_t k = 0; k < d; ++k) neighbours *= 3;

  std::vector<GridPoint> found;
  std::vector<std::size_t> idx(d);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    bool interior = true;
    for (std::size_t k = 0; k < d; ++k) {
      idx[k] = rem / stride[k];
      rem %= stride[k];
      interior = interior && idx[k] > 0 && idx[k] + 1 < n;
    }
    if (!interior) continue;
    bool is_min = true;
    for (std::size_t code = 0; code < neighbours && is_min; ++code) {
      std::size_t c = code;
      long offset = 0;
      for (std::size_t k = 0; k < d; ++k) {
        offset += (static_cast<long>(c % 3) - 1) * static_cast<long>(stride[k]);
        c /= 3;
      }
      if (offset == 0) continue;
      is_min = values[flat + offset] > values[flat];
    }
    if (!is_min) continue;

    grid_point(grid, flat, x);
    std::vector<double> half(d);
    for (std::size_t k = 0; k < d; ++k) half[k] = grid.pitch(k);
    GridPoint p{Vector(x), values[flat]};
    while (*std::max_element(half.begin(), half.end()) > tol) {
      GridSpec zoom;
      zoom.resolution = 21;
      for (std::size_t k = 0; k < d; ++k) zoom.bounds.push_back({p.argmin[k] - half[k], p.argmin[k] + half[k]});
      p = grid_search_min(loss, zoom);
      for (double& h : half) h /= 10.0;
    }
    found.push_back(std::move(p));
  }
  std::sort(found.begin(), found.end(), [](const GridPoint& a, const GridPoint& b) {
    if (a.value != b.value) return a.value < b.value;
    return a.argmin.values() < b.argmin.values();
  });
  return found;
}

Vector quadratic_kkt_solution(std::span<const double> lambdas, double y_star) {
  double inv = 0.0;
  for (double l : lambdas) {
    if (!(l > 0.0)) throw Error(ErrorCode::NonPositiveLambda, "lambda must be positive");
    inv += 1.0 / l;
  }
  const double c = y_star / (1.0 + inv);
  Vector x(lambdas.size(), 0.0);
  for (std::size_t i = 0; i < lambdas.size(); ++i) x[i] = c / lambdas[i];
  return x;
}

std::vector<Vector> shifted_kkt_solution(std::span<const KktBlock> blocks, double y_star) {
  double centers = 0.0;
  double weight = 0.0;
  for (const auto& b : blocks) {
    if (!(b.lambda > 0.0)) throw Error(ErrorCode::NonPositiveLambda, "lambda must be positive");
    centers += b.center.sum();
    weight += static_cast<double>(b.center.dim()) / b.lambda;
  }
  const double total = (centers + weight * y_star) / (1.0 + weight);
  std::vector<Vector> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) {
    Vector x = b.center;
    for (double& v : x.span()) v -= (total - y_star) / b.lambda;
    out.push_back(std::move(x));
  }
  return out;
}

ConvexityReport convexity_probe(const ScalarField& loss, int samples, const GridSpec& domain, std::uint64_t seed) {
  if (samples < 1) throw Error(ErrorCode::InvalidConfig, "convexity probe needs samples");
  domain.total_points();
  std::mt19937_64 rng(seed);
  const std::size_t d = domain.dim();
  std::vector<double> a(d), b(d), m(d);
  ConvexityReport report;
  report.samples = samples;
  report.worst_gap = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    for (std::size_t k = 0; k < d; ++k) {
      std::uniform_real_distribution<double> u(domain.bounds[k].first, domain.bounds[k].second);
      a[k] = u(rng);
      b[k] = u(rng);
      m[k] = 0.5 * (a[k] + b[k]);
    }
    const double gap = loss(m) - 0.5 * (loss(a) + loss(b));
    if (gap > 1e-9) ++report.violations;
    if (gap > report.worst_gap) {
      report.worst_gap = gap;
      report.worst_a = Vector(a);
      report.worst_b = Vector(b);
    }
  }
  return report;
}

double lipschitz_probe(const std::function<std::vector<double>(std::span<const double>)>& gradient,
                       std::span<const double> point, int iterations, double h) {
  const std::size_t d = point.size();
  std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
  std::vector<double> plus(d), minus(d), hv(d);
  double estimate = 0.0;
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t k = 0; k < d; ++k) {
      plus[k] = point[k] + h * v[k];
      minus[k] = point[k] - h * v[k];
    }
    const auto gp = gradient(plus);
    const auto gm = gradient(minus);
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      hv[k] = (gp[k] - gm[k]) / (2.0 * h);
      norm += hv[k] * hv[k];
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    estimate = norm;
    for (std::size_t k = 0; k < d; ++k) v[k] = hv[k] / norm;
  }
  return estimate;
}

Vector quadratic_minimizer(const ScalarField& loss, std::span<const double> start, int newton_steps, double h) {
  const auto d = static_cast<Eigen::Index>(start.size());
  std::vector<double> x(start.begin(), start.end());
  std::vector<double> probe(x.size());
  auto f = [&](std::initializer_list<std::pair<Eigen::Index, double>> moves) {
    probe = x;
    for (auto [k, dx] : moves) probe[static_cast<std::size_t>(k)] += dx;
    return loss(probe);
  };
  for (int step = 0; step < newton_steps; ++step) {
    Eigen::MatrixXd hess(d, d);
    Eigen::VectorXd grad(d);
    const double f0 = loss(x);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double fp = f({{i, h}});
      const double fm = f({{i, -h}});
      grad(i) = (fp - fm) / (2.0 * h);
      hess(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
      for (Eigen::Index j = 0; j < i; ++j) {
        const double v = (f({{i, h}, {j, h}}) - f({{i, h}, {j, -h}}) - f({{i, -h}, {j, h}}) + f({{i, -h}, {j, -h}})) /
                         (4.0 * h * h);
        hess(i, j) = v;
        hess(j, i) = v;
      }
    }
    const Eigen::VectorXd delta = hess.ldlt().solve(-grad);
    for (Eigen::Index i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] += delta(i);
  }
  return Vector(x);
}

}  // namespace mbi
