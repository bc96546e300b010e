#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mbi/error.hpp"
#include "mbi/oracle.hpp"

using namespace mbi;

namespace {

double toy(std::span<const double> x, double y, double lambda) {
  const double s = x[0] + x[1] - y;
  return s * s + lambda * x[0] * x[0];
}

double kkt_loss(std::span<const double> x, std::span<const double> lambdas, double y) {
  const double s = std::accumulate(x.begin(), x.end(), 0.0) - y;
  double l = s * s;
  for (std::size_t i = 0; i < x.size(); ++i) l += lambdas[i] * x[i] * x[i];
  return l;
}

}  // namespace

TEST_CASE("grid search on the toy loss") {
  GridSpec grid{{{-5.0, 5.0}, {-5.0, 5.0}}, 1001};
  auto best = grid_search_min([](std::span<const double> x) { return toy(x, 3.0, 0.5); }, grid);
  CHECK(std::abs(best.argmin[0]) <= grid.pitch(0));
  CHECK(std::abs(best.argmin[1] - 3.0) <= grid.pitch(1));
  CHECK(grid.pitch(0) == doctest::Approx(0.01));
}

TEST_CASE("grid ties keep the lexicographically smallest point") {
  GridSpec grid{{{-1.0, 2.0}, {4.0, 5.0}}, 11};
  auto best = grid_search_min([](std::span<const double>) { return 1.0; }, grid);
  CHECK(best.argmin == Vector{-1.0, 4.0});
  CHECK(best.value == 1.0);
}

TEST_CASE("one-dimensional parabola") {
  GridSpec grid{{{-1.0, 1.0}}, 201};
  auto best = grid_search_min([](std::span<const double> x) { return x[0] * x[0]; }, grid);
  CHECK(std::abs(best.argmin[0]) <= 1e-15);
  CHECK(best.value <= 1e-30);
}

TEST_CASE("grid validation") {
  auto code_of = [](GridSpec g) {
    try {
      g.total_points();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  CHECK(code_of(GridSpec{{{1.0, 1.0}}, 11}) == ErrorCode::InvalidConfig);
  CHECK(code_of(GridSpec{{{0.0, 1.0}}, 2}) == ErrorCode::InvalidConfig);
  CHECK(code_of(GridSpec{{{0, 1}, {0, 1}, {0, 1}, {0, 1}}, 101}) == ErrorCode::GridTooLarge);
  CHECK(GridSpec{{{0, 1}, {0, 1}, {0, 1}, {0, 1}}, 100}.total_points() == 100'000'000);
}

TEST_CASE("KKT examples") {
  const double two_ones[] = {1.0, 1.0};
  auto x = quadratic_kkt_solution(two_ones, 3.0);
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(kkt_loss(x.span(), two_ones, 3.0) == doctest::Approx(3.0).epsilon(1e-15));

  const double one[] = {1.0};
  auto x1 = quadratic_kkt_solution(one, 2.0);
  CHECK(x1[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(kkt_loss(x1.span(), one, 2.0) == doctest::Approx(2.0).epsilon(1e-15));

  const double mixed[] = {0.5, 2.0, 7.0};
  auto z = quadratic_kkt_solution(mixed, 0.0);
  for (double v : z) CHECK(v == 0.0);

  CHECK_THROWS_AS(quadratic_kkt_solution(std::vector<double>{1.0, 0.0}, 1.0), Error);
}

TEST_CASE("KKT point agrees with the grid within a pitch for small N") {
  const std::vector<std::vector<double>> families{{1.0}, {1.0, 1.0}, {0.5, 2.0}, {1.0, 1.5, 3.0}};
  for (const auto& lambdas : families) {
    const double y = 2.0;
    GridSpec grid;
    grid.bounds.assign(lambdas.size(), {-1.0, 3.0});
    grid.resolution = lambdas.size() == 3 ? 201 : 801;
    auto best = grid_search_min([&](std::span<const double> x) { return kkt_loss(x, lambdas, y); }, grid);
    auto kkt = quadratic_kkt_solution(lambdas, y);
    for (std::size_t i = 0; i < lambdas.size(); ++i) CHECK(std::abs(best.argmin[i] - kkt[i]) <= grid.pitch(i));
  }
}

TEST_CASE("KKT point is stationary") {
  const double lambdas[] = {1.0, 1.01, 1.02, 1.5, 3.0, 10.0};
  auto x = quadratic_kkt_solution(lambdas, 50.0);
  const double s = x.sum() - 50.0;
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(2 * s + 2 * lambdas[i] * x[i]) <= 1e-12);
}

TEST_CASE("shifted KKT blocks are stationary") {
  const std::vector<KktBlock> blocks{{Vector{0.0}, 1.0}, {Vector{1.0, -1.0}, 2.0}, {Vector{0.5, 0.5, 0.5}, 0.5}};
  auto x = shifted_kkt_solution(blocks, 10.0);
  double total = 0.0;
  for (const auto& v : x) total += v.sum();
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (std::size_t k = 0; k < x[b].dim(); ++k)
      CHECK(std::abs(2 * (total - 10.0) + 2 * blocks[b].lambda * (x[b][k] - blocks[b].center[k])) <= 1e-12);
}

TEST_CASE("convexity probe") {
  GridSpec box{{{-3.0, 3.0}, {-3.0, 3.0}}, 3};
  auto quad = convexity_probe([](std::span<const double> x) { return toy(x, 10.0, 0.5) + 3 * x[1] * x[1]; }, 2000,
                              box, 1);
  CHECK(quad.violations == 0);
  CHECK(quad.samples == 2000);

  auto affine = convexity_probe([](std::span<const double> x) { return 3 * x[0] - 2 * x[1] + 1; }, 2000, box, 1);
  CHECK(affine.violations == 0);

  // double well plus coupling, the catalog's nonconvex landscape
  auto well = [](std::span<const double> x) {
    const double w = x[0] * x[0] - 1.0;
    const double s = x[0] + x[1] - 10.0;
    return w * w + s * s;
  };
  GridSpec near{{{-1.5, 1.5}, {8.0, 12.0}}, 3};
  auto nc = convexity_probe(well, 2000, near, 1);
  CHECK(nc.violations >= 1);
  REQUIRE(nc.worst_a.dim() == 2);
  const Vector mid = 0.5 * (nc.worst_a + nc.worst_b);
  CHECK(well(mid.span()) > 0.5 * (well(nc.worst_a.span()) + well(nc.worst_b.span())));
}

TEST_CASE("local minima of the double well") {
  auto well = [](std::span<const double> x) {
    const double w = x[0] * x[0] - 1.0;
    const double s = x[0] + x[1] - 10.0;
    return w * w + s * s;
  };
  GridSpec grid{{{-3.0, 3.0}, {4.0, 16.0}}, 241};
  auto minima = grid_local_minima(well, grid);
  REQUIRE(minima.size() == 2);
  std::sort(minima.begin(), minima.end(), [](const auto& a, const auto& b) { return a.argmin[0] < b.argmin[0]; });
  // the coupling term vanishes at x1 = +-1, x2 = 10 -+ 1
  CHECK(std::abs(minima[0].argmin[0] + 1.0) <= 1e-6);
  CHECK(std::abs(minima[0].argmin[1] - 11.0) <= 1e-6);
  CHECK(std::abs(minima[1].argmin[0] - 1.0) <= 1e-6);
  CHECK(std::abs(minima[1].argmin[1] - 9.0) <= 1e-6);
}

TEST_CASE("lipschitz probe recovers the largest Hessian eigenvalue") {
  // Hessian of the toy loss with lambda 0.5 is [[3, 2], [2, 2]]
  auto grad = [](std::span<const double> x) {
    const double s = x[0] + x[1] - 10.0;
    return std::vector<double>{2 * s + x[0], 2 * s};
  };
  const double at[] = {0.3, 2.0};
  CHECK(lipschitz_probe(grad, at) == doctest::Approx((5.0 + std::sqrt(17.0)) / 2.0).epsilon(1e-6));
}

TEST_CASE("Newton oracle is exact on quadratics") {
  auto f = [](std::span<const double> x) { return toy(x, 10.0, 0.5); };
  const double start[] = {4.0, -3.0};
  auto x = quadratic_minimizer(f, start);
  CHECK(std::abs(x[0]) <= 1e-9);
  CHECK(std::abs(x[1] - 10.0) <= 1e-9);
}
