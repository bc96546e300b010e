#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mbi/cli.hpp"
#include "mbi/error.hpp"

using namespace mbi;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Drops the last CSV column.
std::string without_wall(const std::string& csv) {
  std::string out;
  for (const auto& l : lines(csv)) out += l.substr(0, l.rfind(',')) + "\n";
  return out;
}

struct Cli {
  int code;
  std::string out, err;
};

Cli cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mbi");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mbi_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ConfigError config_error(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e;
  }
  FAIL("config was accepted");
  return ConfigError(ErrorCode::IoError, 0, "");
}

}  // namespace

TEST_CASE("planner tolerances") {
  auto o = parse_config("[planner]\nepsilon = 1e-10\ntau = 1e-6\n");
  CHECK(*o.epsilon == 1e-10);
  CHECK(*o.tau == 1e-6);
  CHECK_FALSE(o.max_cycles);
}

TEST_CASE("agent section") {
  auto o = parse_config("# comment\n[agent.1]\nlambda = 0.5   # trailing\nrho = 0.1\nstart = 1, -2\n");
  const auto& a = o.agents.at(1);
  CHECK(*a.lambda == 0.5);
  CHECK(*a.rho == 0.1);
  CHECK(*a.start == std::vector<double>{1.0, -2.0});
}

TEST_CASE("config errors carry the line") {
  auto bare = config_error("epsilon = fast");
  CHECK(bare.code() == ErrorCode::TypeMismatch);
  CHECK(bare.line() == 1);

  auto typed = config_error("[planner]\n\nepsilon = fast\n");
  CHECK(typed.code() == ErrorCode::TypeMismatch);
  CHECK(typed.line() == 3);

  CHECK(config_error("[planner]\nmax_cycles = 2.5").code() == ErrorCode::TypeMismatch);
  CHECK(config_error("[planner]\nstop_on_convergence = yes").code() == ErrorCode::TypeMismatch);
  CHECK(config_error("[prior]\nspec = uniform:2,1").code() == ErrorCode::TypeMismatch);

  auto unknown = config_error("[planner]\ntau = 1\nwarp = 9\n");
  CHECK(unknown.code() == ErrorCode::UnknownKey);
  CHECK(unknown.line() == 3);
  CHECK(config_error("[agent.2]\ncolour = 1").code() == ErrorCode::UnknownKey);
  CHECK(config_error("[noise]\nmu = 1").code() == ErrorCode::UnknownKey);

  CHECK(config_error("[planner\ntau = 1").code() == ErrorCode::ParseError);
  CHECK(config_error("[weather]\n").code() == ErrorCode::ParseError);
  CHECK(config_error("[agent.x]\n").code() == ErrorCode::ParseError);
  CHECK(config_error("[planner]\ntau 1").code() == ErrorCode::ParseError);
  CHECK(config_error("[planner]\ntau =").code() == ErrorCode::ParseError);
}

TEST_CASE("overrides merge onto catalog defaults") {
  auto spec = find_scenario("assembly_line");
  auto o = parse_config(
      "[planner]\nmax_cycles = 7\n[graph]\ny_star = 4\n[agent.1]\nlambda = 2\n[noise]\nsigma = 0.5\n"
      "[schedule]\nkind = step\nat = 3\n[prior]\nspec = uniform:1,2\n");
  apply_config(spec, o);
  CHECK(spec.planner.max_cycles == 7);
  CHECK(spec.param("y_star") == 4.0);
  CHECK(*spec.agents.at(1).lambda == 2.0);
  CHECK(spec.noise.sigma == 0.5);
  CHECK(spec.schedule.kind == ScheduleSpec::Kind::Step);
  CHECK(spec.schedule.at == 3);
  CHECK(spec.prior->describe() == "uniform:1,2");

  auto bad = parse_config("[graph]\n\nwidth = 3\n");
  try {
    apply_config(spec, bad);
    FAIL("expected UnknownKey");
  } catch (const ConfigError& e) {
    CHECK(e.code() == ErrorCode::UnknownKey);
    CHECK(e.line() == 3);
  }
}

TEST_CASE("trace CSV layout") {
  auto spec = find_scenario("assembly_line");
  spec.planner.max_cycles = 1;
  auto r = run_scenario(spec, 0);
  auto csv = trace_csv(r.run);
  auto rows = lines(csv);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == "cycle,loss,grad_norm,total_effort,wall_nanos");
  CHECK(rows[1].rfind("1,100,", 0) == 0);
  CHECK(csv.back() == '\n');
  CHECK(csv.find('\r') == std::string::npos);
}

TEST_CASE("loss column never rises on a convex noise-free run") {
  auto r = run_scenario(find_scenario("assembly_line"), 0);
  auto rows = lines(trace_csv(r.run));
  double previous = INFINITY;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto first = rows[k].find(',');
    const double loss = std::stod(rows[k].substr(first + 1, rows[k].find(',', first + 1) - first - 1));
    CHECK(loss <= previous);
    previous = loss;
  }
}

TEST_CASE("reals round-trip through the CSV") {
  auto r = run_scenario(find_scenario("noisy"), 3);
  auto rows = lines(trace_csv(r.run));
  REQUIRE(rows.size() == r.run.traces.size() + 1);
  for (std::size_t k = 0; k < r.run.traces.size(); ++k) {
    std::istringstream in(rows[k + 1]);
    std::string cycle, loss;
    std::getline(in, cycle, ',');
    std::getline(in, loss, ',');
    CHECK(std::stod(loss) == r.run.traces[k].loss);
  }
}

TEST_CASE("summary lines") {
  auto ok = run_scenario(find_scenario("assembly_line"), 0);
  auto text = summary_text(ok, {{"seed", "0"}});
  CHECK(text.find("converged: true\n") != std::string::npos);
  auto at = text.find("oracle_gap: ");
  REQUIRE(at != std::string::npos);
  CHECK(std::stod(text.substr(at + 12)) < 1e-6);
  CHECK(text.find("seed: 0\n") != std::string::npos);

  auto spec = find_scenario("assembly_line");
  spec.planner.max_cycles = 5;
  auto cut = run_scenario(spec, 0);
  auto short_text = summary_text(cut);
  CHECK(short_text.find("converged: false\n") != std::string::npos);
  CHECK(short_text.find("cycles_used: 5\n") != std::string::npos);
}

TEST_CASE("run command writes deterministic files") {
  auto a = scratch("run_a"), b = scratch("run_b");
  auto ra = cli({"run", "noisy", "--seed", "9", "--out", a.string()});
  auto rb = cli({"run", "noisy", "--seed", "9", "--out", b.string()});
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(without_wall(slurp(a / "trace.csv")) == without_wall(slurp(b / "trace.csv")));
  CHECK(slurp(a / "summary.txt") == slurp(b / "summary.txt"));
  CHECK(ra.out.find("converged: ") != std::string::npos);

  auto c = scratch("run_c");
  cli({"run", "noisy", "--seed", "10", "--out", c.string()});
  CHECK(without_wall(slurp(a / "trace.csv")) != without_wall(slurp(c / "trace.csv")));
}

TEST_CASE("run command applies a config file") {
  auto dir = scratch("config");
  {
    std::ofstream f(dir / "override.ini");
    f << "[planner]\nmax_cycles = 3\nstop_on_convergence = false\n";
  }
  auto r = cli({"run", "assembly_line", "--config", (dir / "override.ini").string(), "--out", dir.string()});
  REQUIRE(r.code == 0);
  CHECK(lines(slurp(dir / "trace.csv")).size() == 4);

  {
    std::ofstream f(dir / "broken.ini");
    f << "[planner]\nepsilon = fast\n";
  }
  auto bad = cli({"run", "assembly_line", "--config", (dir / "broken.ini").string(), "--out", dir.string()});
  CHECK(bad.code != 0);
  CHECK(bad.err.rfind("error: ", 0) == 0);
  CHECK(bad.err.find("line 2") != std::string::npos);
  CHECK(std::count(bad.err.begin(), bad.err.end(), '\n') == 1);
}

TEST_CASE("command failures exit nonzero with one line") {
  auto dir = scratch("fail");
  auto unknown = cli({"run", "no_such_scenario", "--out", dir.string()});
  CHECK(unknown.code != 0);
  CHECK(unknown.err.rfind("error: ", 0) == 0);
  CHECK(std::count(unknown.err.begin(), unknown.err.end(), '\n') == 1);

  CHECK(cli({"run", "assembly_line", "--config", (dir / "missing.ini").string(), "--out", dir.string()}).code != 0);
  CHECK(cli({"bench", "--n", "1000,100", "--out", dir.string()}).code != 0);
  CHECK(cli({"bench", "--n", "2000000", "--out", dir.string()}).code != 0);
  CHECK(cli({"frobnicate"}).code != 0);

  auto listed = cli({"list"});
  CHECK(listed.code == 0);
  CHECK(lines(listed.out).size() >= 10);
}

TEST_CASE("bench output") {
  const std::size_t one[] = {100};
  auto single = bench_scaling(one, 3, 0, 5);
  REQUIRE(single.rows.size() == 1);
  CHECK_FALSE(single.slope);
  CHECK(single.rows[0].repetitions.size() == 5);
  CHECK(single.rows[0].median_nanos > 0);

  auto dir = scratch("bench");
  auto r = cli({"bench", "--n", "100,200", "--cycles", "2", "--reps", "5", "--out", dir.string()});
  REQUIRE(r.code == 0);
  auto rows = lines(slurp(dir / "bench.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "n,median_nanos_per_cycle");
  CHECK(r.out.find("slope: ") != std::string::npos);

  const double x[] = {1, 10, 100}, y[] = {3, 30, 300};
  CHECK(*loglog_slope(x, y) == doctest::Approx(1.0));
}

TEST_CASE("audit command reports truthfulness") {
  auto dir = scratch("audit");
  auto r = cli({"audit", "asymmetric_info", "--prior", "uniform:1,2", "--samples", "2000", "--out", dir.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("bic_argmax_at_truth: true") != std::string::npos);
  CHECK(slurp(dir / "audit_summary.txt").find("bic_argmax_at_truth: true") != std::string::npos);
  CHECK(lines(slurp(dir / "audit.csv")).size() == 1 + 5 * 17);
}

TEST_CASE("seed falls back to the environment") {
  ::unsetenv("MBI_SEED");
  CHECK(default_seed(4) == 4);
  ::setenv("MBI_SEED", "18446744073709551615", 1);
  CHECK(default_seed(4) == 18446744073709551615ull);
  ::setenv("MBI_SEED", "-3", 1);
  CHECK_THROWS_AS(default_seed(4), Error);
  ::unsetenv("MBI_SEED");
}
