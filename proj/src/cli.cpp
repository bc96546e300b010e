#include "mbi/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mbi/format.hpp"

namespace mbi {

// ------------------------------------------------------------------- config

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct LineReader {
  int line;
  std::string_view key;
  std::string_view value;

  [[noreturn]] void mismatch(std::string_view expected) const {
    throw ConfigError(ErrorCode::TypeMismatch, line,
                      std::string(key) + " expects " + std::string(expected) + ", got '" + std::string(value) + "'");
  }

  double real() const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(v)) mismatch("a real number");
    return v;
  }

  int integer() const {
    int v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size()) mismatch("an integer");
    return v;
  }

  bool boolean() const {
    if (value == "true") return true;
    if (value == "false") return false;
    mismatch("true or false");
  }

  std::string text() const {
    std::string_view v = value;
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    if (v.empty()) mismatch("a non-empty string");
    return std::string(v);
  }

  std::vector<double> reals() const {
    std::vector<double> out;
    std::string_view rest = value;
    while (true) {
      const auto comma = rest.find(',');
      LineReader part{line, key, trim(rest.substr(0, comma))};
      try {
        out.push_back(part.real());
      } catch (const ConfigError&) {
        mismatch("a comma-separated list of reals");
      }
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return out;
  }

  [[noreturn]] void unknown(std::string_view section) const {
    throw ConfigError(ErrorCode::UnknownKey, line,
                      "unknown key '" + std::string(key) + "' in [" + std::string(section) + "]");
  }
};

void read_planner(ConfigOverrides& o, const LineReader& r) {
  if (r.key == "epsilon") o.epsilon = r.real();
  else if (r.key == "tau") o.tau = r.real();
  else if (r.key == "max_cycles") o.max_cycles = r.integer();
  else if (r.key == "stop_on_convergence") o.stop_on_convergence = r.boolean();
  else if (r.key == "record_agents") o.record_agents = r.boolean();
  else r.unknown("planner");
}

void read_agent(AgentOverride& a, const LineReader& r) {
  if (r.key == "lambda") a.lambda = r.real();
  else if (r.key == "reported_lambda") a.reported_lambda = r.real();
  else if (r.key == "rho") a.rho = r.real();
  else if (r.key == "eta") a.eta = r.real();
  else if (r.key == "inner_eta") a.inner_eta = r.real();
  else if (r.key == "max_effort") a.max_effort = r.integer();
  else if (r.key == "strategy") a.strategy = r.text();
  else if (r.key == "start") a.start = r.reals();
  else r.unknown("agent");
}

void read_schedule(ConfigOverrides& o, const LineReader& r) {
  if (r.key == "kind") {
    const std::string k = r.text();
    if (k == "none") o.schedule_kind = ScheduleSpec::Kind::None;
    else if (k == "step") o.schedule_kind = ScheduleSpec::Kind::Step;
    else if (k == "sine") o.schedule_kind = ScheduleSpec::Kind::Sine;
    else r.mismatch("none, step or sine");
  } else if (r.key == "at") {
    o.schedule_at = r.integer();
  } else if (r.key == "before") {
    o.schedule_before = r.real();
  } else if (r.key == "after") {
    o.schedule_after = r.real();
  } else if (r.key == "amplitude") {
    o.schedule_amplitude = r.real();
  } else if (r.key == "period") {
    o.schedule_period = r.real();
  } else {
    r.unknown("schedule");
  }
}

}  // namespace

ConfigOverrides parse_config(std::string_view text) {
  ConfigOverrides o;
  std::string section = "planner";  // keys before any header
  std::uint32_t agent_id = 0;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(ErrorCode::ParseError, line_no, "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.rfind("agent.", 0) == 0) {
        const std::string_view id = std::string_view(section).substr(6);
        auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), agent_id);
        if (id.empty() || ec != std::errc{} || ptr != id.data() + id.size()) {
          throw ConfigError(ErrorCode::ParseError, line_no, "agent section needs a numeric id");
        }
        o.agents[agent_id];
      } else if (section != "planner" && section != "graph" && section != "noise" && section != "schedule" &&
                 section != "prior") {
        throw ConfigError(ErrorCode::ParseError, line_no, "unknown section [" + section + "]");
      }
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(ErrorCode::ParseError, line_no, "expected key = value");
    const LineReader r{line_no, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (r.key.empty()) throw ConfigError(ErrorCode::ParseError, line_no, "missing key");
    if (r.value.empty()) throw ConfigError(ErrorCode::ParseError, line_no, "missing value");

    if (section == "planner") {
      read_planner(o, r);
    } else if (section == "graph") {
      o.graph[std::string(r.key)] = r.real();
      o.graph_lines[std::string(r.key)] = line_no;
    } else if (section == "noise") {
      if (r.key != "sigma") r.unknown(section);
      o.sigma = r.real();
    } else if (section == "schedule") {
      read_schedule(o, r);
    } else if (section == "prior") {
      if (r.key != "spec") r.unknown(section);
      try {
        o.prior = TypePrior::parse(r.text());
      } catch (const Error& e) {
        if (dynamic_cast<const ConfigError*>(&e)) throw;
        throw ConfigError(ErrorCode::TypeMismatch, line_no, e.what());
      }
    } else {
      read_agent(o.agents[agent_id], r);
    }
  }
  return o;
}

ConfigOverrides load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_config(ScenarioSpec& spec, const ConfigOverrides& o) {
  if (o.epsilon) spec.planner.epsilon = *o.epsilon;
  if (o.tau) spec.planner.tau = *o.tau;
  if (o.max_cycles) spec.planner.max_cycles = *o.max_cycles;
  if (o.stop_on_convergence) spec.planner.stop_on_convergence = *o.stop_on_convergence;
  if (o.record_agents) spec.planner.record_agents = *o.record_agents;
  for (const auto& [key, value] : o.graph) {
    auto it = spec.params.find(key);
    if (it == spec.params.end()) {
      auto line = o.graph_lines.find(key);
      throw ConfigError(ErrorCode::UnknownKey, line == o.graph_lines.end() ? 0 : line->second,
                        "scenario '" + spec.name + "' has no graph parameter '" + key + "'");
    }
    it->second = value;
  }
  for (const auto& [id, a] : o.agents) {
    AgentOverride& target = spec.agents[id];
    if (a.lambda) target.lambda = a.lambda;
    if (a.reported_lambda) target.reported_lambda = a.reported_lambda;
    if (a.rho) target.rho = a.rho;
    if (a.eta) target.eta = a.eta;
    if (a.inner_eta) target.inner_eta = a.inner_eta;
    if (a.max_effort) target.max_effort = a.max_effort;
    if (a.strategy) target.strategy = a.strategy;
    if (a.start) target.start = a.start;
  }
  if (o.sigma) spec.noise.sigma = *o.sigma;
  if (o.schedule_kind) spec.schedule.kind = *o.schedule_kind;
  if (o.schedule_at) spec.schedule.at = *o.schedule_at;
  if (o.schedule_before) spec.schedule.before = *o.schedule_before;
  if (o.schedule_after) spec.schedule.after = *o.schedule_after;
  if (o.schedule_amplitude) spec.schedule.amplitude = *o.schedule_amplitude;
  if (o.schedule_period) spec.schedule.period = *o.schedule_period;
  if (o.prior) spec.prior = *o.prior;
}

// ------------------------------------------------------------------ writers

namespace {

void write_file(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << body;
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace

std::string trace_csv(const RunResult& result) {
  std::string out = "cycle,loss,grad_norm,total_effort,wall_nanos\n";
  for (const auto& t : result.traces) {
    out += std::to_string(t.cycle);
    out += ',';
    out += format_real(t.loss);
    out += ',';
    out += format_real(t.grad_norm);
    out += ',';
    out += std::to_string(t.total_effort);
    out += ',';
    out += std::to_string(t.wall_nanos);
    out += '\n';
  }
  return out;
}

void emit_trace_csv(const RunResult& result, const std::filesystem::path& path) {
  write_file(path, trace_csv(result));
}

std::string summary_text(const ScenarioReport& report, const std::vector<std::pair<std::string, std::string>>& extra) {
  std::string out;
  auto line = [&](std::string_view k, std::string_view v) {
    out.append(k).append(": ").append(v).append("\n");
  };
  const auto& traces = report.run.traces;
  line("converged", report.run.converged ? "true" : "false");
  line("cycles_used", std::to_string(report.run.cycles_used));
  if (!traces.empty()) {
    line("final_loss", format_real(traces.back().loss));
    line("final_grad_norm", format_real(traces.back().grad_norm));
  }
  if (report.oracle_gap) line("oracle_gap", format_real(*report.oracle_gap));
  for (const auto& [k, v] : report.entries) line(k, v);
  for (const auto& [k, v] : extra) line(k, v);
  return out;
}

void emit_summary(const ScenarioReport& report, const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, std::string>>& extra) {
  write_file(path, summary_text(report, extra));
}

// -------------------------------------------------------------------- bench

std::optional<double> loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / sxx;
}

BenchResult bench_scaling(std::span<const std::size_t> n_values, int cycles, std::uint64_t seed, int repetitions) {
  if (cycles < 1 || repetitions < 1) throw Error(ErrorCode::InvalidConfig, "bench needs cycles >= 1 and reps >= 1");
  for (std::size_t k = 0; k < n_values.size(); ++k) {
    if (n_values[k] < 1 || n_values[k] > 1'000'000) throw Error(ErrorCode::InvalidConfig, "bench n must be in [1, 1e6]");
    if (k > 0 && n_values[k] <= n_values[k - 1]) throw Error(ErrorCode::InvalidConfig, "bench n values must ascend");
  }
  BenchResult result;
  for (std::size_t n : n_values) {
    ScenarioSpec spec = find_scenario("scaling_bench");
    spec.params["n"] = static_cast<double>(n);
    spec.planner.record_agents = false;
    spec.planner.stop_on_convergence = false;
    Instance inst = instantiate(spec);
    Mechanism m(std::move(inst.graph), std::move(inst.agents), spec.planner, spec.noise, seed);
    m.run_cycle();  // warm-up; agents only start moving from the second cycle
    BenchRow row;
    row.n = n;
    for (int rep = 0; rep < repetitions; ++rep) {
      std::int64_t nanos = 0;
      for (int c = 0; c < cycles; ++c) nanos += m.run_cycle().wall_nanos;
      row.repetitions.push_back(static_cast<double>(nanos) / cycles);
    }
    std::vector<double> sorted = row.repetitions;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    row.median_nanos = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    result.rows.push_back(std::move(row));
  }
  std::vector<double> xs, ys;
  for (const auto& r : result.rows) {
    xs.push_back(static_cast<double>(r.n));
    ys.push_back(r.median_nanos);
  }
  result.slope = loglog_slope(xs, ys);
  return result;
}

std::string bench_csv(const BenchResult& result) {
  std::string out = "n,median_nanos_per_cycle\n";
  for (const auto& r : result.rows) out += std::to_string(r.n) + "," + format_real(r.median_nanos) + "\n";
  return out;
}

std::uint64_t default_seed(std::uint64_t fallback) {
  const char* env = std::getenv("MBI_SEED");
  if (!env || !*env) return fallback;
  std::uint64_t v = 0;
  const std::string_view s(env);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::InvalidConfig, "MBI_SEED must be an unsigned 64-bit integer");
  }
  return v;
}

// ---------------------------------------------------------------- commands

namespace {

std::vector<std::pair<std::string, std::string>> run_audit(const ScenarioSpec& spec, const TypePrior& prior,
                                                            int samples, std::uint64_t seed, std::string& table) {
  if (!spec.params.count("n") || !spec.params.count("y_star")) {
    throw Error(ErrorCode::InvalidConfig, "audit needs a scenario with parameters n and y_star");
  }
  const TypeEconomy economy =
      TypeEconomy::quadratic(static_cast<std::size_t>(spec.param("n")), spec.param("y_star"));
  std::vector<double> grid;
  std::vector<double> truths;
  if (prior.is_degenerate()) {
    grid = {prior.min()};
    truths = grid;
  } else {
    for (int k = 0; k < 17; ++k) grid.push_back(prior.min() + (prior.max() - prior.min()) * k / 16.0);
    grid.back() = prior.max();
    for (int k : {2, 5, 8, 11, 14}) truths.push_back(grid[static_cast<std::size_t>(k)]);
  }
  table = "truth,report,expected_utility\n";
  bool all_truthful = true;
  std::string verdicts;
  for (double truth : truths) {
    const BicAudit audit = bic_audit(economy, 0, prior, truth, grid, samples, seed);
    for (const auto& row : audit.rows) {
      table += format_real(truth) + "," + format_real(row.report) + "," + format_real(row.expected_utility) + "\n";
    }
    all_truthful = all_truthful && audit.argmax_within_one_step;
    verdicts += (verdicts.empty() ? "" : ",") + std::string(to_string(audit.verdict));
  }
  return {{"prior", prior.describe()},
          {"bic_samples", std::to_string(samples)},
          {"bic_verdicts", verdicts},
          {"bic_argmax_at_truth", all_truthful ? "true" : "false"}};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Marginal-benefit incentive mechanism runner"};
  app.require_subcommand(1);

  std::string scenario_name;
  std::string config_path;
  std::optional<std::uint64_t> seed_opt;
  std::string out_dir = ".";

  auto* list = app.add_subcommand("list", "List catalog scenarios");

  auto* run = app.add_subcommand("run", "Run one scenario");
  run->add_option("scenario", scenario_name, "Scenario name")->required();
  run->add_option("--config", config_path, "Override file");
  run->add_option("--seed", seed_opt, "Seed (default: MBI_SEED or 0)");
  run->add_option("--out", out_dir, "Output directory");

  std::vector<std::size_t> bench_n = {100, 1000, 10000, 100000, 1000000};
  int bench_cycles = 20;
  int bench_reps = 5;
  auto* bench = app.add_subcommand("bench", "Per-cycle timing over agent counts");
  bench->add_option("--n", bench_n, "Comma-separated agent counts")->delimiter(',');
  bench->add_option("--cycles", bench_cycles, "Timed cycles per repetition");
  bench->add_option("--reps", bench_reps, "Repetitions per n");
  bench->add_option("--seed", seed_opt, "Seed");
  bench->add_option("--out", out_dir, "Output directory");

  std::string prior_spec;
  int audit_samples = 10000;
  auto* audit = app.add_subcommand("audit", "Bayesian truthfulness audit");
  audit->add_option("scenario", scenario_name, "Scenario name")->required();
  audit->add_option("--prior", prior_spec, "uniform:lo,hi | point:v | discrete:v@p,...")->required();
  audit->add_option("--samples", audit_samples, "Monte-Carlo samples");
  audit->add_option("--config", config_path, "Override file");
  audit->add_option("--seed", seed_opt, "Seed");
  audit->add_option("--out", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    const std::filesystem::path dir(out_dir);
    if (list->parsed()) {
      for (const auto& s : catalog()) out << s.name << "\t" << s.summary << "\n";
      return 0;
    }
    if (bench->parsed()) {
      const BenchResult r = bench_scaling(bench_n, bench_cycles, seed_opt ? *seed_opt : default_seed(0), bench_reps);
      const std::string csv = bench_csv(r);
      write_file(dir / "bench.csv", csv);
      out << csv;
      out << "slope: " << (r.slope ? format_real(*r.slope) : std::string("absent")) << "\n";
      return 0;
    }

    ScenarioSpec spec = find_scenario(scenario_name);
    if (!config_path.empty()) apply_config(spec, load_config(config_path));
    const std::uint64_t seed = seed_opt ? *seed_opt : default_seed(spec.seed);

    if (run->parsed()) {
      const ScenarioReport report = run_scenario(spec, seed);
      const std::vector<std::pair<std::string, std::string>> extra = {{"scenario", spec.name},
                                                                      {"seed", std::to_string(seed)}};
      emit_trace_csv(report.run, dir / "trace.csv");
      emit_summary(report, dir / "summary.txt", extra);
      out << summary_text(report, extra);
      return 0;
    }

    const TypePrior prior = TypePrior::parse(prior_spec);
    std::string table;
    auto lines = run_audit(spec, prior, audit_samples, seed, table);
    write_file(dir / "audit.csv", table);
    std::string text;
    for (const auto& [k, v] : lines) text += k + ": " + v + "\n";
    write_file(dir / "audit_summary.txt", text);
    out << text;
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mbi
