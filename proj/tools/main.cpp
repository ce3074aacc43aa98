#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sboxsim/attack.hpp"
#include "sboxsim/bench.hpp"
#include "sboxsim/fixture.hpp"
#include "sboxsim/harness.hpp"

namespace fs = std::filesystem;
using namespace sboxsim;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HarnessError{2, "cannot open " + path};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_out(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessError{1, "cannot write " + path};
  out << text << "\n";
}

AblationFlags resolve_ablation(const std::string& name) {
  if (name.empty()) return {};
#ifndef SBOXSIM_ABLATIONS
  throw HarnessError{2, "--ablate requires a build with SBOXSIM_ABLATIONS"};
#endif
  return ablation_by_name(name);
}

int cmd_run(const std::string& config_path, const std::string& report_path,
            std::uint64_t seed, bool trace_access) {
  const std::string base = fs::path(config_path).parent_path().string();
  RunConfig cfg = load_run_config(slurp(config_path), base);
  TraceSink sink;
  if (trace_access) {
    sink = [](const std::string& line) { std::cerr << line << "\n"; };
  }
  ReplayResult res = run_replay(cfg, seed, sink);
  write_out(report_path, res.report_json);
  return 0;
}

int cmd_check_policy(const std::string& path) {
  auto result = load_policy(slurp(path));
  if (const auto* err = std::get_if<PolicyParseError>(&result)) {
    std::cerr << "parse error at line " << err->line << ": " << err->reason
              << "\n";
    return 1;
  }
  const Policy& p = std::get<Policy>(result);
  std::cout << render_policy(p);
  std::cout << "digest: " << to_hex(p.digest) << "\n";
  return 0;
}

int cmd_bench_channel(const std::vector<std::size_t>& sizes,
                      std::uint64_t iters, std::uint64_t seed,
                      const std::string& report_path) {
  BenchReport rep =
      bench_channel(sizes.empty() ? kDefaultBenchSizes : sizes, iters, seed);
  std::cout << rep.to_csv();
  if (!report_path.empty()) write_out(report_path, rep.to_json());
  return 0;
}

int cmd_attack_suite(const std::string& scenario_path,
                     const std::string& ablate,
                     const std::string& report_path) {
  std::vector<AttackScenario> scenarios;
  if (fs::is_directory(scenario_path)) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(scenario_path)) {
      if (e.path().extension() == ".json") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) {
      for (auto& s : parse_scenarios(slurp(f))) {
        scenarios.push_back(std::move(s));
      }
    }
    if (scenarios.empty()) {
      throw HarnessError{2, "no scenario files in " + scenario_path};
    }
  } else if (fs::is_regular_file(scenario_path)) {
    scenarios = parse_scenarios(slurp(scenario_path));
  } else {
    throw HarnessError{2, "scenario path not found: " + scenario_path};
  }

  const AblationFlags flags = resolve_ablation(ablate);
  SuiteReport suite = full_table_suite(
      scenarios, [&flags] { return make_default_fixture(flags); });
  std::cout << suite.to_table();
  if (!suite.all_blocked()) {
    std::cout << "unblocked rows:";
    for (const SuiteRow& r : suite.rows) {
      if (!r.blocked) std::cout << " " << r.row;
    }
    std::cout << "\n";
  }
  if (!report_path.empty()) write_out(report_path, suite.to_json());
  return suite.all_blocked() ? 0 : 1;
}

int cmd_dump_state(const std::string& config_path, const std::string& ablate,
                   const std::string& report_path, std::uint64_t seed) {
  std::string dump;
  if (config_path.empty()) {
    Fixture fx = make_default_fixture(resolve_ablation(ablate));
    dump = fx.machine->dump_json();
  } else {
    const std::string base = fs::path(config_path).parent_path().string();
    RunConfig cfg = load_run_config(slurp(config_path), base);
    dump = run_replay(cfg, seed).machine_dump_json;
  }
  write_out(report_path, dump);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bi-enclave sandbox machine simulator"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string report_path;
  std::uint64_t seed = 0;
  bool trace_access = false;
  std::string ablate;
  app.add_option("--report", report_path, "write the report to this path");
  app.add_option("--seed", seed, "deterministic seed");
  app.add_flag("--trace-access", trace_access,
               "emit per-access trace records on stderr");
  app.add_option("--ablate", ablate,
                 "disable one check: bi-confinement|owner-check|eexit-abort");

  std::string run_config;
  auto* run = app.add_subcommand("run", "replay a syscall/memory trace");
  run->add_option("config", run_config, "run-config JSON")->required();

  std::string policy_path;
  auto* checkp = app.add_subcommand("check-policy", "validate a policy file");
  checkp->add_option("policy", policy_path, "policy file")->required();

  std::vector<std::size_t> sizes;
  std::uint64_t iters = 5000;
  auto* bench = app.add_subcommand("bench-channel",
                                   "time shared-page vs encrypted transport");
  bench->add_option("--sizes", sizes, "chunk sizes in bytes");
  bench->add_option("--iters", iters, "iterations per size (>= 1000)");

  std::string scenario_path = "scenarios";
  auto* suite = app.add_subcommand("attack-suite",
                                   "run the security-table scenarios");
  suite->add_option("--scenarios", scenario_path, "scenario file or directory");

  std::string dump_config;
  auto* dump = app.add_subcommand("dump-state", "print the machine state");
  dump->add_option("config", dump_config,
                   "optional run-config; default fixture otherwise");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(run_config, report_path, seed, trace_access);
    }
    if (checkp->parsed()) return cmd_check_policy(policy_path);
    if (bench->parsed()) {
      return cmd_bench_channel(sizes, iters, seed, report_path);
    }
    if (suite->parsed()) {
      return cmd_attack_suite(scenario_path, ablate, report_path);
    }
    if (dump->parsed()) {
      return cmd_dump_state(dump_config, ablate, report_path, seed);
    }
  } catch (const HarnessError& e) {
    std::cerr << "error: " << e.diagnostic << "\n";
    return e.exit_code;
  } catch (const BenchArgsError& e) {
    std::cerr << "usage error: " << e.reason << "\n";
    return 2;
  } catch (const ScenarioError& e) {
    std::cerr << "error: " << e.reason << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.reason << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
