// spde-bridge: run scenarios and compare their summary tables.
//
// Exit codes: 0 ok, 1 usage or schema error, 2 numerical-domain error,
// 3 assertion failure (including a failed comparison).

#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "spde/harness.hpp"
#include "spde/spectral_core.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDomain = 2;
constexpr int kAssert = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace spde;
  CLI::App app{"Guided bridge sampling for diagonal stochastic heat equations"};
  app.set_version_flag("--version", std::string(harness::kToolVersion));
  app.require_subcommand(1);

  std::string scenario_file, out_dir;
  unsigned threads = 1;
  bool assert_mode = false;
  auto* run = app.add_subcommand("run", "Run one scenario");
  run->add_option("scenario", scenario_file, "Scenario JSON")->required();
  run->add_option("--out", out_dir, "Output directory (overrides output.directory)");
  run->add_option("--threads", threads, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  run->add_flag("--assert", assert_mode, "Check outputs against closed forms; exit 3 on failure");

  std::string dir_a, dir_b, tol_file;
  auto* cmp = app.add_subcommand("compare", "Compare two runs' summary tables");
  cmp->add_option("dirA", dir_a)->required();
  cmp->add_option("dirB", dir_b)->required();
  cmp->add_option("tolerances", tol_file, "Tolerance JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) {
      const auto result =
          harness::run_scenario(harness::load_json(scenario_file), {out_dir, threads, assert_mode});
      for (const auto& f : result.assertion_failures) std::cerr << "assertion failed: " << f << '\n';
      std::cout << result.out_dir.string() << '\n';
      return result.assertion_failures.empty() ? kOk : kAssert;
    }
    const auto report = harness::compare_runs(dir_a, dir_b, harness::load_json(tol_file));
    std::cout << report.to_json().dump(2) << '\n';
    return report.pass ? kOk : kAssert;
  } catch (const harness::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DomainError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDomain;
  }
}
