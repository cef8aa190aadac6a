#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spde/forward_sim.hpp"

namespace spde::harness {

inline constexpr const char* kToolName = "spde-bridge";
inline constexpr const char* kToolVersion = "0.1.0";

/// Schema violation; the message starts with the offending field path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Task names accepted in task.kind.
const std::vector<std::string>& task_kinds();

/// Validates a scenario and returns it with every default filled in and every
/// randomized choice (e.g. random test functions) materialized. Idempotent.
nlohmann::json resolve_scenario(const nlohmann::json& scenario);

nlohmann::json load_json(const std::filesystem::path& file);

struct RunOptions {
  std::filesystem::path out_dir;  // empty: use output.directory from the scenario
  unsigned threads = 1;
  bool assert_mode = false;
};

struct RunResult {
  std::filesystem::path out_dir;
  std::vector<std::string> assertion_failures;
};

/// Runs one scenario and writes manifest.json, summary.csv and
/// diagnostics.json (plus paths.spdb / weights.csv when requested).
RunResult run_scenario(const nlohmann::json& scenario, const RunOptions& options);

struct SummaryRow {
  std::string quantity;
  int mode = -1;              // -1 when not per-mode
  double time = 0.0;          // requested observation time
  double node_time = 0.0;     // grid node actually used
  double value = 0.0;
  double stderr_ = 0.0;
  double reference = 0.0;     // NaN when no closed form exists
  std::string unit;
  std::string provenance;
};

std::vector<SummaryRow> read_summary(const std::filesystem::path& csv);

struct CompareReport {
  bool pass = true;
  std::size_t cells = 0;
  std::vector<std::string> failures;
  nlohmann::json to_json() const;
};

/// Cell-by-cell comparison of two runs' summary tables. Tolerance document:
///   {"abs": a, "rel": r, "stderr_multiplier": k, "quantities": [...]}
/// A cell passes when |va - vb| <= a + r max(|va|,|vb|) + k sqrt(sa^2 + sb^2).
CompareReport compare_runs(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                           const nlohmann::json& tolerances);

/// Binary path dump: "SPDB", u32 version, u32 J, u32 nodes, u32 paths, then
/// little-endian f64 grid nodes, per-path states (node-major, mode-minor),
/// per-path increments (step-major, mode-minor).
inline constexpr std::uint32_t kDumpVersion = 1;

struct PathDump {
  std::uint32_t J = 0;
  std::vector<double> nodes;
  std::vector<std::vector<Field>> states;
  std::vector<std::vector<std::vector<double>>> increments;
};

void write_path_dump(const std::filesystem::path& file, const std::vector<Path>& paths);
PathDump read_path_dump(const std::filesystem::path& file);

}  // namespace spde::harness
