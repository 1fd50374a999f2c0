#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seedflood/simulator.hpp"

namespace seedflood {

/// A validated batch of runs: explicit variants or a base config expanded
/// over sweep axes and replicate seeds.
struct ExperimentSpec {
  std::vector<std::pair<std::string, RunConfig>> variants;  // (name, config)
  std::string out_dir = "results";
};

/// Parse one run configuration object. `prefix` is prepended to key paths
/// in diagnostics. Unknown keys, type mismatches, and invariant violations
/// throw ConfigError naming the offending path.
RunConfig parse_run_config(const nlohmann::json& j, const std::string& prefix);

/// Structural validation that needs the topology: k <= D for seedflood,
/// tau <= T, rank within every 2D layer dimension.
void validate_run_config(const RunConfig& config);

/// Load either a single run config or an experiment file (with "base" /
/// "sweep" / "seeds" or explicit "runs"). Every variant is validated
/// before this returns.
ExperimentSpec parse_config(const std::string& path);

/// Serialize a config back to its JSON schema form.
nlohmann::json run_config_to_json(const RunConfig& config);

/// Per-iteration metrics CSV; columns documented in the README.
std::string metrics_csv(const RunResult& result);

/// Summary object for one finished run (final losses, GMP, traffic totals,
/// operation counters).
nlohmann::json run_summary_json(const std::string& name,
                                const RunConfig& config,
                                const RunResult& result);

/// Run every variant (up to `jobs` in parallel), write per-variant metrics
/// and ledger CSVs plus summary.json and manifest.json under `out_dir`.
/// Returns 0 iff every variant completed.
int execute(const ExperimentSpec& spec, const std::string& out_dir,
            size_t jobs);

}  // namespace seedflood
