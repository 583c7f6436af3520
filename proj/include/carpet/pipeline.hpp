#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "carpet/geometry.hpp"
#include "carpet/scaling.hpp"
#include "carpet/spec_io.hpp"

namespace carpet {

inline constexpr const char* kArtifactVersion = "1.0.0";

/// Process exit codes shared by the pipeline and the command line.
enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,       // configuration, domain or dependency error
  kExitValidation = 2,  // carpet fails an axiom
  kExitSolver = 3,
  kExitAssertion = 4,
};

enum class CachePolicy { Use, Refresh, Off };
CachePolicy parse_cache_policy(const std::string& s);

struct StageConfig {
  std::string op;
  json params = json::object();  // normalised: every parameter present
  json checks = json::object();  // JSON pointer into the payload -> {"min", "max", "equals"}
};

struct ExperimentConfig {
  std::string carpet_name;  // preset name or "custom"
  CarpetSpec carpet;
  std::vector<StageConfig> stages;
  std::string output_dir = "results";
  CachePolicy cache = CachePolicy::Use;
  std::string cache_dir;  // empty: <output_dir>/cache
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

/// Strict parse: unknown keys at any level and out-of-range parameters raise
/// ConfigError before anything is computed.
ExperimentConfig parse_config(const json& j);
ExperimentConfig load_config(const std::string& path);

/// Stage names accepted by the pipeline and their module.
std::vector<std::string> stage_names();
std::string stage_module(const std::string& op);

/// Fills defaults and checks every parameter of `op`. `seed` is the default
/// for stages that draw random numbers.
json normalize_params(const std::string& op, const json& params, std::uint64_t seed = 1);

/// Quantities passed from earlier stages to later ones.
struct StageContext {
  std::optional<double> rho_hat;
  std::optional<double> beta0;
  std::optional<GammaReport> gamma;
  unsigned threads = 1;

  /// Upstream values consumed by `op` (part of the cache key).
  json inputs(const std::string& op) const;
  /// Picks up the values published by a finished stage.
  void absorb(const std::string& op, const json& payload);
};

struct StageResult {
  json payload;
  json residuals = json::array();
};

/// Runs one stage with normalised parameters.
StageResult run_stage(const Carpet& carpet, const std::string& op, const json& params, StageContext& ctx);

struct ResultEnvelope {
  std::string spec_hash;
  std::string module;
  std::string op;
  json params;
  json inputs;
  json payload;
  double wall_time = 0.0;
  std::string version = kArtifactVersion;
  json residuals = json::array();
  bool cache_hit = false;
};

json envelope_to_json(const ResultEnvelope& e);
/// Throws ConfigError when a required field is missing or mistyped.
ResultEnvelope envelope_from_json(const json& j);

/// SHA-256 of the canonical JSON of (spec hash, op, params, inputs, version).
std::string cache_key(const std::string& spec_hash, const std::string& op, const json& params, const json& inputs);

/// Messages for every failed check; empty when all pass.
std::vector<std::string> check_assertions(const json& payload, const json& checks);

struct StageOutcome {
  std::string op;
  std::string file;
  bool cached = false;
  bool ok = true;
  std::string message;
};

struct PipelineResult {
  int exit_code = kExitOk;
  std::vector<StageOutcome> stages;
  std::size_t computed = 0;
  std::size_t cache_hits = 0;
};

PipelineResult run_pipeline(const ExperimentConfig& config, std::ostream& log);

/// Writes `contents` to `path` through a temporary file and rename.
void write_atomic(const std::string& path, const std::string& contents);

// ---------------------------------------------------------------------------
// Reports over a result directory

struct ReportSummary {
  json machine;  // {"groups": {spec_hash: {...}}, "corrupt": [...]}
  std::string text;
  std::vector<std::string> corrupt;
};

/// Reads every *.json envelope directly inside `dir` (sorted by name).
ReportSummary build_report(const std::string& dir);

}  // namespace carpet
