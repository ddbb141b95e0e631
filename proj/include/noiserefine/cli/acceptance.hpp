#pragma once

#include "noiserefine/cli/run_config.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace nr {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  RunConfig config;
  std::filesystem::path work_dir = "accept_run";
  /// Criterion ids to run; empty runs all eleven.
  std::vector<int> only;
  /// Progress messages; null keeps quiet.
  std::ostream* log = nullptr;
};

struct AcceptanceReport {
  std::vector<CriterionResult> results;
  /// Machine-readable dump including per-batch and per-seed measurements.
  std::string json;

  bool all_passed() const;
};

/// "PASS  [ 7] name: detail" style line.
std::string format_result(const CriterionResult& r);

/// Runs the property suite. The trained base model is cached in the work
/// directory under a name derived from the settings that affect it.
AcceptanceReport run_acceptance(const AcceptanceOptions& opts);

}  // namespace nr
