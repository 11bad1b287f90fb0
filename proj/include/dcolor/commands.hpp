#pragma once

#include "dcolor/evaluation.hpp"
#include "dcolor/training.hpp"

#include <string>
#include <vector>

namespace dcolor {

// Artifact names inside a run directory (cfg.outputDir).
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTargetFile = "target.bin";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kEvalFile = "eval.csv";
inline constexpr const char* kDiagnosticsFile = "diagnostics.csv";
inline constexpr const char* kDiagnosticsSvg = "diagnostics.svg";
inline constexpr const char* kSweepFile = "sweep.csv";

std::string runPath(const ExperimentConfig& cfg, const std::string& file);

// Each command writes under cfg.outputDir and returns a one-line summary.
std::string commandComputeTarget(const ExperimentConfig& cfg);
std::string commandPretrain(const ExperimentConfig& cfg, bool resume);
std::string commandEval(const ExperimentConfig& cfg, EvalResult* result = nullptr);
std::string commandDiagnose(const ExperimentConfig& cfg, bool svg);
std::string commandSweep(const ExperimentConfig& cfg, const std::string& axis, const std::vector<std::string>& values);

// Resolved config plus digests; re-running from it reproduces the run.
void writeManifest(const ExperimentConfig& cfg, const std::string& command);

} // namespace dcolor
